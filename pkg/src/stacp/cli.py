"""Command-line entry point.

    stacp evaluate --config exp.cfg --lambda 0.5 --out results/
    stacp sweep --config exp.cfg --sweep lambda=0,0.25,0.5,0.75,1
    stacp synth --users 50 --pois 200 --output data/synth.tsv

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, from_mapping, load_config
from .errors import ConfigError, StacpError

logger = logging.getLogger("stacp")

STAGES = ("ingest", "split", "train", "recommend", "evaluate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--dataset", help="check-in file (overrides dataset_path)")
    p.add_argument("--profile", help="dataset profile: gowalla, foursquare, custom")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--d", type=float, help="activity region radius, km")
    p.add_argument("--alpha", type=float, help="center frequency-share threshold")
    p.add_argument("--lambda", dest="lam", type=float, help="working-state weight")
    p.add_argument("--k", type=int, help="latent dimension")
    p.add_argument("--methods", help="comma-separated: stacp,no-ctx,no-tc,toppopular,pfm,pfmpd")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stacp", description="Spatio-temporal activity-center POI recommendation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "ingest": "parse the dataset and report row counts",
        "split": "write chronological train/validation/test splits and the catalog",
        "train": "fit factor models and activity centers; write checkpoints",
        "recommend": "write top-N lists for every method",
        "evaluate": "run the full pipeline and write the evaluation report",
    }
    for name in STAGES:
        _common(sub.add_parser(name, help=helps[name]))
    _common(sub.add_parser("run", help="alias for evaluate"))
    sw = sub.add_parser("sweep", help="rerun the pipeline over a grid of one parameter")
    _common(sw)
    sw.add_argument("--sweep", required=True, metavar="AXIS=GRID",
                    help="axis (training-fraction, d, alpha, lambda) and comma-separated values")
    sw.add_argument("--metric", default="ndcg")
    sw.add_argument("--n", type=int, default=20, help="cutoff plotted in the sweep figure")
    sy = sub.add_parser("synth", help="generate a synthetic check-in file with planted centers")
    sy.add_argument("-v", "--verbose", action="count", default=0)
    sy.add_argument("--users", type=int, default=50)
    sy.add_argument("--pois", type=int, default=200)
    sy.add_argument("--centers", type=int, default=2, help="planted centers per state")
    sy.add_argument("--radius", type=float, default=1.0, help="spread of each center, km")
    sy.add_argument("--visits", type=int, default=100, help="check-ins per user")
    sy.add_argument("--area", type=float, default=40.0, help="side of the square region, km")
    sy.add_argument("--working-share", type=float, default=0.5)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--output", "--out", dest="output", required=True)
    return parser


def _config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    for key, dest in (("dataset_path", "dataset"), ("dataset_profile", "profile"), ("seed", "seed"),
                      ("workers", "workers"), ("out", "out"), ("d", "d"), ("alpha", "alpha"), ("lam", "lam"),
                      ("k", "k"), ("methods", "methods")):
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    cfg = load_config(args.config, overrides) if args.config else from_mapping(overrides)
    if not cfg.dataset_path:
        raise ConfigError("invalid configuration:\n  dataset_path: not set")
    return cfg.validate()


def _parse_sweep(text: str):
    axis, sep, grid = text.partition("=")
    values = []
    for v in grid.split(","):
        if v.strip():
            try:
                values.append(float(v))
            except ValueError:
                raise ConfigError(f"--sweep: bad grid value {v!r}") from None
    if not sep or not values:
        raise ConfigError(f"--sweep expects AXIS=v1,v2,..., got {text!r}")
    return axis.strip(), values


def _synth(args) -> int:
    from .synth import SynthSpec, generate_synthetic

    try:
        spec = SynthSpec(users=args.users, pois=args.pois, centers_per_state=args.centers, radius_km=args.radius,
                         visits_per_user=args.visits, seed=args.seed, area_km=args.area,
                         working_share=args.working_share)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = generate_synthetic(spec, args.output)
    print(f"wrote {len(data.checkins)} check-ins for {spec.users} users to {args.output}")
    return 0


def _sweep(args, cfg: ExperimentConfig) -> int:
    from .experiment import SWEEP_AXES, run_sweep
    from .plotting import plot_sweep

    axis, grid = _parse_sweep(args.sweep)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"--sweep: unknown axis {axis!r} (choose {', '.join(SWEEP_AXES)})")
    table = run_sweep(axis, grid, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / f"sweep_{axis}.csv")
    plot_sweep(table, out / f"sweep_{axis}.png", args.metric, args.n)
    for method in dict.fromkeys(r["method"] for r in table.rows):
        pts = ", ".join(f"{v:g}: {m:.4f}" for v, m in table.values(method, args.metric, args.n))
        print(f"{method} {args.metric}@{args.n}  {pts}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = _config(args)
        if args.command == "sweep":
            return _sweep(args, cfg)
        from .experiment import run_experiment

        until = "evaluate" if args.command == "run" else args.command
        report = run_experiment(cfg, until=until)
        if report is not None:
            print(report.format_table(), end="")
        print(f"outputs in {cfg.out}")
        return 0
    except StacpError as exc:
        print(f"stacp: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"stacp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
