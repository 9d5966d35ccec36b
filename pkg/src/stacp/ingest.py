"""Check-in parsing, temporal states, chronological splits and frequency matrices."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

logger = logging.getLogger(__name__)

WORKING = "WORKING"
LEISURE = "LEISURE"

FIELDS = ("user", "poi", "timestamp", "lat", "lon")


@dataclass(frozen=True, slots=True)
class CheckIn:
    user_id: str
    poi_id: str
    timestamp: int
    lat: float
    lon: float


# ---------------------------------------------------------------------------
# formats

@dataclass(frozen=True)
class DatasetFormat:
    """Column layout of a check-in text file.

    ``columns`` names the position of each field; unknown names
    (e.g. ``"skip"``) are ignored.
    """

    columns: tuple[str, ...] = FIELDS
    delimiter: str = "\t"
    header: bool = False

    def __post_init__(self):
        missing = [f for f in FIELDS if f not in self.columns]
        if missing:
            raise ValueError(f"format lacks columns: {', '.join(missing)}")


PROFILES = {
    # SNAP loc-gowalla_totalCheckins.txt: user, ISO time, lat, lon, location id
    "gowalla": DatasetFormat(("user", "timestamp", "lat", "lon", "poi")),
    "foursquare": DatasetFormat(("user", "poi", "timestamp", "lat", "lon")),
    "custom": DatasetFormat(),
}

STANDARD_FORMAT = PROFILES["custom"]


def resolve_format(profile: str, columns: Sequence[str] | None = None,
                   delimiter: str | None = None, header: bool | None = None) -> DatasetFormat:
    try:
        base = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown dataset profile {profile!r}; expected one of {sorted(PROFILES)}") from None
    return DatasetFormat(
        tuple(columns) if columns else base.columns,
        base.delimiter if delimiter is None else delimiter,
        base.header if header is None else header,
    )


def parse_timestamp(text: str) -> int:
    """Epoch seconds or ISO-8601; naive ISO times are read as UTC."""
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    if not math.isfinite(value):
        raise ValueError("non-finite timestamp")
    return int(math.floor(value))


@dataclass
class ParseResult:
    checkins: list[CheckIn]
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.checkins)


def parse_checkins(path: str | Path, fmt: DatasetFormat = STANDARD_FORMAT) -> ParseResult:
    """Read every well-formed row of a check-in file.

    Rejected rows are tallied by reason; repeated (user, poi, time) rows
    are kept because revisits carry frequency.
    """
    path = Path(path)
    pos = {name: fmt.columns.index(name) for name in FIELDS}
    width = max(pos.values()) + 1
    checkins: list[CheckIn] = []
    reasons: Counter = Counter()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        if fmt.header:
            next(reader, None)
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < width:
                reasons["short row"] += 1
                continue
            try:
                lat = float(row[pos["lat"]])
                lon = float(row[pos["lon"]])
            except ValueError:
                reasons["bad coordinate"] += 1
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                reasons["coordinate out of range"] += 1
                continue
            try:
                ts = parse_timestamp(row[pos["timestamp"]])
            except (ValueError, OverflowError, OSError):
                reasons["bad timestamp"] += 1
                continue
            user, poi = row[pos["user"]].strip(), row[pos["poi"]].strip()
            if not user or not poi:
                reasons["empty id"] += 1
                continue
            checkins.append(CheckIn(user, poi, ts, lat, lon))
    rejected = sum(reasons.values())
    if rejected:
        logger.warning("%s: rejected %d rows (%s)", path, rejected,
                       ", ".join(f"{k}: {v}" for k, v in sorted(reasons.items())))
    if not checkins:
        raise DataError(f"{path}: no valid check-ins ({rejected} rejected)")
    return ParseResult(checkins, rejected, reasons)


def write_checkins(path: str | Path, checkins: Iterable[CheckIn]) -> None:
    """Write check-ins in the standard tab-separated layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in checkins:
            fh.write(f"{c.user_id}\t{c.poi_id}\t{int(c.timestamp)}\t{float(c.lat)!r}\t{float(c.lon)!r}\n")


# ---------------------------------------------------------------------------
# temporal states

@dataclass(frozen=True)
class BusinessHoursPolicy:
    """WORKING on ``workdays`` between ``start_hour`` (inclusive) and
    ``end_hour`` (exclusive), LEISURE otherwise. Clock time is read from the
    timestamp as recorded (UTC epoch), without timezone inference."""

    start_hour: int = 8
    end_hour: int = 18
    workdays: frozenset = frozenset(range(5))
    states: tuple[str, str] = (WORKING, LEISURE)

    def __post_init__(self):
        if not 0 <= self.start_hour < self.end_hour <= 24:
            raise ValueError("need 0 <= start_hour < end_hour <= 24")

    def __call__(self, timestamp: int) -> str:
        days, secs = divmod(int(timestamp), 86400)
        weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
        hour = secs // 3600
        if weekday in self.workdays and self.start_hour <= hour < self.end_hour:
            return self.states[0]
        return self.states[1]


@dataclass(frozen=True)
class WeekdayWeekendPolicy:
    states: tuple[str, str] = ("WEEKDAY", "WEEKEND")

    def __call__(self, timestamp: int) -> str:
        weekday = (int(timestamp) // 86400 + 3) % 7
        return self.states[0] if weekday < 5 else self.states[1]


StatePolicy = Callable[[int], str]

DEFAULT_POLICY = BusinessHoursPolicy()


def assign_temporal_state(c: CheckIn, policy: StatePolicy = DEFAULT_POLICY) -> str:
    return policy(c.timestamp)


# ---------------------------------------------------------------------------
# catalogs and splits

class Catalog:
    """Bidirectional id <-> dense index map, in first-seen order."""

    def __init__(self, ids: Iterable[str] = ()):
        self.ids: list[str] = []
        self.index: dict[str, int] = {}
        for i in ids:
            self.add(i)

    def add(self, id_: str) -> int:
        idx = self.index.get(id_)
        if idx is None:
            idx = self.index[id_] = len(self.ids)
            self.ids.append(id_)
        return idx

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, id_: str) -> int:
        return self.index[id_]

    def __contains__(self, id_):
        return id_ in self.index

    def __eq__(self, other):
        return isinstance(other, Catalog) and self.ids == other.ids


def group_by_user(checkins: Iterable[CheckIn]) -> dict[str, list[CheckIn]]:
    """Per-user lists sorted by timestamp; equal timestamps keep input order."""
    groups: dict[str, list[CheckIn]] = defaultdict(list)
    for c in checkins:
        groups[c.user_id].append(c)
    return {u: sorted(cs, key=lambda c: c.timestamp) for u, cs in groups.items()}


@dataclass
class DatasetSplit:
    train: dict[str, list[CheckIn]]
    validation: dict[str, list[CheckIn]]
    test: dict[str, list[CheckIn]]
    users: Catalog
    pois: Catalog
    coords: np.ndarray  # (n_pois, 2) lat, lon
    flagged: set[str] = field(default_factory=set)

    def part(self, name: str) -> dict[str, list[CheckIn]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


def poi_coordinates(checkins: Iterable[CheckIn], pois: Catalog) -> np.ndarray:
    """First-seen coordinates of every catalogued POI."""
    coords = np.full((len(pois), 2), np.nan)
    for c in checkins:
        i = pois.index.get(c.poi_id)
        if i is not None and np.isnan(coords[i, 0]):
            coords[i] = c.lat, c.lon
    return coords


def split_sizes(n: int, ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """(train, validation, test) sizes; floor for train and test."""
    if n < 3:
        return (n - 1, 0, 1) if n == 2 else (n, 0, 0)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    return n_train, n - n_train - n_test, n_test


def chronological_split(checkins: Iterable[CheckIn] | Mapping[str, list[CheckIn]],
                        ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> DatasetSplit:
    """Split every user's history into earliest / middle / most recent parts.

    Catalogs are built over the full input so that every part indexes
    into the same POI and user space. Users with fewer than three
    check-ins are flagged.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    if isinstance(checkins, Mapping):
        per_user = {u: sorted(cs, key=lambda c: c.timestamp) for u, cs in checkins.items()}
    else:
        per_user = group_by_user(checkins)
    users, pois = Catalog(), Catalog()
    train, val, test = {}, {}, {}
    flagged = set()
    all_checkins = []
    for user, cs in per_user.items():
        if not cs:
            raise ValueError(f"user {user!r} has no check-ins")
        users.add(user)
        for c in cs:
            pois.add(c.poi_id)
        all_checkins.extend(cs)
        n_train, n_val, n_test = split_sizes(len(cs), ratios)
        if len(cs) < 3:
            flagged.add(user)
        train[user] = cs[:n_train]
        val[user] = cs[n_train:n_train + n_val]
        test[user] = cs[n_train + n_val:]
    return DatasetSplit(train, val, test, users, pois, poi_coordinates(all_checkins, pois), flagged)


# ---------------------------------------------------------------------------
# matrices

@dataclass(frozen=True)
class InteractionMatrix:
    """Sparse user x POI visit counts (CSR, int64)."""

    counts: sp.csr_matrix

    @property
    def n_users(self) -> int:
        return self.counts.shape[0]

    @property
    def n_pois(self) -> int:
        return self.counts.shape[1]

    @property
    def shape(self):
        return self.counts.shape

    @property
    def nnz(self) -> int:
        return self.counts.nnz

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=0)).ravel()

    def profile(self, u: int) -> dict[int, int]:
        """POI index -> frequency for one user."""
        start, end = self.counts.indptr[u], self.counts.indptr[u + 1]
        return dict(zip(self.counts.indices[start:end].tolist(), self.counts.data[start:end].tolist()))

    def visited(self, u: int) -> np.ndarray:
        return self.counts.indices[self.counts.indptr[u]:self.counts.indptr[u + 1]]

    def toarray(self) -> np.ndarray:
        return self.counts.toarray()

    @classmethod
    def from_dense(cls, dense) -> "InteractionMatrix":
        m = sp.csr_matrix(np.asarray(dense, dtype=np.int64))
        m.eliminate_zeros()
        return cls(m)


def build_matrix(part: Mapping[str, Iterable[CheckIn]] | Iterable[CheckIn], users: Catalog, pois: Catalog,
                 state: str | None = None, policy: StatePolicy = DEFAULT_POLICY) -> InteractionMatrix:
    """Count check-ins per (user, POI), optionally keeping only one temporal state."""
    if isinstance(part, Mapping):
        part = (c for cs in part.values() for c in cs)
    rows, cols = [], []
    for c in part:
        if state is not None and policy(c.timestamp) != state:
            continue
        try:
            rows.append(users[c.user_id])
            cols.append(pois[c.poi_id])
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]!r} missing from catalog") from None
    data = np.ones(len(rows), dtype=np.int64)
    m = sp.coo_matrix((data, (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
                      shape=(len(users), len(pois))).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return InteractionMatrix(m)


def build_state_matrices(part, users: Catalog, pois: Catalog, policy=DEFAULT_POLICY,
                         states: Sequence[str] | None = None) -> dict[str, InteractionMatrix]:
    states = states or policy.states
    return {s: build_matrix(part, users, pois, s, policy) for s in states}


# ---------------------------------------------------------------------------
# persistence

def write_catalog(path: str | Path, users: Catalog, pois: Catalog, coords: np.ndarray | None = None) -> None:
    """One mapping per line: ``kind<TAB>id<TAB>index`` (POI lines add lat, lon)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, u in enumerate(users.ids):
            fh.write(f"user\t{u}\t{i}\n")
        for i, p in enumerate(pois.ids):
            if coords is None:
                fh.write(f"poi\t{p}\t{i}\n")
            else:
                fh.write(f"poi\t{p}\t{i}\t{float(coords[i, 0])!r}\t{float(coords[i, 1])!r}\n")


def read_catalog(path: str | Path) -> tuple[Catalog, Catalog, np.ndarray]:
    users, pois, coords = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "user":
                users.append((int(parts[2]), parts[1]))
            elif parts[0] == "poi":
                pois.append((int(parts[2]), parts[1]))
                coords.append((float(parts[3]), float(parts[4])) if len(parts) >= 5 else (np.nan, np.nan))
    order = np.argsort([i for i, _ in pois], kind="stable")
    return (Catalog(u for _, u in sorted(users)), Catalog(p for _, p in sorted(pois)),
            np.asarray(coords, dtype=float).reshape(-1, 2)[order])


def write_split(split: DatasetSplit, outdir: str | Path) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test"):
        write_checkins(outdir / f"{name}.tsv", (c for cs in split.part(name).values() for c in cs))
    write_catalog(outdir / "catalog.tsv", split.users, split.pois, split.coords)


def read_split(outdir: str | Path) -> DatasetSplit:
    outdir = Path(outdir)
    users, pois, coords = read_catalog(outdir / "catalog.tsv")
    parts = {}
    for name in ("train", "validation", "test"):
        path = outdir / f"{name}.tsv"
        grouped = {u: [] for u in users.ids}
        if path.stat().st_size:
            for c in parse_checkins(path).checkins:
                grouped[c.user_id].append(c)
        parts[name] = grouped
    flagged = {u for u in users.ids
               if len(parts["train"][u]) + len(parts["validation"][u]) + len(parts["test"][u]) < 3}
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], users, pois, coords, flagged)
