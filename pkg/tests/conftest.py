import numpy as np
import pytest

from stacp.synth import SynthSpec, generate_synthetic

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("synth") / "checkins.tsv"
    generate_synthetic(SynthSpec(users=20, pois=100, visits_per_user=40, seed=7), path)
    return path
