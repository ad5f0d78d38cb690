import numpy as np
import pytest

from droopstab import GridSystem, load_config, reference_path, solve_equilibrium
from droopstab.config import load_slopes
from droopstab.pipeline import SlopeStudy


@pytest.fixture(scope="session")
def ref_config():
    return load_config(reference_path())


@pytest.fixture(scope="session")
def study(ref_config):
    return SlopeStudy(ref_config)


@pytest.fixture(scope="session")
def grid(study):
    return study.grid


@pytest.fixture(scope="session")
def op(study):
    return study.operating_point


@pytest.fixture(scope="session")
def model(study):
    return study.model


@pytest.fixture(scope="session")
def case_slopes(study):
    return {
        name: np.array(load_slopes(reference_path(f"{name}.json"), study.axes))
        for name in ("case1", "case2")
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
