"""Shared fixtures for knobtune tests"""

import shutil
import tempfile
from pathlib import Path

import pytest

from controller import ControllerSettings
from simulator.scenario import PhaseSpec, Scenario, load_scenario
from simulator.surfaces import Tabulated
from tuning.knobspace import KnobDimension, KnobSpace
from utils.models import ConstraintSpec, ObjectiveSpec, OptimizationSpec

TRANSCRIPTS_DIR = Path(__file__).parent / "transcripts"


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test output"""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture
def in_temp_dir(temp_dir, monkeypatch):
    """Run the test with the temp dir as working directory"""
    monkeypatch.chdir(temp_dir)
    return temp_dir


@pytest.fixture
def small_space():
    """3 x 4 x 5 grid, default in the middle"""
    return KnobSpace(
        dimensions=[
            KnobDimension(name="cores", values=[1, 2, 4]),
            KnobDimension(name="freq", values=[600, 1000, 1400, 1800]),
            KnobDimension(name="batch", values=[1, 2, 4, 8, 16]),
        ],
        default=(1, 2, 3),
    )


@pytest.fixture
def power_spec():
    """maximize fps subject to power below 5"""
    return OptimizationSpec(
        objective=ObjectiveSpec(metric="fps", direction="maximize"),
        constraints=[ConstraintSpec(metric="power", set_point=5.0, direction="below")],
    )


@pytest.fixture
def unconstrained_spec():
    return OptimizationSpec(objective=ObjectiveSpec(metric="fps"))


def tabulated_scenario(objective, constraint=None, set_point=7.0, lengths=(40,), noise_cv=0.0):
    """1-d scenario whose metrics come straight from per-setting tables (one table per phase)"""
    n = len(objective[0])
    space = KnobSpace(dimensions=[KnobDimension(name="k", values=list(range(1, n + 1)))], default=(0,))
    phases = []
    for i, length in enumerate(lengths):
        constraints = []
        if constraint is not None:
            constraints = [Tabulated(metric="power", set_point=set_point, direction="below", values=constraint[i])]
        phases.append(PhaseSpec(
            length_intervals=length,
            objective=Tabulated(metric="fps", direction="maximize", values=objective[i]),
            constraints=constraints,
        ))
    return Scenario(space=space, phases=phases, noise_cv=noise_cv)


@pytest.fixture
def three_setting_scenario():
    """o = (10, 6, 7), c = (8, 5, 6.5), power below 7: the third setting is optimal"""
    return tabulated_scenario([[10.0, 6.0, 7.0]], [[8.0, 5.0, 6.5]])


@pytest.fixture(scope="session")
def board():
    return load_scenario("heterogeneous-board")


@pytest.fixture(scope="session")
def quiet_board(board):
    """heterogeneous board with measurement noise switched off"""
    return board.model_copy(update={"noise_cv": 0.0})


@pytest.fixture(scope="session")
def big_server():
    return load_scenario("big-server")


@pytest.fixture(scope="session")
def video():
    return load_scenario("two-phase-video")


@pytest.fixture
def fast_settings():
    """small budget so end-to-end sessions stay quick"""
    return ControllerSettings(n_rounds=8, seed=3)


def pytest_addoption(parser):
    parser.addoption("--acceptance", action="store_true", default=False,
                     help="also run the 40-seed benchmark comparisons")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: 40-seed benchmark comparison, opt in with --acceptance")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--acceptance", default=False):
        return
    skip = pytest.mark.skip(reason="benchmark comparison, run with --acceptance")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)
