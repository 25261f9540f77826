"""Shared, session-cached fixtures. The expensive ones (workspace runs, a
trained classifier) are built once and reused across modules."""

import numpy as np
import pytest

from finray import control, slipnet, tactile, workspace
from finray.kinematics import LinkageGeometry


@pytest.fixture(scope="session")
def geometry():
    return LinkageGeometry()


@pytest.fixture(scope="session")
def ws_runs(geometry):
    """100k samples per mode, seed 0."""
    return {m: workspace.sample_workspace(geometry, m, 100_000, seed=0) for m in (1, 2, 3)}


@pytest.fixture(scope="session")
def ws_pooled(ws_runs):
    return workspace.WorkspaceSampleSet.concat([ws_runs[2], ws_runs[3]])


@pytest.fixture(scope="session")
def slip_data():
    return slipnet.generate_dataset(tactile.TraceSpec(), 2100, 700, seed=0)


@pytest.fixture(scope="session")
def trained(slip_data):
    train, _ = slip_data
    return slipnet.train(train, slipnet.TrainConfig())


@pytest.fixture(scope="session")
def threshold_model():
    return tactile.calibrate_threshold(tactile.generate_trace(tactile.TraceSpec()))


@pytest.fixture(scope="session")
def feasibility():
    return control.compute_feasibility()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
