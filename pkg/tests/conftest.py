import numpy as np
import pytest

from safecollab.kinematics import DHRow, RobotModel
from safecollab.scenario import bundled_robot_model, bundled_scenario_path, load_scenario
from safecollab.sim import run


def make_model(dh, segments=None, qdot=1.0, qddot=10.0, **kw):
    rows = tuple(DHRow(*r) for r in dh)
    n = len(rows)
    if segments is None:
        from safecollab.kinematics import default_link_segments
        segments = default_link_segments(rows)
    return RobotModel(rows, tuple(segments), -qdot * np.ones(n), qdot * np.ones(n),
                      -qddot * np.ones(n), qddot * np.ones(n), **kw)


@pytest.fixture
def planar1():
    """One revolute joint, unit link along x."""
    return make_model([(1.0, 0.0, 0.0, 0.0)])


@pytest.fixture(scope="session")
def ur10e():
    return bundled_robot_model()


@pytest.fixture(scope="session")
def pantry():
    return load_scenario(bundled_scenario_path())


@pytest.fixture(scope="session")
def pantry_runs(pantry):
    safe = run(pantry, safety_enabled=True)
    unsafe = run(pantry, safety_enabled=False)
    return {"safe": safe, "unsafe": unsafe}


def pantry_doc():
    """Fresh copy of the bundled scenario document."""
    import json
    return json.loads(bundled_scenario_path().read_text())


def scenario_of(doc):
    from safecollab.scenario import DATA_DIR, scenario_from_dict
    return scenario_from_dict(doc, DATA_DIR)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
