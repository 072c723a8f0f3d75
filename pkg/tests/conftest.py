import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aerialplan.kinematics import HomogeneousTransform, default_arm

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

JOINT_LOWER = (-1.2, -1.4, 0.15)
JOINT_UPPER = (1.2, 1.4, 2.4)
Q_NOMINAL = np.array([0.0, -0.6, 1.2])


@pytest.fixture
def arm():
    return default_arm(JOINT_LOWER, JOINT_UPPER)


@pytest.fixture
def mount():
    return HomogeneousTransform.from_xyz_rpy((0.08, 0.0, 0.04), (0.0, 0.0, -np.pi / 2))


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]])


def trans(x, y, z):
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return m


def dh_oracle(theta, d, alpha, a):
    """Independent product of the four elementary DH motions."""
    return rot_z(theta) @ trans(0, 0, d) @ trans(a, 0, 0) @ rot_x(alpha)


# acceptance criteria report one PASS/FAIL line each in the terminal summary
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    details = [str(v) for k, v in rep.user_properties if k == "detail"]
    _CRITERIA[number] = (title, rep.passed, rep.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, duration, details = _CRITERIA[number]
        extra = f" [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'} {title} ({duration:.1f} s){extra}")
