import sys
from pathlib import Path

import numpy as np
import pytest

from reflectpriv import scene

DETECTORS = Path(__file__).parent / "detectors"


def detector_cmd(name: str) -> str:
    return f"{sys.executable} {DETECTORS / name}"


@pytest.fixture(scope="session")
def suite():
    return scene.make_default_suite()


@pytest.fixture(scope="session")
def frames_a(suite):
    sc, traj = suite[0]
    return scene.capture(sc, traj)


@pytest.fixture(scope="session")
def fused_a(frames_a):
    from reflectpriv.pointcloud import fuse
    return fuse(frames_a, scene.ANCHOR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion at the end of the run
_acceptance_results: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_c"):
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        if report.failed and not detail:
            detail = "error before the check completed"
        _acceptance_results[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(_acceptance_results, key=lambda n: int(n.split("_")[1][1:]))
    for name in order:
        verdict, detail = _acceptance_results[name]
        label = name[5:].replace("_", " ").capitalize()
        terminalreporter.write_line(f"{verdict}  {label}: {detail}")
