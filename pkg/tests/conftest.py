import numpy as np
import pytest

from ppcfilter.boxes import OrientedBox3
from ppcfilter.cad import default_sedan, downsample


@pytest.fixture(scope="session")
def sedan():
    return downsample(default_sedan(), 500)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_box(center=(10.0, 0.0, 0.0), size=(2.0, 2.0, 2.0), yaw=0.0):
    return OrientedBox3(center, size, yaw)


# ------------------------------------------------------ acceptance reporting

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", item.function.__doc__.strip().splitlines()[0],
                             detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
