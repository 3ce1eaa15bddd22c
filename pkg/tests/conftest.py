import numpy as np
import pytest

from qrcauchy.geometry import l_shape, unit_square
from qrcauchy.mesh import generate_structured


@pytest.fixture
def square():
    return unit_square(("bottom",))


@pytest.fixture
def square_br():
    return unit_square(("bottom", "right"))


@pytest.fixture
def lshape():
    return l_shape()


@pytest.fixture(scope="session")
def square_mesh16():
    return generate_structured(unit_square(("bottom",)), 16)


@pytest.fixture(scope="session")
def square_mesh32():
    return generate_structured(unit_square(("bottom",)), 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    label = item.get_closest_marker("criterion")
    if label is None or report.when not in ("setup", "call"):
        return
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[label.args[0]] = (label.args[1], report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"C{num} {name}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, name): acceptance criterion")
