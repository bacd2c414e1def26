import math

import pytest

from tiltwise.fixtures import SATURATED_EXACT, fixture_12, fixture_12_csv
from tiltwise.models import fit_nuisances

LN2 = math.log(2.0)


@pytest.fixture
def fx12():
    return fixture_12()


@pytest.fixture
def fx12_csv(tmp_path):
    path = tmp_path / "fixture.csv"
    path.write_text(fixture_12_csv())
    return path


@pytest.fixture
def fx12_nb(fx12):
    return fit_nuisances(fx12, SATURATED_EXACT)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
