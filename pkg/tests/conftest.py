import re

import pytest

from tnc_policy.calibration import san_francisco_params
from tnc_policy.config import parse_config
from tnc_policy.model import ModelParams

W_MIN = 26.35


def printed(**overrides):
    """Rounded San Francisco values, speed law as printed (v_free = 15)."""
    base = dict(
        lambda0=1049.0,
        n0=10000.0,
        m_const=41.18,
        trip_len=2.6,
        v_free=15.0,
        kappa=0.0003,
        alpha=2.33,
        beta=70.0 / 60.0,
        eps=0.33,
        c_out=31.2,
        sigma=0.089,
        w_res=31.04,
    )
    base.update(overrides)
    return ModelParams(**base)


@pytest.fixture(scope="session")
def printed_params():
    return printed()


@pytest.fixture(scope="session")
def default_params():
    return parse_config("sf_default").params


@pytest.fixture(scope="session")
def sf():
    return san_francisco_params()


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(key)
        if prev != "FAIL":
            _ACCEPTANCE[key] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {num:2d} {name.replace('_', ' ')}: {status}")
