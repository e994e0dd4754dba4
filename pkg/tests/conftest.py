import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_K():
    from dynavo.synth import default_intrinsics
    return default_intrinsics(8)        # 80 x 60


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _ACCEPTANCE[n] = (status, detail)
    elif rep.failed and n not in _ACCEPTANCE:
        _ACCEPTANCE[n] = ("FAIL", f"{rep.when} error")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  {detail}" if detail else ""))
