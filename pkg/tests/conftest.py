import numpy as np
import pytest

from jointembed import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Each available kernel backend in turn."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary ------------------------------------------------------
#
# Every test in test_acceptance.py attaches a "criterion" user property (and
# optionally a "detail" string). The terminal summary lists one PASS/FAIL line
# per criterion so the results stand out at the end of the run.

_acceptance = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[props["criterion"]] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda c: int(c.split()[0])):
        outcome, detail = _acceptance[key]
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}  {key}" + (f"  [{detail}]" if detail else ""))
