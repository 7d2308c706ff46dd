import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

coord = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False, width=64)


def clouds(min_n=1, max_n=40):
    return st.integers(min_n, max_n).flatmap(lambda n: hnp.arrays(np.float64, (n, 3), elements=coord))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_criteria: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _criteria[props["criterion"]] = {"ok": report.passed, "detail": props.get("detail", "")}


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        c = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if c['ok'] else 'FAIL'}  {c['detail']}")
