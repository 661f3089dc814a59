import numpy as np
import pytest

from resnoise.numerics import operand_scale, ulp_ratio  # noqa: F401
from resnoise.schedule import build_schedule


@pytest.fixture(scope="session")
def sched1000():
    return build_schedule(1000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ulp_close(a, b, scale, n_ulp=4):
    """|a - b| <= n_ulp ulps of ``scale`` (the magnitude of the largest term involved)."""
    worst = ulp_ratio(a, b, scale) / n_ulp
    return worst <= 1.0, worst


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
