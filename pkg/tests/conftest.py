import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mirrorfdr.datagen import BetaScheme, BetaSpec, CovarianceSpec, CovFamily, make_dataset

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=25)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def strong_signal():
    """n=200, p=50, five +-1 coefficients and almost no noise."""
    return make_dataset(
        200,
        50,
        CovarianceSpec(CovFamily.IDENTITY),
        BetaSpec(BetaScheme.FIXED_POOL, p1=5, pool=(-1.0, 1.0)),
        1e-6,
        seed=11,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_criteria: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_criteria):
            terminalreporter.write_line(_criteria[k])
