import math

import pytest

from snftm import dgp
from snftm.core import SurvivalCurve, TimeGrid
from snftm.shift import ShiftParams

RICH_PSI = (math.log(0.5), 0.2, -0.25)


def make_config(psi0=RICH_PSI, bin_coef=-1.2, seed=42, baseline=None, thresholds=(1.5,)):
    """The standard two-period binary instance used across the suite.

    Sick subjects (low never-treated time) are likelier to show L = 1, and
    L = 1 subjects are likelier to be treated: time-dependent confounding by
    construction.
    """
    grid = TimeGrid((0.0, 1.0))
    baseline = baseline or SurvivalCurve((0.0, 1.0, 2.0), (0.5, 0.4, 0.3))
    cov = dgp.CovariateLaw.from_logistic(
        2, len(thresholds) + 1, intercept=-0.4, bin_coef=bin_coef,
        l_prev_coef=0.5, a_prev_coef=-0.3,
    )
    trt = dgp.TreatmentLaw.from_logistic(2, intercept=-0.8, l_coef=1.4, a_prev_coef=0.6)
    return dgp.DgpConfig(grid, baseline, thresholds, cov, trt, ShiftParams(psi0), seed=seed)


def make_smooth_null_config(seed=0):
    """Exponential baseline, covariates carrying no prognosis signal: the
    regular submodel where classical likelihood asymptotics are clean."""
    return make_config(
        psi0=(0.0, 0.0, 0.0),
        bin_coef=0.0,
        baseline=SurvivalCurve((0.0,), (0.45,)),
        seed=seed,
    )


@pytest.fixture(scope="session")
def rich_config():
    return make_config()


@pytest.fixture(scope="session")
def rich_world(rich_config):
    from snftm import oracle

    return oracle.enumerate_world(rich_config)


@pytest.fixture(scope="session")
def rich_laws(rich_world):
    return rich_world.conditional_laws()


@pytest.fixture(scope="session")
def null_world():
    from snftm import oracle

    return oracle.enumerate_world(make_config(psi0=(0.0, 0.0, 0.0)))


@pytest.fixture(scope="session")
def big_cohort(rich_config):
    """One million subjects, sampled once and shared (Monte-Carlo cross-checks)."""
    return dgp.sample_cohort(rich_config, 1_000_000, seed=2024)
