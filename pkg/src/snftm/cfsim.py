"""Counterfactual sampling from a fitted (or exact) world.

Draws a never-treated time, walks the visits drawing covariates given its
prognosis bin and assigning treatment by the regime, and re-applies the
fitted treatment effects one interval at a time until the candidate event
time settles.  Built from estimates this approximates the regime-specific
survival law; built from exact structural ingredients it reproduces it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import rng as _rng
from .core import (
    Cohort,
    CohortFormatError,
    SurvivalCurve,
    TimeGrid,
    TreatmentRegime,
    UndefinedCellError,
)
from .dgp import DgpConfig
from .shift import BlipTable, ShiftModel, ShiftParams, default_features, gamma_inv

__all__ = ["FittedWorld", "CfSimResult", "simulate_counterfactual"]


@dataclass(frozen=True)
class FittedWorld:
    """Everything the counterfactual sampler needs.

    ``baseline`` is either a survival curve or an empirical sample of
    blipped-down times; ``covariate_laws`` maps
    ``(k, bin, lbar_prev, abar_prev)`` to the law of ``L_k``, with bins
    cutting the never-treated time at ``thresholds``.
    """

    grid: TimeGrid
    psi: ShiftParams
    thresholds: tuple[float, ...]
    baseline: object
    covariate_laws: Mapping[tuple, np.ndarray]
    features: object = default_features

    def bin_index(self, t0: float) -> int:
        return int(np.searchsorted(np.asarray(self.thresholds), t0, side="left"))

    def draw_baseline(self, u: float) -> float:
        """Inverse-distribution draw from the baseline, ``u`` uniform in [0, 1)."""
        if isinstance(self.baseline, SurvivalCurve):
            return self.baseline.quantile(1.0 - u)
        values = self.baseline
        return float(values[int(u * len(values))])

    @classmethod
    def from_dgp_config(cls, cfg: DgpConfig, psi: ShiftParams | None = None) -> "FittedWorld":
        """The exact world: true baseline curve, true covariate laws."""
        return cls(
            grid=cfg.grid,
            psi=psi if psi is not None else cfg.psi0,
            thresholds=cfg.thresholds,
            baseline=cfg.baseline,
            covariate_laws=dict(cfg.covariate_law.table),
        )

    @classmethod
    def from_cohort(
        cls,
        cohort: Cohort,
        psi: ShiftParams,
        thresholds: tuple[float, ...],
        features=default_features,
    ) -> "FittedWorld":
        """Estimated world: empirical distribution of blipped-down times and
        cell-frequency covariate laws keyed by their bin."""
        blip = BlipTable.from_cohort(cohort, features)
        t0s = blip.t0(psi.as_array())
        bins = np.searchsorted(np.asarray(thresholds), t0s, side="left")
        counts: dict = {}
        levels = [0] * (cohort.grid.K + 1)
        for traj in cohort:
            for k, l in enumerate(traj.covariates):
                levels[k] = max(levels[k], l + 1)
        for i, traj in enumerate(cohort):
            for k in range(traj.n_visits):
                key = (k, int(bins[i]), traj.covariates[:k], traj.treatments[:k])
                vec = counts.setdefault(key, np.zeros(levels[k]))
                vec[traj.covariates[k]] += 1.0
        laws = {key: vec / vec.sum() for key, vec in counts.items()}
        return cls(
            grid=cohort.grid,
            psi=psi,
            thresholds=tuple(float(c) for c in thresholds),
            baseline=np.sort(t0s),
            covariate_laws=laws,
            features=features,
        )


@dataclass(frozen=True)
class CfSimResult:
    """Sampled counterfactual event times with a survivor-curve summary."""

    event_times: np.ndarray = field(repr=False)
    t_grid: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    mean: float

    def to_rows(self):
        return zip(self.t_grid, self.survival, self.stderr)


def _draw(probs: np.ndarray, u: float) -> int:
    acc = 0.0
    for code, p in enumerate(probs):
        acc += p
        if u < acc:
            return code
    return len(probs) - 1


def _one_draw(world: FittedWorld, regime: TreatmentRegime, model: ShiftModel, uniforms):
    t0 = world.draw_baseline(uniforms[0])
    b = world.bin_index(t0)
    lbar: tuple[int, ...] = ()
    abar: tuple[int, ...] = ()
    v = t0
    for k in range(world.grid.K + 1):
        key = (k, b, lbar, abar)
        probs = world.covariate_laws.get(key)
        if probs is None:
            raise UndefinedCellError(
                f"no covariate law for cell {key}; the fitted world has no data "
                "for this regime-consistent history"
            )
        lbar += (_draw(probs, uniforms[1 + k]),)
        abar += (int(regime.rules[k](lbar)),)
        v = gamma_inv(model, k, lbar, abar, v)
        if v <= world.grid.next_tau(k):
            return v, lbar, abar
    raise AssertionError("unreachable: the last interval is unbounded")


def simulate_counterfactual(
    world: FittedWorld,
    regime: TreatmentRegime,
    n: int,
    seed: int = _rng.DEFAULT_SEED,
    t_grid=None,
) -> CfSimResult:
    """``n`` draws of the event time under the regime, survivor fractions
    with binomial standard errors on ``t_grid``, and the sample mean.

    Deterministic per ``(seed, draw index)`` via fixed-width stream slices.
    """
    if n < 1:
        raise CohortFormatError(f"need n >= 1, got {n}")
    grid = world.grid
    if t_grid is None:
        hi = 1.5 * grid.taus[-1]
        t_grid = np.linspace(hi / 20, hi, 20)
    t_grid = np.asarray(t_grid, dtype=float)
    model = ShiftModel(world.psi, grid, world.features)
    width = grid.K + 2
    uniforms = _rng.stream(seed, "cfsim").random((n, width))
    times = np.empty(n)
    for i in range(n):
        times[i], _, _ = _one_draw(world, regime, model, uniforms[i])
    surv = (times[:, None] > t_grid[None, :]).mean(axis=0)
    stderr = np.sqrt(surv * (1.0 - surv) / n)
    return CfSimResult(times, t_grid, surv, stderr, float(times.mean()))
