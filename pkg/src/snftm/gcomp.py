"""Counterfactual survival by backward recursion over conditional laws.

The engine consumes two ingredient maps estimated or derived elsewhere: the
covariate transition probabilities given the past, and the
interval-conditional survival of the event time given the past.  Treatment
laws never enter — survival under a regime is a function of these two
ingredients alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import rng as _rng
from .core import (
    Cohort,
    CohortFormatError,
    CurveDomainError,
    SurvivalCurve,
    TimeGrid,
    TreatmentRegime,
    UndefinedCellError,
    apply_regime,
)

__all__ = [
    "ConditionalLaws",
    "s_conditional",
    "s_marginal",
    "estimate_laws",
    "mc_gcomp",
    "McGcompResult",
]


@dataclass(frozen=True)
class ConditionalLaws:
    """The two G-computation ingredients, keyed by history cells.

    ``covariate_transition[(m, lbar, abar)]`` is the law of ``L_m`` given
    ``(Lbar_{m-1}, Abar_{m-1}) = (lbar, abar)`` and survival past ``tau_m``
    (for ``m = 0`` the key is ``(0, (), ())`` and the vector is the marginal
    law of ``L_0``).  ``interval_survival[(m, lbar, abar)]`` is the survival
    function of ``T`` given the same history and ``T > tau_{m-1}``, valid on
    ``(tau_{m-1}, tau_m]``; keys run ``m = 1 .. K+1``.  Presence of a key is
    what "in support" means; anything else errors loudly.
    """

    grid: TimeGrid
    covariate_levels: tuple[int, ...]
    covariate_transition: Mapping[tuple, np.ndarray]
    interval_survival: Mapping[tuple, object]

    def transition(self, m: int, lbar, abar) -> np.ndarray:
        key = (m, tuple(lbar), tuple(abar))
        try:
            return self.covariate_transition[key]
        except KeyError:
            raise UndefinedCellError(f"no covariate transition for cell {key}") from None

    def survival(self, m: int, lbar, abar):
        key = (m, tuple(lbar), tuple(abar))
        try:
            return self.interval_survival[key]
        except KeyError:
            raise UndefinedCellError(f"no interval survival for cell {key}") from None

    def has_cell(self, m: int, lbar, abar) -> bool:
        return (m, tuple(lbar), tuple(abar)) in self.covariate_transition


def s_conditional(laws: ConditionalLaws, regime: TreatmentRegime, lbar, t: float) -> float:
    """``P(T^g > t | Lbar_k = lbar, Abar_{k-1} follows g, T > tau_k)``.

    Backward recursion: at the death interval the interval-conditional tail is
    returned; one step earlier the interval survival factor multiplies the
    transition-weighted average over the next covariate.  The recursion and
    the nested-sum formula are algebraically identical.
    """
    grid = laws.grid
    lbar = tuple(lbar)
    k = len(lbar) - 1
    if k > grid.K:
        raise CurveDomainError(f"history of length {len(lbar)} exceeds the grid")
    if not t > grid.tau(k):
        raise CurveDomainError(f"need t > tau_{k} = {grid.tau(k)}, got {t}")
    p = grid.interval_index(t)
    memo: dict = {}

    def rec(kk: int, hist: tuple) -> float:
        got = memo.get((kk, hist))
        if got is not None:
            return got
        abar = apply_regime(regime, hist)
        if kk == p:
            val = laws.survival(p + 1, hist, abar).eval(t)
        else:
            surv = laws.survival(kk + 1, hist, abar).eval(grid.tau(kk + 1))
            trans = laws.transition(kk + 1, hist, abar)
            val = surv * sum(
                trans[l] * rec(kk + 1, hist + (l,))
                for l in range(len(trans))
                if trans[l] > 0.0
            )
        memo[(kk, hist)] = val
        return val

    return rec(k, lbar)


def s_marginal(laws: ConditionalLaws, regime: TreatmentRegime, t: float) -> float:
    """``P(T^g > t)``: the recursion averaged over the initial covariate."""
    start = laws.transition(0, (), ())
    return float(
        sum(
            start[l0] * s_conditional(laws, regime, (l0,), t)
            for l0 in range(len(start))
            if start[l0] > 0.0
        )
    )


def estimate_laws(cohort: Cohort) -> ConditionalLaws:
    """Plug-in estimates: cell frequencies for covariate transitions, one
    exponential hazard per (cell, interval) with rate = events / person-time.

    Cells never visited are simply absent from the support.
    """
    if len(cohort) == 0:
        raise CohortFormatError("cannot estimate laws from an empty cohort")
    grid = cohort.grid
    K = grid.K
    levels = [0] * (K + 1)
    for traj in cohort:
        for m, l in enumerate(traj.covariates):
            levels[m] = max(levels[m], l + 1)

    trans_counts: dict = {}
    for traj in cohort:
        for m in range(traj.n_visits):
            key = (m, traj.covariates[:m], traj.treatments[:m])
            vec = trans_counts.setdefault(key, np.zeros(levels[m]))
            vec[traj.covariates[m]] += 1.0
    transitions = {key: vec / vec.sum() for key, vec in trans_counts.items()}

    events: dict = {}
    persontime: dict = {}
    for traj in cohort:
        for m in range(1, traj.n_visits + 1):
            key = (m, traj.covariates[:m], traj.treatments[:m])
            end = grid.tau(m) if m <= K else np.inf
            persontime[key] = persontime.get(key, 0.0) + (
                min(traj.event_time, end) - grid.tau(m - 1)
            )
            if traj.event_time <= end:
                events[key] = events.get(key, 0) + 1
    curves = {
        key: SurvivalCurve((grid.tau(key[0] - 1),), (events.get(key, 0) / pt,))
        for key, pt in persontime.items()
    }
    return ConditionalLaws(grid, tuple(levels), transitions, curves)


@dataclass(frozen=True)
class McGcompResult:
    """Survivor-fraction estimates of a counterfactual curve on a time grid."""

    t_grid: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    n_sim: int
    event_times: np.ndarray = field(repr=False, default=None)

    def mean_survival_time(self) -> float:
        return float(np.mean(self.event_times))


def _simulate_path(laws: ConditionalLaws, regime: TreatmentRegime, uniforms) -> float:
    grid = laws.grid
    start = laws.transition(0, (), ())
    lbar = (_draw_code(start, uniforms[0]),)
    m, pos = 1, 1
    while True:
        abar = apply_regime(regime, lbar)
        curve = laws.survival(m, lbar, abar)
        u = 1.0 - uniforms[pos]
        pos += 1
        if m <= grid.K and u < curve.eval(grid.tau(m)):
            trans = laws.transition(m, lbar, abar)
            lbar += (_draw_code(trans, uniforms[pos]),)
            pos += 1
            m += 1
        else:
            return curve.quantile(u)


def _draw_code(probs, u: float) -> int:
    acc = 0.0
    for code, p in enumerate(probs):
        acc += p
        if u < acc:
            return code
    return len(probs) - 1


def mc_gcomp(
    laws: ConditionalLaws,
    regime: TreatmentRegime,
    t_grid,
    n_sim: int,
    seed: int = _rng.DEFAULT_SEED,
) -> McGcompResult:
    """Monte-Carlo evaluation of the counterfactual curve: forward-simulate
    covariates and survival under the regime, report survivor fractions with
    binomial standard errors.

    Each replicate consumes its own fixed-width slice of one counter-based
    stream, so replicate ``i`` is reproducible independently of ``n_sim``.
    """
    if n_sim < 1:
        raise CohortFormatError(f"need n_sim >= 1, got {n_sim}")
    t_grid = np.asarray(t_grid, dtype=float)
    width = 2 * laws.grid.K + 3
    uniforms = _rng.stream(seed, "mcgcomp").random((n_sim, width))
    times = np.empty(n_sim)
    for i in range(n_sim):
        times[i] = _simulate_path(laws, regime, uniforms[i])
    surv = (times[:, None] > t_grid[None, :]).mean(axis=0)
    stderr = np.sqrt(surv * (1.0 - surv) / n_sim)
    return McGcompResult(t_grid, surv, stderr, n_sim, times)
