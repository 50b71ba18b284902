"""Shift functions: the parametric family of time-scale maps that remove the
effect of a final treatment blip, and the transforms built from them.

The model maps the interval ``(tau_k, tau_{k+1}]`` onto itself rescaled,

    gamma(t) = tau_k + (min(tau_{k+1}, t) - tau_k) * exp(psi . x)
               + (t - tau_{k+1})_+                                  ,

where ``x = x(k, lbar_k, abar_k)`` is a feature vector, by default
``(a_k, a_k * a_{k-1}, a_k * l_k)``.  Each map is a continuous strictly
increasing bijection of ``(tau_k, inf)`` onto itself; ``psi = 0`` (or a
baseline dose ``a_k = 0``) gives the identity, i.e. no treatment effect.

``blip_down`` composes the maps innermost-at-death to recover the time a
subject would have shown with treatment stopped at a given visit;
``blip_up`` inverts that construction, turning a never-treated time into
the time under a supplied history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    Cohort,
    CurveDomainError,
    GridBoundsError,
    InsufficientHistoryError,
    TimeGrid,
    Trajectory,
)

__all__ = [
    "ShiftParams",
    "ShiftModel",
    "default_features",
    "gamma",
    "gamma_inv",
    "gamma_deriv",
    "blip_down",
    "blip_up",
    "BlipTable",
]


def default_features(k: int, lbar, abar) -> np.ndarray:
    """Main effect, previous-treatment interaction, current-covariate interaction."""
    a_k = abar[k]
    a_prev = abar[k - 1] if k > 0 else 0
    return np.array([a_k, a_k * a_prev, a_k * lbar[k]], dtype=float)


@dataclass(frozen=True)
class ShiftParams:
    """Log time-scale effects; ``psi = 0`` encodes no treatment effect."""

    psi: tuple[float, ...]

    def __post_init__(self):
        psi = tuple(float(v) for v in self.psi)
        object.__setattr__(self, "psi", psi)
        if any(not math.isfinite(v) for v in psi):
            raise ValueError(f"shift parameters must be finite, got {psi}")

    @classmethod
    def zero(cls, dim: int = 3) -> "ShiftParams":
        return cls((0.0,) * dim)

    @property
    def is_null(self) -> bool:
        return all(v == 0.0 for v in self.psi)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.psi)


@dataclass(frozen=True)
class ShiftModel:
    """The shift-function family over a grid, with a pluggable feature map."""

    params: ShiftParams
    grid: TimeGrid
    features: Callable[[int, tuple, tuple], np.ndarray] = default_features

    def scale(self, k: int, lbar, abar) -> float:
        """The interval time-scale factor ``exp(psi . x)``."""
        x = self.features(k, lbar, abar)
        if len(x) != len(self.params.psi):
            raise ValueError(
                f"feature map returned {len(x)} features for {len(self.params.psi)} parameters"
            )
        return math.exp(float(np.dot(self.params.as_array(), x)))


def _check_args(model: ShiftModel, k: int, lbar, abar, t: float):
    if not 0 <= k <= model.grid.K:
        raise GridBoundsError(f"visit index {k} outside 0..{model.grid.K}")
    if len(lbar) < k + 1 or len(abar) < k + 1:
        raise InsufficientHistoryError(
            f"histories must cover visits 0..{k}: got {len(lbar)} covariates, {len(abar)} treatments"
        )
    if not t > model.grid.tau(k):
        raise CurveDomainError(f"shift at visit {k} needs t > {model.grid.tau(k)}, got {t}")


def gamma(model: ShiftModel, k: int, lbar, abar, t: float) -> float:
    """The shift map at visit ``k`` evaluated at ``t > tau_k``."""
    _check_args(model, k, lbar, abar, t)
    tau_k, tau_k1 = model.grid.tau(k), model.grid.next_tau(k)
    s = model.scale(k, lbar, abar)
    return tau_k + (min(tau_k1, t) - tau_k) * s + max(t - tau_k1, 0.0)


def gamma_inv(model: ShiftModel, k: int, lbar, abar, t: float) -> float:
    """Exact functional inverse of :func:`gamma` at visit ``k``."""
    _check_args(model, k, lbar, abar, t)
    tau_k, tau_k1 = model.grid.tau(k), model.grid.next_tau(k)
    s = model.scale(k, lbar, abar)
    knee = tau_k + (tau_k1 - tau_k) * s if math.isfinite(tau_k1) else math.inf
    if t <= knee:
        return tau_k + (t - tau_k) / s
    return tau_k1 + (t - knee)


def gamma_deriv(model: ShiftModel, k: int, lbar, abar, t: float) -> float:
    """Right-continuous derivative: the scale factor on ``(tau_k, tau_{k+1})``, 1 beyond."""
    _check_args(model, k, lbar, abar, t)
    if t < model.grid.next_tau(k):
        return model.scale(k, lbar, abar)
    return 1.0


def blip_down(model: ShiftModel, traj: Trajectory, upto: int = 0) -> float:
    """Remove the treatment blips at visits ``upto, ..., p(T)`` from the event time.

    With ``upto = 0`` this is the mimicked never-treated outcome; for
    ``upto > p(T)`` the composition is empty and ``T`` is returned unchanged.
    """
    if not 0 <= upto <= model.grid.K:
        raise GridBoundsError(f"visit index {upto} outside 0..{model.grid.K}")
    p = model.grid.interval_index(traj.event_time)
    t = traj.event_time
    for m in range(min(p, traj.n_visits - 1), upto - 1, -1):
        t = gamma(model, m, traj.covariates[: m + 1], traj.treatments[: m + 1], t)
    return t


def blip_up(model: ShiftModel, t0: float, lbar, abar) -> float:
    """Sequentially re-apply treatment effects to a never-treated time ``t0``.

    Walks the intervals applying inverse shift maps until the candidate time
    settles inside the current interval; the histories must extend at least
    that far.
    """
    if not t0 > 0.0:
        raise CurveDomainError(f"baseline time must be positive, got {t0}")
    v = t0
    for k in range(model.grid.K + 1):
        if k >= len(lbar) or k >= len(abar):
            raise InsufficientHistoryError(
                f"candidate time {v} still past visit {k} but histories end at {min(len(lbar), len(abar))}"
            )
        v = gamma_inv(model, k, lbar[: k + 1], abar[: k + 1], v)
        if v <= model.grid.next_tau(k):
            return v
    raise AssertionError("unreachable: the last interval is unbounded")


# ---------------------------------------------------------------------------
# Vectorized blip-down over a cohort


@dataclass(frozen=True)
class BlipTable:
    """Per-visit feature rows for a cohort, for fast blip-down at many psi.

    One row per (subject, visit) pair, ordered by subject.  Because every
    shift map except the innermost acts past its own breakpoint, the
    blipped-down time is affine in the per-row scale factors:

        t0(psi) = tau_p + (T - tau_p) * s_p + sum_{m<p} delta_m * (s_m - 1).
    """

    n_subjects: int
    row_subject: np.ndarray
    row_features: np.ndarray
    row_c1: np.ndarray
    row_c0: np.ndarray
    base: np.ndarray
    terminal_features: np.ndarray
    event_times: np.ndarray

    @classmethod
    def from_cohort(cls, cohort: Cohort, features=default_features) -> "BlipTable":
        grid = cohort.grid
        subj, rows, c1, c0 = [], [], [], []
        base = np.empty(len(cohort))
        term_rows = []
        times = np.empty(len(cohort))
        for i, traj in enumerate(cohort):
            p = traj.n_visits - 1
            times[i] = traj.event_time
            base[i] = grid.tau(p)
            for m in range(p + 1):
                x = np.asarray(
                    features(m, traj.covariates[: m + 1], traj.treatments[: m + 1]),
                    dtype=float,
                )
                subj.append(i)
                rows.append(x)
                if m < p:
                    c1.append(grid.delta(m))
                    c0.append(-grid.delta(m))
                else:
                    c1.append(traj.event_time - grid.tau(p))
                    c0.append(0.0)
                    term_rows.append(x)
        return cls(
            n_subjects=len(cohort),
            row_subject=np.asarray(subj, dtype=np.intp),
            row_features=np.vstack(rows),
            row_c1=np.asarray(c1),
            row_c0=np.asarray(c0),
            base=base,
            terminal_features=np.vstack(term_rows),
            event_times=times,
        )

    def t0(self, psi: np.ndarray) -> np.ndarray:
        """Blipped-down times for every subject at parameter ``psi``."""
        s = np.exp(self.row_features @ np.asarray(psi, dtype=float))
        contrib = self.row_c1 * s + self.row_c0
        return self.base + np.bincount(
            self.row_subject, weights=contrib, minlength=self.n_subjects
        )

    def log_jacobian(self, psi: np.ndarray) -> np.ndarray:
        """Per-subject ``log d t0 / d T``: the innermost log scale factor."""
        return self.terminal_features @ np.asarray(psi, dtype=float)
