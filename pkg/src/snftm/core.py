"""Shared domain types for longitudinal survival data on a common visit grid.

Time runs from enrollment.  Visits happen at fixed times
``tau_0 = 0 < tau_1 < ... < tau_K`` shared by all subjects; the treatment
taken in ``(tau_k, tau_{k+1}]`` is recorded at ``tau_k``.  Covariate and
treatment values are small non-negative integer codes, and dosage code 0
always means "no treatment".
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SnftmError",
    "GridBoundsError",
    "CurveDomainError",
    "UndefinedCellError",
    "UnsupportedLawError",
    "InstanceTooLargeError",
    "InsufficientHistoryError",
    "ConvergenceError",
    "SeparationError",
    "BracketError",
    "WeakIdentificationError",
    "NonIdentifiableError",
    "StructuralZeroError",
    "CohortFormatError",
    "TimeGrid",
    "SurvivalCurve",
    "Trajectory",
    "Cohort",
    "TreatmentRegime",
    "apply_regime",
    "is_evaluable",
    "all_regimes",
]

CovariateHistory = tuple[int, ...]
TreatmentHistory = tuple[int, ...]


class SnftmError(Exception):
    """Base class for all errors raised by this package."""


class GridBoundsError(SnftmError):
    """A visit index or time falls outside the grid."""


class CurveDomainError(SnftmError):
    """A survival curve was queried outside its domain."""


class UndefinedCellError(SnftmError):
    """A history cell outside the support of the conditional laws was hit."""


class UnsupportedLawError(SnftmError):
    """The supplied law handle cannot produce exact probabilities."""


class InstanceTooLargeError(SnftmError):
    """Exact enumeration would exceed the configured cell budget."""


class InsufficientHistoryError(SnftmError):
    """Histories end before a sequential inversion settles."""


class ConvergenceError(SnftmError):
    """An iterative fit did not converge; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SeparationError(ConvergenceError):
    """Logistic likelihood diverges (perfectly separated data)."""


class BracketError(SnftmError):
    """No sign change of the estimating function inside the search box."""


class WeakIdentificationError(SnftmError):
    """The estimating-equation slope is too close to zero for a variance."""


class NonIdentifiableError(SnftmError):
    """The data cannot identify the requested parameters."""


class StructuralZeroError(SnftmError):
    """A trajectory hits a zero-probability cell of a parametric model."""


class CohortFormatError(SnftmError):
    """Malformed cohort CSV or config JSON."""


# ---------------------------------------------------------------------------
# Time grid


@dataclass(frozen=True)
class TimeGrid:
    """Fixed visit times ``tau_0 = 0 < tau_1 < ... < tau_K``.

    All intervals are half-open on the left: time ``t`` belongs to interval
    ``p`` when ``tau_p < t <= tau_{p+1}``, and everything past ``tau_K``
    belongs to interval ``K``.
    """

    taus: tuple[float, ...]

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if len(taus) < 2:
            raise GridBoundsError("a grid needs at least two visit times (K >= 1)")
        if taus[0] != 0.0:
            raise GridBoundsError(f"tau_0 must be 0, got {taus[0]}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise GridBoundsError(f"visit times must be strictly increasing: {taus}")
        object.__setattr__(self, "_taus_arr", np.asarray(taus))

    @property
    def K(self) -> int:
        return len(self.taus) - 1

    def tau(self, k: int) -> float:
        if not 0 <= k <= self.K:
            raise GridBoundsError(f"visit index {k} outside 0..{self.K}")
        return self.taus[k]

    def next_tau(self, k: int) -> float:
        """Upper end of interval ``k``; ``inf`` for the last interval."""
        if not 0 <= k <= self.K:
            raise GridBoundsError(f"visit index {k} outside 0..{self.K}")
        return self.taus[k + 1] if k < self.K else math.inf

    def delta(self, k: int) -> float:
        return self.next_tau(k) - self.tau(k)

    def interval_index(self, t: float) -> int:
        """The visit index ``p`` with ``tau_p < t <= tau_{p+1}`` (``K`` past the grid)."""
        if not t > 0.0:
            raise GridBoundsError(f"interval_index needs t > 0, got {t}")
        p = int(np.searchsorted(self._taus_arr, t, side="left")) - 1
        return min(p, self.K)


# ---------------------------------------------------------------------------
# Piecewise-exponential survival curves


@dataclass(frozen=True)
class SurvivalCurve:
    """Piecewise-exponential survival function on ``(support_start, inf)``.

    ``rates[j]`` is the hazard on ``(bounds[j], bounds[j+1]]``; the last rate
    extends to infinity.  With all rates positive the curve is continuous,
    strictly decreasing, equals 1 at ``support_start`` and tends to 0, and
    ``quantile`` is its exact functional inverse.  Zero rates are tolerated
    (they arise in fitted segments with no observed events) at the cost of a
    flat stretch; ``quantile`` then fails for levels the curve never reaches.
    """

    bounds: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.bounds)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "rates", rates)
        if len(bounds) != len(rates) or not bounds:
            raise CurveDomainError("need one rate per breakpoint")
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise CurveDomainError(f"breakpoints must be strictly increasing: {bounds}")
        if any(not math.isfinite(r) or r < 0.0 for r in rates):
            raise CurveDomainError(f"hazard rates must be finite and >= 0: {rates}")
        if not math.isfinite(bounds[0]):
            raise CurveDomainError("support start must be finite")
        b = np.asarray(bounds)
        r = np.asarray(rates)
        cum = np.concatenate([[0.0], np.cumsum(r[:-1] * np.diff(b))])
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_cumhaz", cum)

    @property
    def support_start(self) -> float:
        return self.bounds[0]

    def _piece(self, t):
        idx = np.searchsorted(self._b, t, side="left") - 1
        return np.clip(idx, 0, len(self.bounds) - 1)

    def cum_hazard(self, t):
        j = self._piece(t)
        return self._cumhaz[j] + self._r[j] * (np.asarray(t, dtype=float) - self._b[j])

    def eval(self, t):
        """Survival probability at ``t`` (scalar or array), ``t >= support_start``."""
        if np.any(np.asarray(t) < self.support_start):
            raise CurveDomainError(
                f"curve is defined on [{self.support_start}, inf), got t={t}"
            )
        out = np.exp(-self.cum_hazard(t))
        return float(out) if np.isscalar(t) or np.ndim(t) == 0 else out

    def mass_above(self, x) -> float:
        """``P(T > x)`` with no domain restriction (1 at or below the start)."""
        x = max(float(x), self.support_start)
        if math.isinf(x):
            if self.rates[-1] > 0.0:
                return 0.0
            return float(np.exp(-self._cumhaz[-1]))
        return float(np.exp(-self.cum_hazard(x)))

    def interval_mass(self, a: float, b: float) -> float:
        """``P(a < T <= b)``."""
        if b <= a:
            return 0.0
        return self.mass_above(a) - self.mass_above(b)

    def quantile(self, u: float) -> float:
        """Exact inverse: the ``t`` with ``eval(t) == u``, for ``u`` in ``(0, 1]``."""
        if not 0.0 < u <= 1.0:
            raise CurveDomainError(f"quantile level must be in (0, 1], got {u}")
        target = -math.log(u)
        cum = self._cumhaz
        for j in range(len(self.bounds)):
            width = (self.bounds[j + 1] - self.bounds[j]) if j + 1 < len(self.bounds) else math.inf
            top = cum[j] + self.rates[j] * width
            if target <= top or j == len(self.bounds) - 1:
                if self.rates[j] == 0.0:
                    if target == cum[j]:
                        return self.bounds[j]
                    continue
                return self.bounds[j] + (target - cum[j]) / self.rates[j]
        raise CurveDomainError(f"curve never falls to survival level {u}")

    def hazard_at(self, t: float) -> float:
        """Hazard on the piece containing ``t`` (pieces are left-open)."""
        if t <= self.support_start:
            raise CurveDomainError(f"hazard undefined at or before {self.support_start}")
        return self.rates[int(self._piece(t))]

    def density(self, t: float) -> float:
        return self.hazard_at(t) * self.eval(t)

    def log_density(self, t: float) -> float:
        h = self.hazard_at(t)
        if h == 0.0:
            return -math.inf
        return math.log(h) - float(self.cum_hazard(t))

    def conditional_from(self, x: float) -> "SurvivalCurve":
        """The curve of ``T | T > x``, i.e. renormalized to start at ``x``."""
        if x < self.support_start:
            raise CurveDomainError(f"cannot condition on T > {x} before the support start")
        j = int(self._piece(x)) if x > self.support_start else 0
        keep = tuple(b for b in self.bounds[j + 1 :] if b > x)
        return SurvivalCurve((x,) + keep, self.rates[len(self.bounds) - len(keep) - 1 :])

    def partial_expectation(self, a: float, b: float) -> float:
        """``E[T 1{a < T <= b}]``, in closed form per hazard piece."""
        if b <= a:
            return 0.0
        total = 0.0
        for j, r in enumerate(self.rates):
            lo = self.bounds[j]
            hi = self.bounds[j + 1] if j + 1 < len(self.bounds) else math.inf
            x, y = max(a, lo), min(b, hi)
            if y <= x or r == 0.0:
                continue
            head = (x + 1.0 / r) * self.mass_above(x)
            tail = 0.0 if math.isinf(y) else (y + 1.0 / r) * self.mass_above(y)
            total += head - tail
        return total

    def mean(self) -> float:
        """Expected value ``E[T]``; ``inf`` when a zero-rate tail never decays."""
        total = self.support_start
        for j, r in enumerate(self.rates):
            s_j = math.exp(-self._cumhaz[j])
            width = (self.bounds[j + 1] - self.bounds[j]) if j + 1 < len(self.bounds) else math.inf
            if r == 0.0:
                if math.isinf(width):
                    return math.inf
                total += s_j * width
            elif math.isinf(width):
                total += s_j / r
            else:
                total += s_j * (1.0 - math.exp(-r * width)) / r
        return total

    def sample(self, rng: np.random.Generator) -> float:
        return self.quantile(1.0 - rng.random())


# ---------------------------------------------------------------------------
# Trajectories and cohorts


@dataclass(frozen=True)
class Trajectory:
    """One subject's record: covariates and treatments at visits before the
    event, plus the event time itself.

    Histories run over visit indices ``k`` with ``tau_k < event_time``, so
    both tuples have length ``p(T) + 1`` on the cohort's grid.
    """

    covariates: CovariateHistory
    treatments: TreatmentHistory
    event_time: float

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(int(v) for v in self.covariates))
        object.__setattr__(self, "treatments", tuple(int(v) for v in self.treatments))
        object.__setattr__(self, "event_time", float(self.event_time))
        if self.event_time <= 0.0:
            raise CurveDomainError(f"event time must be positive, got {self.event_time}")
        if len(self.covariates) != len(self.treatments):
            raise CohortFormatError("covariate and treatment histories differ in length")
        if not self.covariates:
            raise CohortFormatError("a trajectory records at least the enrollment visit")
        if any(v < 0 for v in self.covariates + self.treatments):
            raise CohortFormatError("covariate/treatment codes are non-negative integers")

    @property
    def n_visits(self) -> int:
        return len(self.covariates)


@dataclass(frozen=True)
class Cohort:
    """Independent subjects observed on one shared grid."""

    subjects: tuple[Trajectory, ...]
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        for i, s in enumerate(self.subjects):
            expect = self.grid.interval_index(s.event_time) + 1
            if s.n_visits != expect:
                raise CohortFormatError(
                    f"subject {i}: {s.n_visits} visits recorded but event time "
                    f"{s.event_time} implies {expect}"
                )

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)


# ---------------------------------------------------------------------------
# Treatment regimes


@dataclass(frozen=True)
class TreatmentRegime:
    """A deterministic dosing rule ``g_k(lbar_k)`` for every visit ``k``.

    ``rules[k]`` maps the covariate history ``(l_0, ..., l_k)`` to the dosage
    for ``(tau_k, tau_{k+1}]``; each rule must be total on the covariate
    product space.
    """

    rules: tuple[Callable[[CovariateHistory], int], ...]
    label: str = ""

    @classmethod
    def static(cls, doses: Sequence[int], label: str = "") -> "TreatmentRegime":
        doses = tuple(int(a) for a in doses)
        rules = tuple((lambda lbar, a=a: a) for a in doses)
        return cls(rules, label or f"static{doses}")

    @classmethod
    def baseline(cls, n_visits: int) -> "TreatmentRegime":
        return cls.static((0,) * n_visits, label="never-treat")

    @classmethod
    def threshold(cls, n_visits: int, level: int, dose: int = 1) -> "TreatmentRegime":
        rules = tuple(
            (lambda lbar, lv=level, d=dose: d if lbar[-1] >= lv else 0)
            for _ in range(n_visits)
        )
        return cls(rules, label=f"treat-if-l>={level}")

    @classmethod
    def stopped(cls, prefix: Sequence[int], n_visits: int) -> "TreatmentRegime":
        """The regime ``(abar_k, 0bar)``: fixed doses through ``len(prefix)-1``, then 0."""
        prefix = tuple(int(a) for a in prefix)
        doses = prefix + (0,) * (n_visits - len(prefix))
        return cls.static(doses, label=f"stop-after{prefix}")

    @classmethod
    def from_tables(cls, tables: Sequence[dict], label: str = "") -> "TreatmentRegime":
        """``tables[k]`` maps covariate-history tuples to dosages."""
        frozen = tuple(dict(t) for t in tables)

        def make(k):
            def rule(lbar, _t=frozen[k]):
                try:
                    return _t[tuple(lbar)]
                except KeyError:
                    raise UndefinedCellError(
                        f"regime table at visit {k} has no entry for history {tuple(lbar)}"
                    ) from None

            return rule

        return cls(tuple(make(k) for k in range(len(frozen))), label)


def apply_regime(regime: TreatmentRegime, lbar: CovariateHistory) -> TreatmentHistory:
    """The prescribed treatment history ``(g_0(l_0), ..., g_k(lbar_k))``."""
    lbar = tuple(lbar)
    if len(lbar) > len(regime.rules):
        raise GridBoundsError(
            f"history of length {len(lbar)} exceeds the regime's {len(regime.rules)} visits"
        )
    return tuple(int(regime.rules[m](lbar[: m + 1])) for m in range(len(lbar)))


def is_evaluable(regime: TreatmentRegime, law) -> bool:
    """Whether every history that followed the regime can keep following it.

    ``law`` must expose exact probabilities
    ``P(Lbar_k = lbar, Abar = abar, T > tau_k)`` through a
    ``history_prob(lbar, abar)`` method (``abar`` of length ``k`` or ``k+1``)
    plus ``grid`` and ``covariate_levels``.
    """
    for attr in ("history_prob", "grid", "covariate_levels"):
        if not hasattr(law, attr):
            raise UnsupportedLawError(
                f"law handle {type(law).__name__} cannot produce exact probabilities"
            )
    K = law.grid.K
    levels = law.covariate_levels
    for k in range(K + 1):
        for lbar in itertools.product(*(range(levels[m]) for m in range(k + 1))):
            abar = apply_regime(regime, lbar)
            if law.history_prob(lbar, abar[:-1]) > 0.0 and law.history_prob(lbar, abar) <= 0.0:
                return False
    return True


def all_regimes(covariate_levels, treatment_levels, cap: int = 10_000, seed: int = 0):
    """Every deterministic regime on the finite instance, as table regimes.

    When the full count exceeds ``cap`` a seeded random subset of ``cap``
    regimes is returned instead (flagged via the second return value).
    """
    n_visits = len(covariate_levels)
    histories = [
        list(itertools.product(*(range(covariate_levels[m]) for m in range(k + 1))))
        for k in range(n_visits)
    ]
    sizes = [len(h) for h in histories]
    total = 1
    for k in range(n_visits):
        total *= treatment_levels[k] ** sizes[k]
    if total <= cap:
        per_visit = [
            [dict(zip(histories[k], assign)) for assign in
             itertools.product(range(treatment_levels[k]), repeat=sizes[k])]
            for k in range(n_visits)
        ]
        regimes = [
            TreatmentRegime.from_tables(combo, label=f"enum{i}")
            for i, combo in enumerate(itertools.product(*per_visit))
        ]
        return regimes, False
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    regimes = []
    for i in range(cap):
        tables = [
            {h: int(rng.integers(treatment_levels[k])) for h in histories[k]}
            for k in range(n_visits)
        ]
        regimes.append(TreatmentRegime.from_tables(tables, label=f"sampled{i}"))
    return regimes, True
