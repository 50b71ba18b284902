"""Semiparametric G-estimation.

Only the treatment mechanism is modeled: a pooled logistic regression of the
dose indicator on past-history features, augmented with a function of the
blipped-down event time.  Under the candidate shift parameters being correct,
the augmented term carries no information, so its coefficient has population
value zero; tests of that coefficient test the candidate, and the parameter
estimate is the candidate value at which the fitted coefficient crosses zero.
No covariate-transition or baseline-survival model is consulted anywhere in
this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .core import (
    BracketError,
    Cohort,
    ConvergenceError,
    NonIdentifiableError,
    SeparationError,
    SnftmError,
    WeakIdentificationError,
)
from .shift import BlipTable, ShiftParams, default_features

__all__ = [
    "GFeature",
    "TreatmentModelSpec",
    "TreatmentFit",
    "GTestReport",
    "PsiEstimate",
    "fit_treatment_model",
    "g_test",
    "estimate_psi",
    "sandwich_variance",
    "score_residuals",
]


@dataclass(frozen=True)
class GFeature:
    """The augmentation function applied to the blipped-down time.

    Identity by default; ``clip`` bounds extreme times before use (guards the
    logistic fit against leverage from long survivors) and ``log`` transforms
    after clipping.  Multi-parameter estimation needs as many columns as free
    parameters: either successive ``powers`` or, much better conditioned, the
    piecewise-linear segments cut at ``knots``.
    """

    clip: tuple[float, float] | None = None
    log: bool = False
    powers: int = 1
    knots: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.knots) + 1 if self.knots else self.powers

    def design(self, t0: np.ndarray) -> np.ndarray:
        x = np.asarray(t0, dtype=float)
        if self.clip is not None:
            x = np.clip(x, self.clip[0], self.clip[1])
        if self.log:
            x = np.log(x)
        if self.knots:
            edges = (0.0,) + tuple(self.knots) + (math.inf,)
            return np.column_stack(
                [np.clip(x - lo, 0.0, hi - lo) for lo, hi in zip(edges, edges[1:])]
            )
        return np.column_stack([x**p for p in range(1, self.powers + 1)])


_F_TERMS = ("intercept", "l", "l_prev", "a_prev", "k")


@dataclass(frozen=True)
class TreatmentModelSpec:
    """Pooled person-interval logistic model for the dose indicator.

    ``f_terms`` name history features (shared coefficients across visits);
    ``g`` builds the augmentation columns; ``components`` lists which shift
    parameters are free when estimating (the rest pinned at zero).
    """

    f_terms: tuple[str, ...] = ("intercept", "l", "a_prev")
    g: GFeature = field(default_factory=GFeature)
    components: tuple[int, ...] = (0,)
    psi_dim: int = 3

    def __post_init__(self):
        for term in self.f_terms:
            if term not in _F_TERMS:
                raise SnftmError(f"unknown history feature {term!r}; pick from {_F_TERMS}")
        if len(set(self.components)) != len(self.components) or any(
            not 0 <= c < self.psi_dim for c in self.components
        ):
            raise SnftmError(f"invalid free-component list {self.components}")

    def embed(self, active: np.ndarray) -> np.ndarray:
        psi = np.zeros(self.psi_dim)
        psi[list(self.components)] = np.asarray(active, dtype=float)
        return psi


class _GestData:
    """Person-interval records: one row per (subject, visit) with the visit's
    dose as response.  Built once per cohort; the augmentation column is the
    only part that changes with the candidate shift parameters."""

    def __init__(self, cohort: Cohort, spec: TreatmentModelSpec):
        self.spec = spec
        rows_f, rows_y, rows_subj = [], [], []
        for i, traj in enumerate(cohort):
            if any(a > 1 for a in traj.treatments):
                raise SnftmError(
                    "G-estimation handles binary dosing only; multi-valued treatments are out of scope"
                )
            for k in range(traj.n_visits):
                feats = {
                    "intercept": 1.0,
                    "l": float(traj.covariates[k]),
                    "l_prev": float(traj.covariates[k - 1]) if k else 0.0,
                    "a_prev": float(traj.treatments[k - 1]) if k else 0.0,
                    "k": float(k),
                }
                rows_f.append([feats[t] for t in spec.f_terms])
                rows_y.append(float(traj.treatments[k]))
                rows_subj.append(i)
        self.F = np.asarray(rows_f)
        self.y = np.asarray(rows_y)
        self.row_subject = np.asarray(rows_subj, dtype=np.intp)
        self.n_subjects = len(cohort)
        self.event_times = np.array([traj.event_time for traj in cohort])
        self._cohort = cohort
        self._blip: BlipTable | None = None

    def blipped_times(self, psi: np.ndarray | None) -> np.ndarray:
        """Per-subject blipped-down times; ``None`` means the identity shift,
        which by construction never evaluates a shift map."""
        if psi is None:
            return self.event_times
        if self._blip is None:
            self._blip = BlipTable.from_cohort(self._cohort, default_features)
        return self._blip.t0(np.asarray(psi, dtype=float))

    def g_columns(self, psi: np.ndarray | None) -> np.ndarray:
        return self.spec.g.design(self.blipped_times(psi))[self.row_subject]


def _logistic_newton(X: np.ndarray, y: np.ndarray, tol: float = 1e-10, max_iter: int = 120):
    """Newton-Raphson logistic MLE; returns (beta, covariance, score_norm, loglik).

    Columns are standardized internally so the score-norm stopping rule and
    the Newton steps are scale-free; coefficients and covariance are mapped
    back exactly.
    """
    d = X.shape[1]
    col_scale = X.std(axis=0)
    col_scale[col_scale == 0.0] = 1.0
    Xs = X / col_scale
    if np.linalg.matrix_rank(Xs) < d:
        raise NonIdentifiableError(f"design matrix is rank deficient ({d} columns)")
    beta = np.zeros(d)
    eta = Xs @ beta
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    for _ in range(max_iter):
        p = special.expit(eta)
        score = Xs.T @ (y - p)
        if float(np.max(np.abs(score))) < tol:
            if float(np.max(np.abs(beta))) > 15.0:
                raise SeparationError(
                    f"logistic likelihood diverges (max |standardized coef| "
                    f"{np.max(np.abs(beta)):.1f}): data are separated on some feature",
                    best=beta / col_scale,
                )
            w = p * (1.0 - p)
            H = (Xs * w[:, None]).T @ Xs
            cov = np.linalg.inv(H) / np.outer(col_scale, col_scale)
            return beta / col_scale, cov, float(np.max(np.abs(score))), ll
        w = np.clip(p * (1.0 - p), 1e-12, None)
        H = (Xs * w[:, None]).T @ Xs
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError as e:
            raise NonIdentifiableError(f"singular information in logistic fit: {e}") from e
        damp = 1.0
        cand, ll_c = beta, ll
        for _ in range(30):
            cand = beta + damp * step
            eta_c = Xs @ cand
            ll_c = float(np.sum(y * eta_c - np.logaddexp(0.0, eta_c)))
            if ll_c >= ll - 1e-9:
                break
            damp *= 0.5
        beta, eta, ll = cand, Xs @ cand, ll_c
    if float(np.max(np.abs(beta))) > 30.0:
        raise SeparationError(
            f"logistic likelihood diverges (max |scaled coef| {np.max(np.abs(beta)):.1f}): "
            "data are separated on some feature",
            best=beta / col_scale,
        )
    raise ConvergenceError(
        f"logistic fit did not reach score norm {tol:g} in {max_iter} iterations",
        best=beta / col_scale,
    )


@dataclass(frozen=True)
class TreatmentFit:
    theta: np.ndarray
    alpha: np.ndarray
    cov: np.ndarray
    score_norm: float
    loglik: float
    n_records: int

    @property
    def alpha_se(self) -> np.ndarray:
        d = len(self.alpha)
        return np.sqrt(np.diag(self.cov)[-d:])


def fit_treatment_model(
    cohort: Cohort, spec: TreatmentModelSpec, psi: ShiftParams | Sequence[float] | None
) -> TreatmentFit:
    """Fit the augmented pooled logistic model at candidate shift parameters.

    ``psi = None`` requests the identity candidate (the raw event time enters
    the augmentation; no shift map is evaluated).
    """
    data = _GestData(cohort, spec)
    return _fit_augmented(data, _as_vector(psi))


def _as_vector(psi) -> np.ndarray | None:
    if psi is None:
        return None
    if isinstance(psi, ShiftParams):
        return psi.as_array()
    return np.asarray(psi, dtype=float)


def _fit_augmented(data: _GestData, psi: np.ndarray | None) -> TreatmentFit:
    G = data.g_columns(psi)
    X = np.column_stack([data.F, G])
    beta, cov, norm, ll = _logistic_newton(X, data.y)
    d_f = data.F.shape[1]
    return TreatmentFit(beta[:d_f], beta[d_f:], cov, norm, ll, len(data.y))


@dataclass(frozen=True)
class GTestReport:
    """Score and Wald tests of the augmentation coefficient being zero."""

    df: int
    score: float
    score_p: float
    wald: float
    wald_p: float
    alpha: np.ndarray
    alpha_se: np.ndarray
    n_records: int

    def to_dict(self) -> dict:
        return {
            "df": self.df,
            "score": float(self.score),
            "score_p": float(self.score_p),
            "wald": float(self.wald),
            "wald_p": float(self.wald_p),
            "alpha": [float(a) for a in self.alpha],
            "alpha_se": [float(s) for s in self.alpha_se],
            "n_records": self.n_records,
        }


def _score_test(data: _GestData, psi: np.ndarray | None):
    theta0, _, _, _ = _logistic_newton(data.F, data.y)
    p0 = special.expit(data.F @ theta0)
    w0 = p0 * (1.0 - p0)
    G = data.g_columns(psi)
    U = G.T @ (data.y - p0)
    i_ff = (data.F * w0[:, None]).T @ data.F
    i_fg = (data.F * w0[:, None]).T @ G
    i_gg = (G * w0[:, None]).T @ G
    V = i_gg - i_fg.T @ np.linalg.solve(i_ff, i_fg)
    stat = float(U @ np.linalg.solve(V, U))
    return stat, G.shape[1]


def g_test(cohort: Cohort, spec: TreatmentModelSpec, psi0=None) -> GTestReport:
    """Test a candidate shift parameter (default: the identity, i.e. no
    treatment effect) by testing the augmentation coefficient at zero."""
    data = _GestData(cohort, spec)
    psi_vec = _as_vector(psi0)
    stat, df = _score_test(data, psi_vec)
    fit = _fit_augmented(data, psi_vec)
    d = len(fit.alpha)
    wald = float(
        fit.alpha @ np.linalg.solve(fit.cov[-d:, -d:], fit.alpha)
    )
    return GTestReport(
        df=df,
        score=stat,
        score_p=float(stats.chi2.sf(stat, df)),
        wald=wald,
        wald_p=float(stats.chi2.sf(wald, d)),
        alpha=fit.alpha,
        alpha_se=fit.alpha_se,
        n_records=fit.n_records,
    )


def score_residuals(cohort: Cohort, spec: TreatmentModelSpec, psi) -> np.ndarray:
    """Per-subject profile score for the augmentation coefficient at
    ``(alpha = 0, psi)``: the estimating-function values whose root is the
    parameter estimate."""
    data = _GestData(cohort, spec)
    return _h_matrix(data, _as_vector(psi))


def _h_matrix(data: _GestData, psi: np.ndarray | None) -> np.ndarray:
    theta0, _, _, _ = _logistic_newton(data.F, data.y)
    p0 = special.expit(data.F @ theta0)
    w0 = p0 * (1.0 - p0)
    G = data.g_columns(psi)
    i_ff = (data.F * w0[:, None]).T @ data.F
    i_fg = (data.F * w0[:, None]).T @ G
    resid = (data.y - p0)[:, None] * (G - data.F @ np.linalg.solve(i_ff, i_fg))
    out = np.zeros((data.n_subjects, G.shape[1]))
    np.add.at(out, data.row_subject, resid)
    return out


def sandwich_variance(
    cohort: Cohort,
    spec: TreatmentModelSpec,
    psi_hat,
    step: float = 1e-4,
):
    """M-estimator variance of the shift estimate: the second moment of the
    per-subject estimating function over the squared slope of its mean in the
    candidate parameter, slope by central finite differences (nuisance
    coefficients refit at each perturbed candidate).

    Returns ``(variance_matrix, se_vector)`` on the active components; the
    standard error already includes the 1/n factor.
    """
    data = _GestData(cohort, spec)
    active = np.asarray(psi_hat, dtype=float)[list(spec.components)]
    d = len(spec.components)
    if data.spec.g.dim != d:
        raise SnftmError(
            f"just-identification requires {d} augmentation columns, got {spec.g.dim}"
        )
    h = _h_matrix(data, spec.embed(active))
    V = h.T @ h / data.n_subjects
    D = np.empty((d, d))
    for j in range(d):
        delta = step * max(1.0, abs(active[j]))
        up, dn = active.copy(), active.copy()
        up[j] += delta
        dn[j] -= delta
        mean_up = _h_matrix(data, spec.embed(up)).mean(axis=0)
        mean_dn = _h_matrix(data, spec.embed(dn)).mean(axis=0)
        D[:, j] = (mean_up - mean_dn) / (2.0 * delta)
    smallest = np.min(np.abs(np.linalg.svd(D, compute_uv=False)))
    if smallest < 1e-10 * max(1.0, float(np.max(np.abs(V)))):
        raise WeakIdentificationError(
            f"estimating-equation slope is numerically singular (min singular value {smallest:.2e})"
        )
    Dinv = np.linalg.inv(D)
    var = Dinv @ V @ Dinv.T
    se = np.sqrt(np.diag(var) / data.n_subjects)
    return var, se


@dataclass(frozen=True)
class PsiEstimate:
    """Root of the augmented-coefficient curve with test-inversion confidence set."""

    psi: np.ndarray
    components: tuple[int, ...]
    roots: tuple[tuple[float, ...], ...]
    multiple_roots: bool
    se: np.ndarray
    ci_grid: np.ndarray
    ci_mask: np.ndarray
    alpha_trace: np.ndarray
    h_residual: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.psi[list(self.components)]

    def ci_interval(self):
        """Convex hull of the accepted grid (1-parameter case)."""
        acc = self.ci_grid[self.ci_mask]
        return (float(acc.min()), float(acc.max())) if len(acc) else (math.nan, math.nan)


def _alpha_of(data: _GestData, spec: TreatmentModelSpec, active: np.ndarray) -> np.ndarray:
    return _fit_augmented(data, spec.embed(active)).alpha


def estimate_psi(
    cohort: Cohort,
    spec: TreatmentModelSpec,
    box: Sequence[tuple[float, float]],
    level: float = 0.05,
    grid_pitch: float = 0.01,
    tol_alpha: float = 1e-6,
    compute_ci: bool = True,
    n_scan: int = 9,
) -> PsiEstimate:
    """Estimate the free shift components as the root of the fitted
    augmentation coefficient, with a confidence set by test inversion.

    One free component: bracket scan plus bisection.  Several: coarse grid
    refinement, then a quasi-Newton root search.  All roots found in the box
    are reported; the one with the smallest residual coefficient is primary.
    """
    data = _GestData(cohort, spec)
    d = len(spec.components)
    if spec.g.dim != d:
        raise SnftmError(
            f"just-identification requires as many augmentation columns as free components "
            f"({spec.g.dim} != {d})"
        )
    box = [tuple(map(float, b)) for b in box]
    if len(box) != d:
        raise SnftmError(f"search box must have {d} intervals, got {len(box)}")

    if d == 1:
        lo, hi = box[0]
        grid = np.linspace(lo, hi, n_scan)
        vals = np.array([_alpha_of(data, spec, np.array([x]))[0] for x in grid])
        roots = []
        for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:]):
            if fa == 0.0:
                roots.append(a)
                continue
            if fa * fb < 0.0:
                x_lo, x_hi, f_lo = a, b, fa
                while x_hi - x_lo > 1e-10:
                    mid = 0.5 * (x_lo + x_hi)
                    fm = _alpha_of(data, spec, np.array([mid]))[0]
                    if abs(fm) < 0.1 * tol_alpha:
                        break
                    if f_lo * fm < 0.0:
                        x_hi = mid
                    else:
                        x_lo, f_lo = mid, fm
                roots.append(0.5 * (x_lo + x_hi))
        if vals[-1] == 0.0:
            roots.append(grid[-1])
        if not roots:
            raise BracketError(
                f"augmentation coefficient has no sign change on [{lo}, {hi}]: "
                f"endpoint values {vals[0]:.4g}, {vals[-1]:.4g}"
            )
        resid = [abs(_alpha_of(data, spec, np.array([r]))[0]) for r in roots]
        best = int(np.argmin(resid))
        if resid[best] > tol_alpha:
            raise ConvergenceError(
                f"best root residual {resid[best]:.2e} exceeds {tol_alpha:g}",
                best=roots[best],
            )
        active_hat = np.array([roots[best]])
        all_roots = tuple((float(r),) for r in roots)
    else:
        axes = [np.linspace(lo, hi, 5) for lo, hi in box]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.column_stack([m.ravel() for m in mesh])
        norms = [
            float(np.linalg.norm(_alpha_of(data, spec, pt))) for pt in points
        ]
        start = points[int(np.argmin(norms))]
        sol = optimize.minimize(
            lambda x: float(np.sum(_alpha_of(data, spec, x) ** 2)),
            start,
            method="BFGS",
            options={"gtol": 1e-14, "maxiter": 400},
        )
        resid = float(np.linalg.norm(_alpha_of(data, spec, sol.x)))
        if resid > tol_alpha:
            raise ConvergenceError(
                f"vector root search stalled at residual {resid:.2e} "
                f"(tolerance {tol_alpha:g}); the stacked equations may be weakly identified",
                best=sol.x,
            )
        active_hat = np.asarray(sol.x)
        all_roots = (tuple(float(v) for v in active_hat),)

    _, se = sandwich_variance(cohort, spec, spec.embed(active_hat))

    if compute_ci and d == 1:
        lo, hi = box[0]
        ci_grid = np.arange(lo, hi + 0.5 * grid_pitch, grid_pitch)
        trace = np.empty(len(ci_grid))
        mask = np.zeros(len(ci_grid), dtype=bool)
        for idx, x in enumerate(ci_grid):
            vec = spec.embed(np.array([x]))
            stat, df = _score_test(data, vec)
            mask[idx] = stats.chi2.sf(stat, df) >= level
            trace[idx] = _alpha_of(data, spec, np.array([x]))[0]
    else:
        ci_grid = np.zeros((0,))
        mask = np.zeros((0,), dtype=bool)
        trace = np.zeros((0,))

    return PsiEstimate(
        psi=spec.embed(active_hat),
        components=spec.components,
        roots=all_roots,
        multiple_roots=len(all_roots) > 1,
        se=se,
        ci_grid=ci_grid,
        ci_mask=mask,
        alpha_trace=trace,
        h_residual=_h_matrix(data, spec.embed(active_hat)).mean(axis=0),
    )
