"""Estimators for the zone-passenger OD matrix.

All estimators share one device: take the eigenvectors P of a survey-derived
symmetric OD matrix, assume the target matrix has the same eigenvectors, and
fit only the eigenvalue vector from the observed margin counts. With
s_k = sum_j P[j, k], the expected departure margin is

    mu_i = sum_k lam_k * P[i, k] * s_k          (the map  mu = A lam,  A = P S_d)

which the closed forms invert and the likelihood methods maximize over.

Estimated matrices are reported both raw (the algebraic reconstruction,
possibly infeasible) and projected onto the feasible set: entries >= 0 and a
zero diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from . import kernels
from .core import (
    CovariateDesign,
    ODMatrix,
    ObservationSet,
    SpectralForm,
    as_matrix,
    reconstruct,
)
from .errors import EstimationError, NumericError
from .sim import NBParams

__all__ = [
    "EstimatorReport",
    "NBFit",
    "project_constraints",
    "fit_negbin",
    "estimate_lambda_gaussian",
    "estimate_lambda_poisson",
    "estimate_lambda_mle",
    "estimate_lambda_regression",
    "estimate_adhoc",
    "zone_travel_ratio",
    "METHOD_TAGS",
]

METHOD_TAGS = (
    "gaussian",
    "poisson_prop1",
    "poisson_appendix",
    "mle_constrained",
    "regression",
    "adhoc",
)


@dataclass(frozen=True)
class EstimatorReport:
    """Result bundle for one estimator run.

    lambda_hat is the raw estimator output (the vector the asymptotic theory
    describes; components dropped by the pseudo-inverse policy are zero).
    R_z_hat is the constraint-projected matrix (None for regression
    covariate-effect reports, which legitimately carry negative entries and
    live in R_z_raw); lambda_feasible re-extracts the eigenvalue coefficients
    of R_z_hat in the survey basis.
    """

    method: str
    lambda_hat: np.ndarray
    R_z_raw: np.ndarray
    R_z_hat: Optional[ODMatrix]
    lambda_feasible: Optional[np.ndarray]
    constraint_violation: float
    p_rz_hat: Optional[float] = None
    dropped_components: tuple[int, ...] = ()
    iterations: Optional[int] = None
    converged: bool = True
    predicted_moments: Optional[tuple[np.ndarray, np.ndarray]] = None
    label: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "lambda_hat": [float(v) for v in self.lambda_hat],
            "lambda_feasible": None
            if self.lambda_feasible is None
            else [float(v) for v in self.lambda_feasible],
            "constraint_violation": float(self.constraint_violation),
            "p_rz_hat": None if self.p_rz_hat is None else float(self.p_rz_hat),
            "dropped_components": list(self.dropped_components),
            "iterations": self.iterations,
            "converged": self.converged,
            "label": self.label,
        }


def project_constraints(r) -> tuple[ODMatrix, float]:
    """Project a symmetric matrix onto the feasible set; return the distance.

    Order: re-enforce symmetry, clip negatives, zero the diagonal. The
    composition is idempotent. The second value is the Frobenius norm of the
    difference between input and projection.
    """
    a = as_matrix(r)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cannot project non-square matrix of shape {a.shape}")
    p = (a + a.T) / 2.0
    np.clip(p, 0.0, None, out=p)
    np.fill_diagonal(p, 0.0)
    violation = float(np.linalg.norm(a - p))
    ids = r.station_ids if isinstance(r, ODMatrix) else ()
    return ODMatrix(p, station_ids=ids, symmetric=True), violation


#: components with |s_k| below this (times sqrt(n)) are dropped, not inverted
DROP_TOL = 1e-8


def _pinv_vector(v: np.ndarray, tol: float) -> tuple[np.ndarray, tuple[int, ...]]:
    """Entrywise reciprocal with small entries dropped to zero."""
    keep = np.abs(v) >= tol
    out = np.zeros_like(v)
    out[keep] = 1.0 / v[keep]
    return out, tuple(int(i) for i in np.flatnonzero(~keep))


def _check_usable(P_tilde: SpectralForm, dropped: tuple[int, ...]) -> None:
    if len(dropped) == P_tilde.n:
        raise EstimationError("all eigencomponents dropped; estimation impossible")
    if P_tilde.degenerate:
        warnings.warn(
            "survey eigensystem has (near-)repeated eigenvalues; eigenvector "
            "transfer is unreliable in the degenerate subspace",
            stacklevel=3,
        )


def _finish(
    method: str,
    P: np.ndarray,
    lam: np.ndarray,
    station_ids: tuple[str, ...],
    **kw,
) -> EstimatorReport:
    raw = reconstruct(P, lam)
    projected, violation = project_constraints(raw)
    if station_ids:
        projected = ODMatrix(projected.entries, station_ids=station_ids, symmetric=True)
    lam_feas = np.einsum("ik,ij,jk->k", P, projected.entries, P)
    return EstimatorReport(
        method=method,
        lambda_hat=lam,
        R_z_raw=raw,
        R_z_hat=projected,
        lambda_feasible=lam_feas,
        constraint_violation=violation,
        **kw,
    )


@dataclass(frozen=True)
class NBFit:
    """Negative-binomial fit for one matrix cell (or any count sample)."""

    r: float
    p: float
    mean: float
    poisson_fallback: bool = False
    degenerate: bool = False

    def as_params(self) -> NBParams:
        if self.poisson_fallback or self.degenerate:
            raise EstimationError("no proper NB parameters for a degenerate/Poisson fit")
        return NBParams(r=self.r, p=self.p)


def fit_negbin(samples) -> NBFit:
    """Fit (r, p) by profile likelihood on r, with p = r / (r + mean).

    Falls back to a Poisson flag when the sample shows no over-dispersion
    (variance <= mean), where the NB size parameter diverges.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least 2 scalar samples")
    if np.any(x < 0) or np.any(x != np.floor(x)):
        raise ValueError("samples must be nonnegative integers")
    m = float(x.mean())
    v = float(x.var(ddof=1))
    if m == 0:
        return NBFit(r=float("nan"), p=float("nan"), mean=0.0, degenerate=True)
    if v <= m:
        return NBFit(r=float("inf"), p=1.0, mean=m, poisson_fallback=True)

    n = x.size
    sx = float(x.sum())

    def neg_profile(log_r: float) -> float:
        r = float(np.exp(log_r))
        p = r / (r + m)
        ll = (
            float(gammaln(x + r).sum())
            - n * float(gammaln(r))
            + n * r * np.log(p)
            + sx * np.log1p(-p)
        )
        return -ll

    r0 = m * m / (v - m)  # method-of-moments start
    res = minimize_scalar(
        neg_profile,
        bracket=(np.log(r0) - 2, np.log(r0), np.log(r0) + 2),
        method="brent",
        options={"xtol": 1e-10},
    )
    r_hat = float(np.exp(res.x))
    return NBFit(r=r_hat, p=r_hat / (r_hat + m), mean=m)


def estimate_lambda_gaussian(
    P_tilde: SpectralForm,
    y_bar,
    *,
    truth: SpectralForm | None = None,
    d_matrix=None,
    station_ids: tuple[str, ...] = (),
) -> EstimatorReport:
    """Gaussian-likelihood closed form: lam_hat = S_d^-1 P' y_bar.

    Exact on noiseless margins when the transferred eigenvectors are the true
    ones. Components whose column sum s_k is numerically zero are
    unidentifiable from margins and get lam_hat[k] = 0 plus a dropped flag.

    When the true spectral form is supplied, predicted_moments carries the
    sampling mean m = S~^-1 P~' P S Lam and covariance kernel
    Sigma = S~^-1 [D + P~' diag(P S Lam) P~] S~^-1 (cov(lam_hat) ~ Sigma / T);
    D defaults to zero.
    """
    y = np.asarray(y_bar, dtype=float)
    tol = DROP_TOL * np.sqrt(P_tilde.n)
    s_inv, dropped = _pinv_vector(P_tilde.S, tol)
    _check_usable(P_tilde, dropped)
    lam = s_inv * (P_tilde.P.T @ y)
    moments = None
    if truth is not None:
        mu_true = (truth.P * truth.S) @ truth.lam
        m = s_inv * (P_tilde.P.T @ mu_true)
        d = np.zeros((P_tilde.n, P_tilde.n)) if d_matrix is None else as_matrix(d_matrix)
        inner = d + P_tilde.P.T @ (mu_true[:, None] * P_tilde.P)
        sigma = s_inv[:, None] * inner * s_inv[None, :]
        moments = (m, sigma)
    return _finish(
        "gaussian",
        P_tilde.P,
        lam,
        station_ids,
        dropped_components=dropped,
        predicted_moments=moments,
    )


def estimate_lambda_poisson(
    P_tilde: SpectralForm,
    y_bar,
    variant: str = "prop1",
    *,
    station_ids: tuple[str, ...] = (),
) -> EstimatorReport:
    """Poisson-likelihood closed forms, two published variants.

    "prop1":     lam_hat = S_d^-1 P' [diag(P S)]^-1 y_bar
    "appendix":  lam_hat = (S_d P' P S_d)^-1 S_d P' mu_hat, where the margin
                 means are first back-fitted as mu_hat_i = y_bar_i / (P S)_i
                 (the entrywise inverse of U_hat = Ybar_d^-1 P S).

    For an exact orthonormal eigenbasis P S = P P' 1 = 1, so both coincide
    with the Gaussian form on clean inputs; the variants differ only through
    rounding and the pseudo-inverse policy, and the report keeps the raw
    output so the discrepancy stays visible.
    """
    y = np.asarray(y_bar, dtype=float)
    tol = DROP_TOL * np.sqrt(P_tilde.n)
    s_inv, dropped = _pinv_vector(P_tilde.S, tol)
    _check_usable(P_tilde, dropped)
    ps = P_tilde.P @ P_tilde.S
    ps_inv, dropped_st = _pinv_vector(ps, tol)
    if dropped_st:
        warnings.warn(
            f"stations {dropped_st} have numerically zero diag(PS); dropped",
            stacklevel=2,
        )
    if variant == "prop1":
        lam = s_inv * (P_tilde.P.T @ (ps_inv * y))
    elif variant == "appendix":
        mu_hat = y * ps_inv
        g = (P_tilde.S[:, None] * (P_tilde.P.T @ P_tilde.P)) * P_tilde.S[None, :]
        rhs = P_tilde.S * (P_tilde.P.T @ mu_hat)
        lam = np.linalg.pinv(g, rcond=1e-12) @ rhs
        lam[list(dropped)] = 0.0
    else:
        raise ValueError(f"unknown variant {variant!r}; use 'prop1' or 'appendix'")
    return _finish(
        f"poisson_{variant}",
        P_tilde.P,
        lam,
        station_ids,
        dropped_components=dropped,
    )


def _feasibility_error(P: np.ndarray, init: np.ndarray) -> str | None:
    r0 = reconstruct(P, init)
    scale = max(1.0, float(np.max(np.abs(r0))))
    if float(r0.min()) < -1e-8 * scale:
        return "initial point violates the nonnegativity constraint (C1)"
    if float(np.max(np.abs(np.diagonal(r0)))) > 1e-8 * scale:
        return "initial point violates the zero-diagonal constraint (C2)"
    return None


def estimate_lambda_mle(
    P_tilde: SpectralForm,
    obs: ObservationSet,
    family: str = "poisson",
    init=None,
    *,
    tol: float = 1e-9,
    max_iter: int = 10000,
    station_ids: tuple[str, ...] = (),
) -> EstimatorReport:
    """Constrained maximum likelihood over the eigenvalue vector.

    Maximizes the margin likelihood (Poisson, or negative binomial with one
    shared success probability, kept in [0, 1]) by monotone gradient ascent
    from the feasible start lam0 = the survey's own eigenvalues, then applies
    the constraint projection to the reconstruction. Stops when the
    log-likelihood improves by less than ``tol`` (relative) or at
    ``max_iter``, returning best-so-far with a warning in the latter case.
    """
    if not isinstance(obs, ObservationSet):
        raise TypeError("estimate_lambda_mle requires an ObservationSet")
    n = P_tilde.n
    if obs.n != n:
        raise ValueError(f"observations have {obs.n} stations, survey has {n}")
    ybar = obs.y_bar
    if n == 1:
        # one station has no off-diagonal flow and the zero-diagonal
        # constraint is vacuous: the MLE is the plain sample mean
        lam = np.array([float(ybar[0])])
        return EstimatorReport(
            method="mle_constrained",
            lambda_hat=lam,
            R_z_raw=np.array([[lam[0]]]),
            R_z_hat=ODMatrix(np.zeros((1, 1)), station_ids=station_ids or ("s1",)),
            lambda_feasible=np.array([0.0]),
            constraint_violation=0.0,
            p_rz_hat=None,
            iterations=0,
        )
    lam0 = np.asarray(P_tilde.lam if init is None else init, dtype=float)
    problem = _feasibility_error(P_tilde.P, lam0)
    if problem:
        raise EstimationError(problem)
    _check_usable(P_tilde, ())
    A = P_tilde.P * P_tilde.S
    p_hat = None
    if family == "poisson":
        lam, _, n_iter, converged, _ = kernels.poisson_ascent(
            A, ybar, obs.days, lam0, tol, max_iter
        )
    elif family == "negbin":
        vals, cnts, offsets = _count_histograms(obs.y_dep)
        lam, p_hat, _, n_iter, converged, _ = kernels.negbin_ascent(
            A, vals, cnts, offsets, ybar, obs.days, lam0, tol, max_iter
        )
        p_hat = float(min(max(p_hat, 0.0), 1.0))
    else:
        raise ValueError(f"unknown family {family!r}; use 'poisson' or 'negbin'")
    if not converged:
        warnings.warn(
            f"likelihood ascent hit the {max_iter}-iteration cap; best-so-far returned",
            stacklevel=2,
        )
    return _finish(
        "mle_constrained",
        P_tilde.P,
        np.asarray(lam),
        station_ids,
        p_rz_hat=p_hat,
        iterations=int(n_iter),
        converged=bool(converged),
    )


def _count_histograms(y_dep: np.ndarray):
    """Per-station histograms of daily counts, flattened for the kernels."""
    vals, cnts, offsets = [], [], [0]
    for i in range(y_dep.shape[1]):
        v, c = np.unique(y_dep[:, i], return_counts=True)
        vals.append(v.astype(float))
        cnts.append(c.astype(float))
        offsets.append(offsets[-1] + len(v))
    return np.concatenate(vals), np.concatenate(cnts), np.asarray(offsets, dtype=np.int64)


def estimate_lambda_regression(
    P_tilde: SpectralForm,
    y_dep,
    design: CovariateDesign,
    *,
    station_ids: tuple[str, ...] = (),
) -> list[EstimatorReport]:
    """Per-covariate eigenvalue estimates for margin regression.

    Evaluates  Lam_hat = S_d^-1 P' [diag(P S)]^-1 Y X' (X X')^-1  with the
    margins arranged n x T and the design L x T. Column l holds the
    eigenvalues of the l-th coefficient matrix: the intercept report is
    constraint-projected like any OD estimate, covariate-effect reports keep
    their sign (effects model deviations) and carry the raw matrix only.
    """
    Y = np.atleast_2d(np.asarray(y_dep, dtype=float))
    if Y.shape[1] != P_tilde.n:
        raise ValueError(f"margins have {Y.shape[1]} stations, survey has {P_tilde.n}")
    if Y.shape[0] != design.days:
        raise ValueError(
            f"margins cover {Y.shape[0]} days but the design has {design.days}"
        )
    tol = DROP_TOL * np.sqrt(P_tilde.n)
    s_inv, dropped = _pinv_vector(P_tilde.S, tol)
    _check_usable(P_tilde, dropped)
    ps = P_tilde.P @ P_tilde.S
    ps_inv, _ = _pinv_vector(ps, tol)
    Yn = Y.T  # n x T
    X = design.X.T  # L x T
    try:
        coef = np.linalg.solve(X @ X.T, X @ Yn.T).T  # n x L  ==  Y X' (X X')^-1
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"design normal equations singular (cond {np.linalg.cond(design.X):.3g})"
        ) from exc
    lam_cols = s_inv[:, None] * (P_tilde.P.T @ (ps_inv[:, None] * coef))  # n x L
    reports = []
    for l, label in enumerate(design.labels):
        lam_l = lam_cols[:, l]
        if l == 0:
            rep = _finish(
                "regression",
                P_tilde.P,
                lam_l,
                station_ids,
                dropped_components=dropped,
                label=label,
            )
        else:
            raw = reconstruct(P_tilde.P, lam_l)
            rep = EstimatorReport(
                method="regression",
                lambda_hat=lam_l,
                R_z_raw=raw,
                R_z_hat=None,
                lambda_feasible=None,
                constraint_violation=0.0,
                dropped_components=dropped,
                label=label,
            )
        reports.append(rep)
    return reports


def estimate_adhoc(
    P_tilde: SpectralForm,
    lambda_n,
    obs: ObservationSet,
    *,
    normalizer: str = "prior",
    station_ids: tuple[str, ...] = (),
) -> EstimatorReport:
    """Bias-robust combination of the spectral prior with margin shares.

    The projected reconstruction R0 from ``lambda_n`` (the Gaussian
    closed-form estimate) acts as prior structure; the observations enter
    through the equal-partition matrix  r_ob[i, j] = (sbar_i. + sbar_.j)/(2n)
    built from mean total departures/arrivals. The combination

        r_ah[i, j] = (n/2) (r_ob[i, j] w[i, j] + r_ob[j, i] w[j, i])

    uses prior row-shares w[i, j] = R0[i, j] / row_i(R0) by default, so the
    prior contributes only its shape and the observed margins set the mass.
    The published normalizer is ambiguous (its summation index is overloaded);
    ``normalizer="observed"`` selects the other reading, w[i, j] =
    R0[i, j] / row_i(r_ob), which is markedly less robust to survey bias.
    """
    if not isinstance(obs, ObservationSet):
        raise TypeError("estimate_adhoc requires an ObservationSet")
    n = P_tilde.n
    lam_n = np.asarray(lambda_n, dtype=float)
    r0, _ = project_constraints(reconstruct(P_tilde.P, lam_n))
    r0 = r0.entries
    dep = obs.y_dep.mean(axis=0)
    arr = obs.y_arr.mean(axis=0)
    rob = (dep[:, None] + arr[None, :]) / (2 * n)
    if normalizer == "prior":
        rows = r0.sum(axis=1)
    elif normalizer == "observed":
        rows = rob.sum(axis=1)
    else:
        raise ValueError(f"unknown normalizer {normalizer!r}; use 'prior' or 'observed'")
    isolated = np.flatnonzero(rows <= 0)
    if isolated.size:
        warnings.warn(
            f"station row(s) {isolated.tolist()} have zero mass; skipped in the "
            "ad hoc combination",
            stacklevel=2,
        )
    safe_rows = np.where(rows > 0, rows, 1.0)
    t1 = rob * r0 / safe_rows[:, None]
    t1[isolated, :] = 0.0
    out = (n / 2.0) * (t1 + t1.T)
    np.fill_diagonal(out, 0.0)
    od = ODMatrix(out, station_ids=station_ids, symmetric=True)
    lam_sorted = np.sort(np.linalg.eigvalsh(out))[::-1]
    return EstimatorReport(
        method="adhoc",
        lambda_hat=lam_sorted,
        R_z_raw=out,
        R_z_hat=od,
        lambda_feasible=lam_sorted,
        constraint_violation=0.0,
    )


def zone_travel_ratio(obs: ObservationSet) -> float | None:
    """Reported share of zone-ticket holders traveling per day.

    Each traveling holder produces a departure for the outbound and one for
    the return leg, hence the factor 2. Returns None when per-day zone-ticket
    totals are not available; this is a diagnostic ratio, not a fitted
    parameter.
    """
    if obs.n_rz is None:
        return None
    totals = obs.y_dep.sum(axis=1)
    valid = obs.n_rz > 0
    if not np.any(valid):
        return None
    return float(np.mean(totals[valid] / (2.0 * obs.n_rz[valid])))
