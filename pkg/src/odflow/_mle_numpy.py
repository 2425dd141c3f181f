"""Pure-numpy maximum-likelihood ascent kernels.

These are the reference implementations of the hot kernels; the compiled
extension :mod:`odflow._mle_core` provides the same functions with the same
semantics. Both run monotone gradient ascent with Barzilai-Borwein step
proposals safeguarded by Armijo backtracking: every accepted iterate strictly
improves the objective.

The model: station margin y_i is a count with parameter mu_i = (A @ lam)_i,
where A[i, k] = P[i, k] * S[k] folds the eigenvector transfer. Poisson uses
mu as the mean; negative binomial uses mu as the size with one shared
success probability p, profiled out in closed form each evaluation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln

__all__ = ["poisson_ascent", "negbin_ascent"]

_NEG_INF = float("-inf")


def _poisson_ll(A, ybar, T, lam):
    mu = A @ lam
    if np.any(mu < 0):
        return _NEG_INF
    pos = ybar > 0
    if np.any(mu[pos] == 0):
        return _NEG_INF
    val = -float(mu.sum())
    val += float(np.dot(ybar[pos], np.log(mu[pos])))
    return T * val


def _poisson_grad(A, ybar, T, lam):
    mu = A @ lam
    ratio = np.zeros_like(mu)
    pos = mu > 0
    ratio[pos] = ybar[pos] / mu[pos]
    return T * (A.T @ (ratio - 1.0))


def poisson_ascent(A, ybar, T, lam0, tol=1e-9, max_iter=10000):
    """Maximize the Poisson margin log-likelihood over the eigenvalue vector.

    Returns (lam, loglik, n_iter, converged, history) where history holds the
    accepted objective values (up to the likelihood's data-only constant).
    """
    A = np.ascontiguousarray(A, dtype=float)
    ybar = np.ascontiguousarray(ybar, dtype=float)
    lam = np.array(lam0, dtype=float)
    T = float(T)
    f = _poisson_ll(A, ybar, T, lam)
    g = _poisson_grad(A, ybar, T, lam)
    hist = [f]
    gmax = float(np.max(np.abs(g)))
    step = 1.0 / gmax if gmax > 0 else 1.0
    converged = True
    n_iter = 0
    stall = 0
    for n_iter in range(1, max_iter + 1):
        t = step
        cand = lam
        fc = f
        accepted = False
        for _ in range(100):
            cand = lam + t * g
            fc = _poisson_ll(A, ybar, T, cand)
            if np.isfinite(fc) and fc > f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        g_new = _poisson_grad(A, ybar, T, cand)
        dl = cand - lam
        dg = g_new - g
        denom = float(dl @ dg)
        step = abs(float(dl @ dl) / denom) if denom != 0.0 else 2.0 * t
        improvement = fc - f
        lam, f, g = cand, fc, g_new
        hist.append(f)
        # spectral steps progress unevenly; stop only on a sustained stall
        if improvement < tol * max(1.0, abs(f)):
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
    else:
        converged = False
    return lam, f, n_iter, converged, np.asarray(hist)


def _negbin_ll(A, vals, cnts, offsets, ybar, T, lam):
    """Profile log-likelihood: p is replaced by its closed-form maximizer."""
    r = A @ lam
    n = len(ybar)
    if np.any(r < 0):
        return _NEG_INF, 0.0
    if np.any((r == 0) & (ybar > 0)):
        return _NEG_INF, 0.0
    rsum = float(r.sum())
    ytot = float(ybar.sum())
    if rsum == 0:
        return (0.0, 0.5) if ytot == 0 else (_NEG_INF, 0.0)
    p = rsum / (rsum + ytot)
    p = min(max(p, 1e-12), 1 - 1e-12)
    val = T * rsum * np.log(p) + T * ytot * np.log1p(-p)
    for i in range(n):
        if r[i] == 0:
            continue
        sl = slice(offsets[i], offsets[i + 1])
        val += float(np.dot(cnts[sl], gammaln(vals[sl] + r[i]))) - T * float(gammaln(r[i]))
    return val, p


def _negbin_grad(A, vals, cnts, offsets, ybar, T, lam, p):
    r = np.maximum(A @ lam, 1e-300)
    n = len(ybar)
    gr = np.zeros(n)
    logp = np.log(p)
    for i in range(n):
        if ybar[i] == 0 and r[i] <= 1e-300:
            continue
        sl = slice(offsets[i], offsets[i + 1])
        gr[i] = (
            float(np.dot(cnts[sl], digamma(vals[sl] + r[i])))
            - T * float(digamma(r[i]))
            + T * logp
        )
    return A.T @ gr


def negbin_ascent(A, vals, cnts, offsets, ybar, T, lam0, tol=1e-9, max_iter=10000):
    """Maximize the negative-binomial margin log-likelihood (shared p profiled).

    ``vals``/``cnts`` hold the distinct observed counts and their
    multiplicities for all stations, concatenated; ``offsets`` (length n+1)
    delimits each station's slice. Returns (lam, p, loglik, n_iter,
    converged, history).
    """
    A = np.ascontiguousarray(A, dtype=float)
    vals = np.ascontiguousarray(vals, dtype=float)
    cnts = np.ascontiguousarray(cnts, dtype=float)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    ybar = np.ascontiguousarray(ybar, dtype=float)
    lam = np.array(lam0, dtype=float)
    T = float(T)
    f, p = _negbin_ll(A, vals, cnts, offsets, ybar, T, lam)
    g = _negbin_grad(A, vals, cnts, offsets, ybar, T, lam, p if p > 0 else 0.5)
    hist = [f]
    gmax = float(np.max(np.abs(g)))
    step = 1.0 / gmax if gmax > 0 else 1.0
    converged = True
    n_iter = 0
    stall = 0
    for n_iter in range(1, max_iter + 1):
        t = step
        cand = lam
        fc, pc = f, p
        accepted = False
        for _ in range(100):
            cand = lam + t * g
            fc, pc = _negbin_ll(A, vals, cnts, offsets, ybar, T, cand)
            if np.isfinite(fc) and fc > f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        g_new = _negbin_grad(A, vals, cnts, offsets, ybar, T, cand, pc)
        dl = cand - lam
        dg = g_new - g
        denom = float(dl @ dg)
        step = abs(float(dl @ dl) / denom) if denom != 0.0 else 2.0 * t
        improvement = fc - f
        lam, f, g, p = cand, fc, g_new, pc
        hist.append(f)
        if improvement < tol * max(1.0, abs(f)):
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
    else:
        converged = False
    return lam, p, f, n_iter, converged, np.asarray(hist)
