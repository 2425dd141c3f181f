# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled maximum-likelihood ascent kernels.

Same algorithms and semantics as :mod:`odflow._mle_numpy` (monotone
Barzilai-Borwein ascent with Armijo backtracking); the compiled versions
avoid the per-call array overhead that dominates at small station counts.
"""

from libc.math cimport INFINITY, fabs, isfinite, lgamma, log, log1p

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef double _digamma(double x) noexcept nogil:
    # recurrence to x >= 6, then the Bernoulli asymptotic series
    cdef double result = 0.0
    cdef double inv, inv2
    while x < 6.0:
        result -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    result += log(x) - 0.5 * inv
    result -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0
              - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))))
    return result


cdef void _matvec(double[:, ::1] A, double[::1] x, double[::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += A[i, k] * x[k]
        out[i] = acc


cdef double _poisson_ll(double[:, ::1] A, double[::1] ybar, double T,
                        double[::1] lam, double[::1] mu, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double val = 0.0
    _matvec(A, lam, mu, n)
    for i in range(n):
        if mu[i] < 0.0:
            return -INFINITY
        if ybar[i] > 0.0:
            if mu[i] == 0.0:
                return -INFINITY
            val += ybar[i] * log(mu[i])
        val -= mu[i]
    return T * val


cdef void _poisson_grad(double[:, ::1] A, double[::1] ybar, double T,
                        double[::1] lam, double[::1] mu, double[::1] g,
                        Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double ratio, acc
    _matvec(A, lam, mu, n)
    for k in range(n):
        acc = 0.0
        for i in range(n):
            ratio = ybar[i] / mu[i] if mu[i] > 0.0 else 0.0
            acc += A[i, k] * (ratio - 1.0)
        g[k] = T * acc


def poisson_ascent(A, ybar, T, lam0, tol=1e-9, max_iter=10000):
    """Compiled counterpart of :func:`odflow._mle_numpy.poisson_ascent`."""
    cdef double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] y_ = np.ascontiguousarray(ybar, dtype=np.float64)
    cdef Py_ssize_t n = A_.shape[0]
    lam_arr = np.array(lam0, dtype=np.float64)
    cdef double[::1] lam = lam_arr
    cdef double T_ = float(T)
    cdef double tol_ = float(tol)
    cdef int maxit = int(max_iter)
    hist_arr = np.empty(maxit + 1, dtype=np.float64)
    cdef double[::1] hist = hist_arr
    work = np.empty((4, n), dtype=np.float64)
    cdef double[::1] mu = work[0]
    cdef double[::1] g = work[1]
    cdef double[::1] cand = work[2]
    cdef double[::1] g_new = work[3]
    cdef double f, fc, t, step, gmax, dldg, dldl, improvement
    cdef Py_ssize_t k
    cdef int n_iter = 0, n_hist = 0, bt, stall = 0
    cdef bint accepted, converged = True

    f = _poisson_ll(A_, y_, T_, lam, mu, n)
    _poisson_grad(A_, y_, T_, lam, mu, g, n)
    hist[0] = f
    n_hist = 1
    gmax = 0.0
    for k in range(n):
        if fabs(g[k]) > gmax:
            gmax = fabs(g[k])
    step = 1.0 / gmax if gmax > 0.0 else 1.0

    with nogil:
        for n_iter in range(1, maxit + 1):
            t = step
            accepted = False
            for bt in range(100):
                for k in range(n):
                    cand[k] = lam[k] + t * g[k]
                fc = _poisson_ll(A_, y_, T_, cand, mu, n)
                if isfinite(fc) and fc > f:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            _poisson_grad(A_, y_, T_, cand, mu, g_new, n)
            dldg = 0.0
            dldl = 0.0
            for k in range(n):
                dldg += (cand[k] - lam[k]) * (g_new[k] - g[k])
                dldl += (cand[k] - lam[k]) * (cand[k] - lam[k])
            step = fabs(dldl / dldg) if dldg != 0.0 else 2.0 * t
            improvement = fc - f
            for k in range(n):
                lam[k] = cand[k]
                g[k] = g_new[k]
            f = fc
            hist[n_hist] = f
            n_hist += 1
            # spectral steps progress unevenly; stop only on a sustained stall
            if improvement < tol_ * max(1.0, fabs(f)):
                stall += 1
                if stall >= 3:
                    break
            else:
                stall = 0
        else:
            converged = False

    return lam_arr, f, n_iter, bool(converged), hist_arr[:n_hist].copy()


cdef double _negbin_ll(double[:, ::1] A, double[::1] vals, double[::1] cnts,
                       long long[::1] offsets, double[::1] ybar, double T,
                       double[::1] lam, double[::1] r, double* p_out,
                       Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double rsum = 0.0, ytot = 0.0, p, val
    _matvec(A, lam, r, n)
    for i in range(n):
        if r[i] < 0.0:
            return -INFINITY
        if r[i] == 0.0 and ybar[i] > 0.0:
            return -INFINITY
        rsum += r[i]
        ytot += ybar[i]
    if rsum == 0.0:
        p_out[0] = 0.5
        return 0.0 if ytot == 0.0 else -INFINITY
    p = rsum / (rsum + ytot)
    if p < 1e-12:
        p = 1e-12
    elif p > 1.0 - 1e-12:
        p = 1.0 - 1e-12
    p_out[0] = p
    val = T * rsum * log(p) + T * ytot * log1p(-p)
    for i in range(n):
        if r[i] == 0.0:
            continue
        for j in range(offsets[i], offsets[i + 1]):
            val += cnts[j] * lgamma(vals[j] + r[i])
        val -= T * lgamma(r[i])
    return val


cdef void _negbin_grad(double[:, ::1] A, double[::1] vals, double[::1] cnts,
                       long long[::1] offsets, double[::1] ybar, double T,
                       double[::1] lam, double p, double[::1] r, double[::1] gr,
                       double[::1] g, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double acc, logp = log(p)
    _matvec(A, lam, r, n)
    for i in range(n):
        if ybar[i] == 0.0 and r[i] <= 1e-300:
            gr[i] = 0.0
            continue
        if r[i] < 1e-300:
            r[i] = 1e-300
        acc = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            acc += cnts[j] * _digamma(vals[j] + r[i])
        gr[i] = acc - T * _digamma(r[i]) + T * logp
    for k in range(n):
        acc = 0.0
        for i in range(n):
            acc += A[i, k] * gr[i]
        g[k] = acc


def negbin_ascent(A, vals, cnts, offsets, ybar, T, lam0, tol=1e-9, max_iter=10000):
    """Compiled counterpart of :func:`odflow._mle_numpy.negbin_ascent`."""
    cdef double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] vals_ = np.ascontiguousarray(vals, dtype=np.float64)
    cdef double[::1] cnts_ = np.ascontiguousarray(cnts, dtype=np.float64)
    cdef long long[::1] off_ = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef double[::1] y_ = np.ascontiguousarray(ybar, dtype=np.float64)
    cdef Py_ssize_t n = A_.shape[0]
    lam_arr = np.array(lam0, dtype=np.float64)
    cdef double[::1] lam = lam_arr
    cdef double T_ = float(T)
    cdef double tol_ = float(tol)
    cdef int maxit = int(max_iter)
    hist_arr = np.empty(maxit + 1, dtype=np.float64)
    cdef double[::1] hist = hist_arr
    work = np.empty((6, n), dtype=np.float64)
    cdef double[::1] r = work[0]
    cdef double[::1] gr = work[1]
    cdef double[::1] g = work[2]
    cdef double[::1] cand = work[3]
    cdef double[::1] g_new = work[4]
    cdef double f, fc, t, step, gmax, dldg, dldl, improvement
    cdef double p = 0.5, pc = 0.5
    cdef Py_ssize_t k
    cdef int n_iter = 0, n_hist = 0, bt, stall = 0
    cdef bint accepted, converged = True

    f = _negbin_ll(A_, vals_, cnts_, off_, y_, T_, lam, r, &p, n)
    _negbin_grad(A_, vals_, cnts_, off_, y_, T_, lam, p if p > 0.0 else 0.5, r, gr, g, n)
    hist[0] = f
    n_hist = 1
    gmax = 0.0
    for k in range(n):
        if fabs(g[k]) > gmax:
            gmax = fabs(g[k])
    step = 1.0 / gmax if gmax > 0.0 else 1.0

    with nogil:
        for n_iter in range(1, maxit + 1):
            t = step
            accepted = False
            for bt in range(100):
                for k in range(n):
                    cand[k] = lam[k] + t * g[k]
                fc = _negbin_ll(A_, vals_, cnts_, off_, y_, T_, cand, r, &pc, n)
                if isfinite(fc) and fc > f:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            _negbin_grad(A_, vals_, cnts_, off_, y_, T_, cand, pc, r, gr, g_new, n)
            dldg = 0.0
            dldl = 0.0
            for k in range(n):
                dldg += (cand[k] - lam[k]) * (g_new[k] - g[k])
                dldl += (cand[k] - lam[k]) * (cand[k] - lam[k])
            step = fabs(dldl / dldg) if dldg != 0.0 else 2.0 * t
            improvement = fc - f
            for k in range(n):
                lam[k] = cand[k]
                g[k] = g_new[k]
            f = fc
            p = pc
            hist[n_hist] = f
            n_hist += 1
            if improvement < tol_ * max(1.0, fabs(f)):
                stall += 1
                if stall >= 3:
                    break
            else:
                stall = 0
        else:
            converged = False

    return lam_arr, p, f, n_iter, bool(converged), hist_arr[:n_hist].copy()
