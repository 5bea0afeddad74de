# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Keep signatures identical to ``_kernels_py``."""

import numpy as np

from libc.math cimport erfc, exp, log, fabs, sqrt, M_PI

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)
cdef double LOG_DENSITY_FLOOR = -745.0
cdef double INV_SQRT2 = 0.7071067811865476


cdef inline double _ncdf(double z) nogil:
    return 0.5 * erfc(-z * INV_SQRT2)


def mixture_loglik(const double[::1] y, const double[:, ::1] phi, const double[:, ::1] ww,
                   const double[:, ::1] wl, const double[::1] ls, double scale,
                   double[::1] rows, double[:, ::1] gww, double[:, ::1] gwl, double[::1] gls):
    cdef Py_ssize_t n = phi.shape[0], nf = phi.shape[1], H = ww.shape[0]
    cdef Py_ssize_t i, h, k
    cdef bint want_rows = rows is not None
    cdef bint want_grad = gww is not None
    cdef double[::1] a = np.empty(H), z = np.empty(H), lc = np.empty(H)
    cdef double[::1] inv_s = np.empty(H)
    cdef double amax, lse_a, mu, cmax, acc, ll, r, pi_h, cw, cl, total = 0.0
    cdef long n_clamped = 0
    cdef const double* row

    for h in range(H):
        inv_s[h] = exp(-ls[h])

    with nogil:
        for i in range(n):
            row = &phi[i, 0]
            amax = -1e308
            for h in range(H):
                acc = 0.0
                mu = 0.0
                for k in range(nf):
                    acc = acc + ww[h, k] * row[k]
                    mu = mu + wl[h, k] * row[k]
                a[h] = acc
                if acc > amax:
                    amax = acc
                z[h] = (y[i] - mu) * inv_s[h]
            acc = 0.0
            for h in range(H):
                acc = acc + exp(a[h] - amax)
            lse_a = amax + log(acc)
            cmax = -1e308
            for h in range(H):
                lc[h] = a[h] - lse_a - HALF_LOG_2PI - ls[h] - 0.5 * z[h] * z[h]
                if lc[h] > cmax:
                    cmax = lc[h]
            acc = 0.0
            for h in range(H):
                acc = acc + exp(lc[h] - cmax)
            ll = cmax + log(acc)
            if want_grad:
                for h in range(H):
                    r = exp(lc[h] - ll)
                    pi_h = exp(a[h] - lse_a)
                    cw = scale * (r - pi_h)
                    cl = scale * r * z[h] * inv_s[h]
                    gls[h] += scale * r * (z[h] * z[h] - 1.0)
                    for k in range(nf):
                        gww[h, k] += cw * row[k]
                        gwl[h, k] += cl * row[k]
            if ll < LOG_DENSITY_FLOOR:
                ll = LOG_DENSITY_FLOOR
                n_clamped += 1
            if want_rows:
                rows[i] = ll
            total += ll
    return scale * total, n_clamped


cdef inline double _cdf_row(const double[:, ::1] pi, const double[:, ::1] mu,
                            const double[:, ::1] sigma, Py_ssize_t i, double y) nogil:
    cdef Py_ssize_t h
    cdef double acc = 0.0
    for h in range(pi.shape[1]):
        acc += pi[i, h] * _ncdf((y - mu[i, h]) / sigma[i, h])
    return acc


def mixture_cdf(const double[:, ::1] pi, const double[:, ::1] mu, const double[:, ::1] sigma,
                const double[::1] y, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(pi.shape[0]):
            out[i] = _cdf_row(pi, mu, sigma, i, y[i])


def mixture_quantile(const double[:, ::1] pi, const double[:, ::1] mu, const double[:, ::1] sigma,
                     const double[::1] p, double[::1] out, int max_iter):
    cdef Py_ssize_t i, h, m = pi.shape[0], H = pi.shape[1]
    cdef int it
    cdef double lo, hi, mid, smax, c_lo, c_hi
    cdef Py_ssize_t failed = -1
    with nogil:
        for i in range(m):
            lo = mu[i, 0]
            hi = mu[i, 0]
            smax = sigma[i, 0]
            for h in range(1, H):
                if mu[i, h] < lo:
                    lo = mu[i, h]
                if mu[i, h] > hi:
                    hi = mu[i, h]
                if sigma[i, h] > smax:
                    smax = sigma[i, h]
            lo = lo - 40.0 * smax
            hi = hi + 40.0 * smax
            if _cdf_row(pi, mu, sigma, i, lo) > p[i] or _cdf_row(pi, mu, sigma, i, hi) < p[i]:
                failed = i
                break
            for it in range(max_iter):
                mid = 0.5 * (lo + hi)
                if mid == lo or mid == hi:
                    break
                if _cdf_row(pi, mu, sigma, i, mid) < p[i]:
                    lo = mid
                else:
                    hi = mid
            c_lo = _cdf_row(pi, mu, sigma, i, lo)
            c_hi = _cdf_row(pi, mu, sigma, i, hi)
            out[i] = lo if fabs(c_lo - p[i]) <= fabs(c_hi - p[i]) else hi
    if failed >= 0:
        for i in range(m):
            out[i] = np.nan
    return failed
