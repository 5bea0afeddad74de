"""Pure numpy implementations of the hot kernels.

Signatures mirror the compiled ``_kernels`` extension exactly; see
:mod:`covaroc.kernels` for the dispatching wrappers and argument conventions.
"""

import numpy as np
from scipy.special import logsumexp, ndtr

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
LOG_DENSITY_FLOOR = -745.0


def mixture_loglik(y, phi, ww, wl, ls, scale, rows, gww, gwl, gls):
    """Sum of clamped per-row mixture log densities, times ``scale``.

    ``rows`` (n,) receives the per-row values when not None.  When ``gww`` is
    not None the scaled gradients are *added* into ``gww``, ``gwl``, ``gls``.
    Returns ``(total, n_clamped)``.
    """
    a = phi @ ww.T
    log_pi = a - logsumexp(a, axis=1, keepdims=True)
    inv_s = np.exp(-ls)
    z = (y[:, None] - phi @ wl.T) * inv_s
    lc = log_pi - HALF_LOG_2PI - ls - 0.5 * z * z
    ll = logsumexp(lc, axis=1)
    low = ll < LOG_DENSITY_FLOOR
    clamped = np.where(low, LOG_DENSITY_FLOOR, ll)
    if rows is not None:
        rows[:] = clamped
    if gww is not None:
        r = np.exp(lc - ll[:, None])
        gww += scale * ((r - np.exp(log_pi)).T @ phi)
        gwl += scale * ((r * z * inv_s).T @ phi)
        gls += scale * (r * (z * z - 1.0)).sum(axis=0)
    return scale * float(clamped.sum()), int(low.sum())


def mixture_cdf(pi, mu, sigma, y, out):
    out[:] = (pi * ndtr((y[:, None] - mu) / sigma)).sum(axis=1)


def mixture_quantile(pi, mu, sigma, p, out, max_iter):
    """Bisection for ``cdf(y) = p`` row by row; returns the index of a failed bracket or -1."""
    smax = sigma.max(axis=1)
    lo = mu.min(axis=1) - 40.0 * smax
    hi = mu.max(axis=1) + 40.0 * smax
    c_lo = (pi * ndtr((lo[:, None] - mu) / sigma)).sum(axis=1)
    c_hi = (pi * ndtr((hi[:, None] - mu) / sigma)).sum(axis=1)
    bad = np.flatnonzero((c_lo > p) | (c_hi < p))
    if len(bad):
        out[:] = np.nan
        return int(bad[0])
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = (pi * ndtr((mid[:, None] - mu) / sigma)).sum(axis=1) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    c_lo = (pi * ndtr((lo[:, None] - mu) / sigma)).sum(axis=1)
    c_hi = (pi * ndtr((hi[:, None] - mu) / sigma)).sum(axis=1)
    out[:] = np.where(np.abs(c_lo - p) <= np.abs(c_hi - p), lo, hi)
    return -1
