"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py``.  Set ``COVAROC_PURE_PYTHON=1`` to force the
fallback.  Both backends take identical arguments, so tests can run them side
by side through :func:`get_backend`.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .errors import MalformedInputError, NumericError

MAX_BISECTION_ITERS = 80

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("COVAROC_PURE_PYTHON"):
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = _kernels_py
    BACKEND = "python"


def available_backends() -> list:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name: str | None = None):
    if name is None:
        return _impl
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mixture_loglik(y, phi, ww, wl, ls, scale=1.0, rows=False, grad=False, backend=None):
    """Mixture log-likelihood over rows of a design matrix.

    Returns ``(total, n_clamped, rows_or_None, (gww, gwl, gls) or None)``.
    """
    impl = get_backend(backend)
    y, phi, ww, wl, ls = _c(y), _c(phi), _c(ww), _c(wl), _c(ls)
    if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
        raise MalformedInputError(f"design matrix {phi.shape} does not match {y.shape[0]} scores")
    if ww.shape != wl.shape or ww.shape[1] != phi.shape[1] or ls.shape != (ww.shape[0],):
        raise MalformedInputError("parameter shapes do not match the design matrix")
    out_rows = np.empty(len(y)) if rows else None
    grads = (np.zeros_like(ww), np.zeros_like(wl), np.zeros_like(ls)) if grad else (None,) * 3
    total, clamped = impl.mixture_loglik(y, phi, ww, wl, ls, float(scale), out_rows, *grads)
    return total, clamped, out_rows, (grads if grad else None)


def mixture_cdf(pi, mu, sigma, y, backend=None):
    """Row-wise ``sum_h pi[i,h] * Phi((y[i] - mu[i,h]) / sigma[i,h])``."""
    pi, mu, sigma, y = _c(pi), _c(mu), _c(sigma), _c(y)
    out = np.empty(len(y))
    get_backend(backend).mixture_cdf(pi, mu, sigma, y, out)
    return out


def mixture_quantile(pi, mu, sigma, p, backend=None, max_iter=MAX_BISECTION_ITERS):
    """Row-wise inverse of :func:`mixture_cdf` by bisection."""
    pi, mu, sigma, p = _c(pi), _c(mu), _c(sigma), _c(p)
    if np.any(~((p > 0) & (p < 1))):
        raise MalformedInputError("quantile probabilities must lie strictly between 0 and 1")
    out = np.empty(len(p))
    failed = get_backend(backend).mixture_quantile(pi, mu, sigma, p, out, int(max_iter))
    if failed >= 0:
        smax = sigma[failed].max()
        lo = mu[failed].min() - 40 * smax
        hi = mu[failed].max() + 40 * smax
        raise NumericError(
            f"quantile bracket [{lo}, {hi}] does not contain p={p[failed]}",
            snapshot={"pi": pi[failed], "mu": mu[failed], "sigma": sigma[failed]})
    return out
