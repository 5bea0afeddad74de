"""Covariate-conditional ROC metrics from a pair of posteriors.

For distance scores the ROC is ``TPR(fpr | x) = F_match(F_nonmatch^-1(fpr | x) | x)``,
evaluated separately for every posterior draw (draw ``i`` of the match model is
paired with draw ``i`` of the non-match model).  Both CDFs are taken in raw
score units.  With ``similarity=True`` larger scores mean "more alike" and the
composition becomes ``1 - F_match(F_nonmatch^-1(1 - fpr))``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateOracleError, PreconditionError
from .inference import Posterior
from .mixture import MixtureParams, locations_at, weights_at

DEFAULT_FPR = 1e-3
DEFAULT_MASS = 0.95
_CHUNK_ROWS = 200_000


@dataclass(frozen=True)
class MetricResult:
    point: float
    lo: float
    hi: float
    draws: np.ndarray
    mass: float = DEFAULT_MASS

    @property
    def interval(self):
        return (self.lo, self.hi)

    @classmethod
    def from_draws(cls, values, mass=DEFAULT_MASS) -> "MetricResult":
        values = np.asarray(values, dtype=float)
        tail = round(50.0 * (1.0 - mass), 12)  # 1 - 0.9 is not exact
        lo, med, hi = np.percentile(values, [tail, 50.0, 100.0 - tail])
        return cls(float(med), float(min(lo, med)), float(max(hi, med)), values, mass)

    def to_dict(self):
        return {"point": self.point, "lo": self.lo, "hi": self.hi, "mass": self.mass}


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray  # (F,)
    tpr: np.ndarray  # (D, F)


def auc_grid(n_log=256, n_lin=256) -> np.ndarray:
    """Log-spaced on [1e-6, 0.1] then linear on [0.1, 1 - 1e-6]."""
    return np.unique(np.concatenate([np.logspace(-6, -1, n_log),
                                     np.linspace(0.1, 1.0 - 1e-6, n_lin)]))


def quantile(p: MixtureParams, phi, prob: float) -> float:
    """Inverse CDF of one mixture at one feature vector, by bisection."""
    if not 0.0 < prob < 1.0:
        raise PreconditionError("prob must lie strictly between 0 and 1")
    pi = weights_at(p, phi)[None, :]
    mu = locations_at(p, phi)[None, :]
    return float(kernels.mixture_quantile(pi, mu, p.sigmas[None, :], [prob])[0])


def query_matrix(post: Posterior, queries) -> np.ndarray:
    """(G, C) native covariate matrix for ``post`` from a list of name->value mappings.

    Queries may carry extra covariates used only by the other stream's model.
    """
    rows = []
    for q in queries:
        if not isinstance(q, Mapping):
            raise ConfigurationError("covariate queries must map covariate names to values")
        try:
            rows.append([float(q[name]) for name in post.covariate_names])
        except KeyError as e:
            raise ConfigurationError(f"query is missing covariate {e.args[0]!r}") from None
    return np.asarray(rows, dtype=float).reshape(len(rows), len(post.covariate_names))


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _threshold_probs(fpr, similarity):
    fpr = np.asarray(fpr, dtype=float)
    return 1.0 - fpr if similarity else fpr


def _tpr_block(comp_m, comp_nm, fprs, similarity):
    """TPR for every (draw, gridpoint) row in the given component blocks at every fpr."""
    pi_m, mu_m, s_m = (_flat(a) for a in comp_m)
    pi_n, mu_n, s_n = (_flat(a) for a in comp_nm)
    m, F = len(pi_m), len(fprs)
    rep = np.repeat(np.arange(m), F)
    probs = np.tile(_threshold_probs(fprs, similarity), m)
    t = kernels.mixture_quantile(pi_n[rep], mu_n[rep], s_n[rep], probs)
    c = kernels.mixture_cdf(pi_m[rep], mu_m[rep], s_m[rep], t)
    tpr = 1.0 - c if similarity else c
    return np.clip(tpr, 0.0, 1.0).reshape(m, F)


def tpr_matrix(post_match: Posterior, post_nonmatch: Posterior, queries, fpr_grid,
               similarity=False, workers=1) -> np.ndarray:
    """Per-draw TPR at every query and fpr; shape (D, G, F)."""
    if post_match.n_draws != post_nonmatch.n_draws:
        raise ConfigurationError(
            f"match model has {post_match.n_draws} draws, non-match model {post_nonmatch.n_draws}")
    fprs = np.atleast_1d(np.asarray(fpr_grid, dtype=float))
    if np.any((fprs <= 0) | (fprs >= 1)):
        raise PreconditionError("fpr values must lie strictly between 0 and 1")
    queries = list(queries)
    if not queries:
        raise PreconditionError("need at least one covariate query")
    D, G, F = post_match.n_draws, len(queries), len(fprs)
    X_m = query_matrix(post_match, queries)
    X_n = query_matrix(post_nonmatch, queries)
    per_chunk = max(1, _CHUNK_ROWS // (D * F))
    chunks = [slice(s, min(s + per_chunk, G)) for s in range(0, G, per_chunk)]

    def run(sl):
        # components are built per chunk to bound memory on dense grids
        block_m = post_match.components(X_m[sl])
        block_n = post_nonmatch.components(X_n[sl])
        return _tpr_block(block_m, block_n, fprs, similarity).reshape(D, -1, F)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return np.concatenate(parts, axis=1)


def roc_at(post_match, post_nonmatch, q, fpr_grid, similarity=False) -> RocCurve:
    fprs = np.asarray(fpr_grid, dtype=float)
    if fprs.ndim != 1 or np.any(np.diff(fprs) <= 0):
        raise PreconditionError("fpr grid must be strictly increasing")
    tpr = tpr_matrix(post_match, post_nonmatch, [q], fprs, similarity)[:, 0, :]
    return RocCurve(fprs, tpr)


def _auc_from_tpr(fprs, tpr):
    x = np.concatenate([[0.0], fprs, [1.0]])
    y = np.concatenate([np.zeros(tpr.shape[:-1] + (1,)), tpr, np.ones(tpr.shape[:-1] + (1,))],
                       axis=-1)
    return np.sum(np.diff(x) * 0.5 * (y[..., 1:] + y[..., :-1]), axis=-1)


def tpr_at_fpr(post_match, post_nonmatch, q, fpr=DEFAULT_FPR, mass=DEFAULT_MASS,
               similarity=False) -> MetricResult:
    if not 0 < fpr < 1:
        raise PreconditionError("fpr must lie strictly between 0 and 1")
    tpr = tpr_matrix(post_match, post_nonmatch, [q], [fpr], similarity)[:, 0, 0]
    return MetricResult.from_draws(tpr, mass)


def auc_at(post_match, post_nonmatch, q, mass=DEFAULT_MASS, similarity=False,
           grid=None) -> MetricResult:
    fprs = auc_grid() if grid is None else np.asarray(grid)
    tpr = tpr_matrix(post_match, post_nonmatch, [q], fprs, similarity)[:, 0, :]
    return MetricResult.from_draws(_auc_from_tpr(fprs, tpr), mass)


def threshold_draws(post_nonmatch: Posterior, queries, fpr, similarity=False) -> np.ndarray:
    """Raw-unit score thresholds attaining ``fpr`` under each draw; shape (D, G)."""
    if not 0 < fpr < 1:
        raise PreconditionError("fpr must lie strictly between 0 and 1")
    X = query_matrix(post_nonmatch, queries)
    p = float(_threshold_probs(fpr, similarity))
    per_chunk = max(1, _CHUNK_ROWS // post_nonmatch.n_draws)
    parts = []
    for s in range(0, len(X), per_chunk):
        pi, mu, sd = post_nonmatch.components(X[s:s + per_chunk])
        D, G, _ = pi.shape
        t = kernels.mixture_quantile(_flat(pi), _flat(mu), _flat(sd), np.full(D * G, p))
        parts.append(t.reshape(D, G))
    return np.concatenate(parts, axis=1)


def threshold_at(post_nonmatch, q, fpr=DEFAULT_FPR, mass=DEFAULT_MASS,
                 similarity=False) -> MetricResult:
    """Score threshold for a target FPR.  For distances, call "match" when score < threshold.

    A conservative operating point uses an interval edge rather than the median:
    ``hi`` for distances, ``lo`` for similarities.
    """
    return MetricResult.from_draws(threshold_draws(post_nonmatch, [q], fpr, similarity)[:, 0], mass)


METRICS = ("tpr", "auc", "threshold")


def metric_draws(post_match, post_nonmatch, grid: Sequence[Mapping], metric="tpr",
                 fpr=DEFAULT_FPR, similarity=False, workers=1) -> np.ndarray:
    """Per-draw metric values at every gridpoint; shape (D, G)."""
    if metric == "tpr":
        return tpr_matrix(post_match, post_nonmatch, grid, [fpr], similarity, workers)[:, :, 0]
    if metric == "auc":
        fprs = auc_grid()
        return _auc_from_tpr(fprs, tpr_matrix(post_match, post_nonmatch, grid, fprs,
                                              similarity, workers))
    if metric == "threshold":
        return threshold_draws(post_nonmatch, grid, fpr, similarity)
    raise ConfigurationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def metric_surface(post_match, post_nonmatch, grid, metric="tpr", fpr=DEFAULT_FPR,
                   mass=DEFAULT_MASS, similarity=False, workers=1) -> list:
    """One :class:`MetricResult` per gridpoint, in grid order."""
    grid = list(grid)
    if not grid:
        raise PreconditionError("grid must not be empty")
    values = metric_draws(post_match, post_nonmatch, grid, metric, fpr, similarity, workers)
    return [MetricResult.from_draws(values[:, g], mass) for g in range(len(grid))]


def r_squared(estimates, oracle, mass=0.90) -> MetricResult:
    """Per-draw coefficient of determination against oracle values.

    ``estimates`` is (D, G) per-draw metric values or a single (G,) vector.
    """
    oracle = np.asarray(oracle, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if oracle.ndim != 1 or est.shape[1] != oracle.size:
        raise PreconditionError("estimates and oracle must cover the same gridpoints")
    if oracle.size < 2:
        raise DegenerateOracleError("need at least two oracle values")
    ss_tot = float(np.sum((oracle - oracle.mean()) ** 2))
    if not ss_tot > 0:
        raise DegenerateOracleError("oracle values have zero variance")
    r2 = 1.0 - np.sum((est - oracle) ** 2, axis=1) / ss_tot
    return MetricResult.from_draws(r2, mass)
