"""Empirical ROC estimates and the discrete-bin bootstrap baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PairDataset
from .errors import ConfigurationError, PreconditionError


@dataclass(frozen=True)
class BinSpec:
    """Bins ``[edges[i], edges[i+1])`` over one covariate; the last bin is closed.

    ``covariate`` names either a pair-level column directly, or a base name
    whose ``q_``/``g_`` columns must *both* fall in the bin.
    """

    covariate: str
    edges: tuple
    labels: tuple | None = None

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigurationError("bin edges must be strictly increasing, at least two")
        labels = self.labels
        if labels is None:
            labels = tuple(f"[{lo:g},{hi:g}{']' if k == len(edges) - 2 else ')'}"
                           for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])))
        if len(labels) != len(edges) - 1:
            raise ConfigurationError("need exactly one label per bin")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", tuple(labels))

    def columns(self, ds: PairDataset) -> list:
        q, g = f"q_{self.covariate}", f"g_{self.covariate}"
        if q in ds.covariate_names and g in ds.covariate_names:
            return [ds.column(q), ds.column(g)]
        return [ds.column(self.covariate)]

    def membership(self, ds: PairDataset, k: int) -> np.ndarray:
        lo, hi = self.edges[k], self.edges[k + 1]
        last = k == len(self.edges) - 2
        keep = np.ones(len(ds), dtype=bool)
        for col in self.columns(ds):
            keep &= (col >= lo) & ((col <= hi) if last else (col < hi))
        return keep


AGE_BINS = BinSpec("age", (16, 30, 50, 70), ("young", "middle", "old"))


@dataclass(frozen=True)
class BootstrapResult:
    label: str
    point: float
    lo: float
    hi: float
    replicates: np.ndarray
    n_match: int = 0
    n_nonmatch: int = 0
    missing: str | None = None

    @property
    def ci(self):
        return (self.lo, self.hi)


def _orient(scores, similarity):
    scores = np.asarray(scores, dtype=float)
    return -scores if similarity else scores


def empirical_threshold(nonmatch, fpr, similarity=False) -> np.ndarray:
    """Lower order-statistic quantile of non-match scores (raw units)."""
    nm = _orient(nonmatch, similarity)
    t = np.quantile(nm, np.asarray(fpr, dtype=float), method="lower")
    return -t if similarity else t


def empirical_roc(scores_match, scores_nonmatch, fpr_grid, similarity=False) -> np.ndarray:
    """TPR = ECDF_match(empirical non-match quantile at fpr)."""
    m = _orient(scores_match, similarity)
    nm = _orient(scores_nonmatch, similarity)
    if m.size == 0 or nm.size == 0:
        raise PreconditionError("empirical_roc needs nonempty match and non-match scores")
    t = np.quantile(nm, np.asarray(fpr_grid, dtype=float), method="lower")
    return np.searchsorted(np.sort(m), t, side="right") / m.size


def empirical_auc(scores_match, scores_nonmatch, similarity=False) -> float:
    """P(match closer than non-match) + half the tie probability (Mann-Whitney)."""
    m = _orient(scores_match, similarity)
    nm = np.sort(_orient(scores_nonmatch, similarity))
    if m.size == 0 or nm.size == 0:
        raise PreconditionError("empirical_auc needs nonempty match and non-match scores")
    greater = nm.size - np.searchsorted(nm, m, side="right")
    ties = np.searchsorted(nm, m, side="right") - np.searchsorted(nm, m, side="left")
    return float((greater.sum() + 0.5 * ties.sum()) / (m.size * nm.size))


def empirical_metric(match, nonmatch, metric="tpr", fpr=1e-3, similarity=False) -> float:
    if metric == "tpr":
        return float(empirical_roc(match, nonmatch, [fpr], similarity)[0])
    if metric == "auc":
        return empirical_auc(match, nonmatch, similarity)
    raise ConfigurationError(f"unknown baseline metric {metric!r}")


def binned_metric(ds: PairDataset, bins: BinSpec, metric="tpr", fpr=1e-3, replicates=100,
                  seed=0, similarity=False, mass=0.95) -> list:
    """Intra-bin empirical metric with a percentile bootstrap interval per bin.

    Bootstrap replicate ``r`` resamples the bin's match and non-match pairs,
    each with replacement, using seed ``seed + r``.
    """
    if replicates < 1:
        raise ConfigurationError("replicates must be >= 1")
    tail = round(50.0 * (1.0 - mass), 12)  # 1 - 0.9 is not exact
    out = []
    for k, label in enumerate(bins.labels):
        inside = bins.membership(ds, k)
        m = ds.scores[inside & ds.match]
        nm = ds.scores[inside & ~ds.match]
        if m.size < 1 or nm.size < 2:
            out.append(BootstrapResult(
                label, float("nan"), float("nan"), float("nan"), np.zeros(0), m.size, nm.size,
                missing=f"bin has {m.size} match and {nm.size} non-match pairs; "
                        "need >= 1 and >= 2"))
            continue
        point = empirical_metric(m, nm, metric, fpr, similarity)
        reps = np.empty(replicates)
        for r in range(replicates):
            rng = np.random.default_rng(seed + r)
            reps[r] = empirical_metric(rng.choice(m, m.size), rng.choice(nm, nm.size),
                                       metric, fpr, similarity)
        lo, hi = np.percentile(reps, [tail, 100.0 - tail])
        out.append(BootstrapResult(label, point, float(lo), float(hi), reps, m.size, nm.size))
    return out
