"""Gaussian radial basis functions on an evenly spaced grid over normalized covariates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateRangeError, EmptyBasisError, MalformedInputError, PreconditionError

# (bandwidth multiplier on grid spacing, prior coefficient scale)
SMOOTHNESS = {
    "smooth": (1.0, 1.0),
    "rough": (0.75, 2.0),
}


@dataclass(frozen=True)
class BasisConfig:
    grid: tuple = (10,)
    bandwidth: float | None = None
    prune_distance: float = 1.0
    bandwidth_scale: float = 1.0

    def __post_init__(self):
        grid = (self.grid,) if np.isscalar(self.grid) else tuple(self.grid)
        if any(int(g) < 1 for g in grid):
            raise PreconditionError("grid counts must be >= 1")
        object.__setattr__(self, "grid", tuple(int(g) for g in grid))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise PreconditionError("bandwidth must be positive")
        if not self.prune_distance > 0:
            raise PreconditionError("prune_distance must be positive")

    def counts_for(self, dim: int) -> tuple:
        if len(self.grid) == dim:
            return self.grid
        if len(self.grid) == 1:
            return self.grid * dim
        raise MalformedInputError(f"grid {self.grid} does not match {dim} covariates")


@dataclass(frozen=True)
class BasisSet:
    centers: np.ndarray  # (M, C), all centers including pruned ones
    bandwidth: float
    active_mask: np.ndarray  # (M,)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float)
        centers = centers.reshape(len(centers), -1) if centers.size else centers.reshape(0, 0)
        mask = np.array(self.active_mask, dtype=bool).reshape(len(centers))
        centers.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "active_mask", mask)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @classmethod
    def empty(cls, dim: int = 0) -> "BasisSet":
        """Basis with no centers; features reduce to the constant column."""
        return cls(np.zeros((0, dim)), 1.0, np.zeros(0, dtype=bool))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def active_centers(self) -> np.ndarray:
        return self.centers[self.active_mask]

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    @property
    def n_features(self) -> int:
        """Width of the design matrix: active RBFs plus the constant column."""
        return self.n_active + 1

    def to_dict(self):
        return {
            "centers": self.centers.tolist(),
            "dim": self.dim,
            "bandwidth": self.bandwidth,
            "active_mask": self.active_mask.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        centers = np.asarray(d["centers"], dtype=float).reshape(-1, int(d["dim"]))
        return cls(centers, d["bandwidth"], d["active_mask"])


def place_grid(cfg: BasisConfig, covariate_dim: int, data_range: Sequence[Sequence[float]]) -> BasisSet:
    """Cartesian product of per-dimension linspaces over ``data_range``.

    With no explicit ``cfg.bandwidth`` the kernel width is the largest grid
    spacing times ``cfg.bandwidth_scale``.
    """
    if covariate_dim < 1:
        raise PreconditionError("covariate_dim must be >= 1; use BasisSet.empty() for none")
    data_range = np.asarray(data_range, dtype=float).reshape(covariate_dim, 2)
    counts = cfg.counts_for(covariate_dim)
    axes, spacings = [], []
    for (lo, hi), count in zip(data_range, counts):
        if not hi > lo:
            raise DegenerateRangeError(f"range [{lo}, {hi}] has zero width")
        if count == 1:
            axes.append(np.array([(lo + hi) / 2.0]))
            spacings.append(hi - lo)
        else:
            axes.append(np.linspace(lo, hi, count))
            spacings.append((hi - lo) / (count - 1))
    centers = np.array(list(itertools.product(*axes)), dtype=float)
    bandwidth = cfg.bandwidth if cfg.bandwidth is not None else max(spacings) * cfg.bandwidth_scale
    return BasisSet(centers, bandwidth, np.ones(len(centers), dtype=bool))


def prune(basis: BasisSet, data, prune_distance: float = 1.0) -> BasisSet:
    """Deactivate centers farther than ``prune_distance`` from every data point.

    Only currently active centers can stay active, so pruning is idempotent and
    monotone in ``prune_distance``.
    """
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise PreconditionError("prune needs at least one data point")
    data = data.reshape(len(data), basis.dim)
    near = np.zeros(len(basis.centers), dtype=bool)
    # chunk over data to bound memory on large streams
    for start in range(0, len(data), 4096):
        d = cdist(basis.centers, data[start:start + 4096])
        near |= d.min(axis=1) <= prune_distance
    mask = basis.active_mask & near
    if not mask.any():
        raise EmptyBasisError(
            f"all {len(mask)} centers pruned at prune_distance={prune_distance}; "
            "increase prune_distance")
    return replace(basis, active_mask=mask)


def featurize(basis: BasisSet, x) -> np.ndarray:
    """RBF activations ``exp(-|x - c|^2 / (2 l^2))`` of one point at the active centers."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != basis.dim:
        raise MalformedInputError(f"expected covariate vector of length {basis.dim}, got {x.shape}")
    return featurize_many(basis, x[None, :])[0]


def featurize_many(basis: BasisSet, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != basis.dim:
        raise MalformedInputError(f"expected array of shape (n, {basis.dim}), got {X.shape}")
    centers = basis.active_centers
    if len(centers) == 0:
        return np.zeros((len(X), 0))
    d2 = cdist(X, centers, metric="sqeuclidean")
    return np.exp(-d2 / (2.0 * basis.bandwidth ** 2))


def design_matrix(basis: BasisSet, X) -> np.ndarray:
    """Features with the always-on constant column appended last."""
    X = np.asarray(X, dtype=float)
    if basis.dim == 0:
        X = X.reshape(len(X) if X.ndim == 2 else 1, 0)
    feats = featurize_many(basis, X)
    return np.ascontiguousarray(np.column_stack([feats, np.ones(len(feats))]))
