"""Synthetic ground truth: closed-form conditional score mixtures over covariates.

A :class:`TruthSpec` fully describes how a synthetic pair dataset is drawn, so
the exact conditional CDFs are available for oracles.  Scores are truncated at
zero by resampling when ``truncate`` is set (distances cannot be negative), and
the analytic CDF/quantile account for that truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr, softmax

from . import kernels
from .baseline import empirical_metric
from .dataset import PairDataset
from .errors import ConfigurationError
from .metrics import auc_grid

TREND_KINDS = ("constant", "linear", "sinusoidal", "bump", "diagonal-ridge")


@dataclass(frozen=True)
class Trend:
    """A scalar function of the covariate vector, chosen from a small library.

    ``constant``       value
    ``linear``         intercept + slopes . x
    ``sinusoidal``     base + amplitude * sin(2 pi frequency x[dim] + phase)
    ``bump``           base + height * exp(-|x - center|^2 / (2 width^2))
    ``diagonal-ridge`` base + height * exp(-(x_q - x_g)^2 / (2 across^2))
                                     * exp(-((x_q + x_g)/2 - center)^2 / (2 along^2))
                       over the covariate pair ``dims``
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TREND_KINDS:
            raise ConfigurationError(f"unknown trend kind {self.kind!r}; expected {TREND_KINDS}")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X = X.reshape(len(X), -1) if X.ndim == 2 else X.reshape(1, -1)
        p = self.params
        n = len(X)
        if self.kind == "constant":
            return np.full(n, float(p.get("value", 0.0)))
        if self.kind == "linear":
            slopes = np.asarray(p.get("slopes", np.zeros(X.shape[1])), dtype=float)
            return float(p.get("intercept", 0.0)) + X @ slopes
        if self.kind == "sinusoidal":
            x = X[:, int(p.get("dim", 0))]
            return (float(p.get("base", 0.0)) + float(p["amplitude"])
                    * np.sin(2 * math.pi * float(p.get("frequency", 1.0)) * x
                             + float(p.get("phase", 0.0))))
        if self.kind == "bump":
            c = np.asarray(p["center"], dtype=float)
            d2 = np.sum((X - c) ** 2, axis=1)
            return float(p.get("base", 0.0)) + float(p["height"]) * np.exp(
                -d2 / (2 * float(p["width"]) ** 2))
        qd, gd = p.get("dims", (0, 1))
        xq, xg = X[:, qd], X[:, gd]
        across = np.exp(-(xq - xg) ** 2 / (2 * float(p["across"]) ** 2))
        along = np.exp(-((xq + xg) / 2 - float(p["center"])) ** 2 / (2 * float(p["along"]) ** 2))
        return float(p.get("base", 0.0)) + float(p["height"]) * across * along

    def to_dict(self):
        return {"kind": self.kind, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def const(value) -> Trend:
    return Trend("constant", {"value": value})


@dataclass(frozen=True)
class Component:
    location: Trend
    scale: float
    weight_logit: Trend = field(default_factory=lambda: const(0.0))

    def to_dict(self):
        return {"location": self.location.to_dict(), "scale": self.scale,
                "weight_logit": self.weight_logit.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Trend.from_dict(d["location"]), float(d["scale"]),
                   Trend.from_dict(d.get("weight_logit", {"kind": "constant"})))


@dataclass(frozen=True)
class ConditionalTruth:
    """Mixture of normals whose weights and locations are trends in x."""

    components: tuple
    truncate: bool = True

    def params_at(self, X):
        X = np.asarray(X, dtype=float)
        X = X.reshape(len(X), -1) if X.ndim == 2 else X.reshape(1, -1)
        logits = np.column_stack([c.weight_logit(X) for c in self.components])
        mu = np.column_stack([c.location(X) for c in self.components])
        sigma = np.tile([c.scale for c in self.components], (len(X), 1)).astype(float)
        return softmax(logits, axis=1), mu, sigma

    def _mass_below_zero(self, pi, mu, sigma):
        if not self.truncate:
            return np.zeros(len(pi))
        return np.sum(pi * ndtr(-mu / sigma), axis=1)

    def cdf(self, y, X) -> np.ndarray:
        pi, mu, sigma = self.params_at(X)
        y = np.broadcast_to(np.asarray(y, dtype=float), (len(pi),))
        F = np.sum(pi * ndtr((y[:, None] - mu) / sigma), axis=1)
        if not self.truncate:
            return F
        F0 = self._mass_below_zero(pi, mu, sigma)
        return np.where(y < 0, 0.0, (F - F0) / (1.0 - F0))

    def quantile(self, p, X) -> np.ndarray:
        pi, mu, sigma = self.params_at(X)
        p = np.broadcast_to(np.asarray(p, dtype=float), (len(pi),))
        F0 = self._mass_below_zero(pi, mu, sigma)
        return kernels.mixture_quantile(pi, mu, sigma, F0 + p * (1.0 - F0))

    def sample(self, X, rng) -> np.ndarray:
        pi, mu, sigma = self.params_at(X)
        n = len(pi)
        out = np.empty(n)
        todo = np.arange(n)
        for _ in range(1000):
            u = rng.random(len(todo))
            comp = (u[:, None] > np.cumsum(pi[todo], axis=1)).sum(axis=1)
            comp = np.minimum(comp, pi.shape[1] - 1)
            rows = todo
            out[rows] = mu[rows, comp] + sigma[rows, comp] * rng.standard_normal(len(rows))
            if not self.truncate:
                break
            todo = rows[out[rows] < 0]
            if len(todo) == 0:
                break
        else:
            raise ConfigurationError("truncation resampling failed; truth puts ~no mass above 0")
        return out

    def to_dict(self):
        return {"components": [c.to_dict() for c in self.components], "truncate": self.truncate}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Component.from_dict(c) for c in d["components"]),
                   bool(d.get("truncate", True)))


@dataclass(frozen=True)
class CovariateSampler:
    """``uniform`` box, or ``diagonal`` band pairing each query dim with a gallery dim.

    For the band, ``low``/``high`` describe one base covariate; columns come out
    as (query, gallery).  The query value has density proportional to
    ``exp(-decay * (x - low) / (high - low))``; the gallery value is the query
    value plus uniform noise of ``half_width``, clipped to the range.
    """

    kind: str = "uniform"
    low: tuple = ()
    high: tuple = ()
    half_width: float = 0.0
    decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "diagonal"):
            raise ConfigurationError(f"unknown covariate sampler {self.kind!r}")
        object.__setattr__(self, "low", tuple(float(v) for v in np.atleast_1d(self.low)))
        object.__setattr__(self, "high", tuple(float(v) for v in np.atleast_1d(self.high)))

    @property
    def dim(self) -> int:
        return len(self.low) * (2 if self.kind == "diagonal" else 1)

    @property
    def ranges(self) -> list:
        """(low, high) per output column."""
        base = list(zip(self.low, self.high))
        return base * 2 if self.kind == "diagonal" else base

    def sample(self, n, rng) -> np.ndarray:
        low, high = np.asarray(self.low), np.asarray(self.high)
        if self.kind == "uniform":
            return low + (high - low) * rng.random((n, len(low)))
        u = rng.random((n, len(low)))
        if self.decay > 0:
            frac = -np.log1p(-u * (1.0 - math.exp(-self.decay))) / self.decay
        else:
            frac = u
        xq = low + (high - low) * frac
        xg = np.clip(xq + self.half_width * (2 * rng.random((n, len(low))) - 1), low, high)
        return np.hstack([xq, xg])

    def to_dict(self):
        return {"kind": self.kind, "low": list(self.low), "high": list(self.high),
                "half_width": self.half_width, "decay": self.decay}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TruthSpec:
    match: ConditionalTruth
    nonmatch: ConditionalTruth
    sampler: CovariateSampler
    n_match: int
    n_nonmatch: int
    covariate_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if len(self.covariate_names) != self.sampler.dim:
            raise ConfigurationError(
                f"{len(self.covariate_names)} covariate names for a {self.sampler.dim}-d sampler")
        if self.n_match < 0 or self.n_nonmatch < 0:
            raise ConfigurationError("counts must be nonnegative")

    def with_counts(self, n_match, n_nonmatch) -> "TruthSpec":
        return TruthSpec(self.match, self.nonmatch, self.sampler, int(n_match), int(n_nonmatch),
                         self.covariate_names)

    def truth(self, match: bool) -> ConditionalTruth:
        return self.match if match else self.nonmatch

    def to_dict(self):
        return {"match": self.match.to_dict(), "nonmatch": self.nonmatch.to_dict(),
                "sampler": self.sampler.to_dict(), "n_match": self.n_match,
                "n_nonmatch": self.n_nonmatch, "covariate_names": list(self.covariate_names)}

    @classmethod
    def from_dict(cls, d):
        return cls(ConditionalTruth.from_dict(d["match"]),
                   ConditionalTruth.from_dict(d["nonmatch"]),
                   CovariateSampler.from_dict(d["sampler"]), int(d["n_match"]),
                   int(d["n_nonmatch"]), tuple(d.get("covariate_names", ())))


def generate(spec: TruthSpec, seed) -> PairDataset:
    """Draw covariates then scores independently per record; match records first."""
    rng = np.random.default_rng(seed)
    X_m = spec.sampler.sample(spec.n_match, rng)
    y_m = spec.match.sample(X_m, rng) if spec.n_match else np.zeros(0)
    X_n = spec.sampler.sample(spec.n_nonmatch, rng)
    y_n = spec.nonmatch.sample(X_n, rng) if spec.n_nonmatch else np.zeros(0)
    n = spec.n_match + spec.n_nonmatch
    return PairDataset(
        query_ids=[f"q{i}" for i in range(n)], gallery_ids=[f"g{i}" for i in range(n)],
        scores=np.concatenate([y_m, y_n]),
        covariates=np.vstack([X_m, X_n]).reshape(n, spec.sampler.dim),
        match=np.arange(n) < spec.n_match, diagonal=np.zeros(n, dtype=bool),
        covariate_names=spec.covariate_names)


def _as_grid(grid, dim) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if dim == 0:
        return grid.reshape(len(grid) if grid.ndim == 2 else 1, 0)
    return grid.reshape(-1, dim)


def truth_metric(spec: TruthSpec, grid, metric="tpr", fpr=1e-3, similarity=False) -> np.ndarray:
    """Exact metric of the truth at each gridpoint (rows of ``grid``)."""
    grid = _as_grid(grid, spec.sampler.dim)
    if metric == "threshold":
        p = 1.0 - fpr if similarity else fpr
        return spec.nonmatch.quantile(np.full(len(grid), p), grid)
    fprs = np.array([fpr]) if metric == "tpr" else auc_grid()
    out = np.empty((len(grid), len(fprs)))
    for g, x in enumerate(grid):
        X = np.repeat(x[None, :], len(fprs), axis=0)
        t = spec.nonmatch.quantile(1.0 - fprs if similarity else fprs, X)
        c = spec.match.cdf(t, X)
        out[g] = 1.0 - c if similarity else c
    if metric == "tpr":
        return out[:, 0]
    if metric == "auc":
        x = np.concatenate([[0.0], fprs, [1.0]])
        y = np.column_stack([np.zeros(len(grid)), out, np.ones(len(grid))])
        return np.sum(np.diff(x) * 0.5 * (y[:, 1:] + y[:, :-1]), axis=1)
    raise ConfigurationError(f"unknown metric {metric!r}")


def oracle_grid(spec: TruthSpec, grid, metric="tpr", fpr=1e-3, n_per_point=1_000_000, seed=0,
                similarity=False) -> np.ndarray:
    """Brute-force empirical metric from ``n_per_point`` fresh scores per stream and gridpoint."""
    grid = _as_grid(grid, spec.sampler.dim)
    out = np.empty(len(grid))
    for g, x in enumerate(grid):
        rng = np.random.default_rng([int(seed), g])
        X = np.broadcast_to(x, (n_per_point, len(x)))
        m = spec.match.sample(X, rng)
        nm = spec.nonmatch.sample(X, rng)
        out[g] = empirical_metric(m, nm, metric, fpr, similarity)
    return out


def preferred_view_stream(spec: TruthSpec, effect, n, seed, noise=0.0) -> PairDataset:
    """Self-comparisons under independent query/gallery perturbations.

    Each record compares an item with itself; its score is ``effect(x)`` plus
    normal noise of scale ``noise``, resampled while negative.
    """
    effect_fn: Callable = effect if callable(effect) else Trend.from_dict(effect)
    rng = np.random.default_rng(seed)
    X = spec.sampler.sample(n, rng)
    base = np.asarray(effect_fn(X), dtype=float).reshape(n)
    scores = base + noise * rng.standard_normal(n)
    for _ in range(1000):
        neg = scores < 0
        if not neg.any() or noise == 0:
            break
        scores[neg] = base[neg] + noise * rng.standard_normal(neg.sum())
    scores = np.maximum(scores, 0.0)
    ids = [f"i{k}" for k in range(n)]
    return PairDataset(ids, ids, scores, X.reshape(n, spec.sampler.dim), np.ones(n, dtype=bool),
                       np.ones(n, dtype=bool), spec.covariate_names)


def grid_points(ranges, counts) -> np.ndarray:
    """Cartesian grid (row-major, first covariate slowest) over per-dimension ranges."""
    axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(ranges, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh]) if axes else np.zeros((1, 0))


def _scale_ridge():
    def ridge(base):
        return Trend("diagonal-ridge", {"base": base, "height": -0.75, "center": 0.5,
                                        "across": 0.15, "along": 0.2, "dims": [0, 1]})

    def tilt(intercept):
        return Trend("linear", {"intercept": intercept, "slopes": [0.05, 0.05]})

    # both streams skewed: a narrow main component plus a wider secondary one
    match = ConditionalTruth((Component(ridge(1.25), 0.08),
                              Component(ridge(1.45), 0.15, const(-1.2))))
    nonmatch = ConditionalTruth((Component(tilt(1.25), 0.08),
                                 Component(tilt(1.1), 0.12, const(-1.5))))
    return TruthSpec(match, nonmatch, CovariateSampler("uniform", (0.1, 0.1), (1.1, 1.1)),
                     20_000, 30_000, ("q_scale", "g_scale"))


def _binormal():
    return TruthSpec(ConditionalTruth((Component(const(0.0), 1.0),), truncate=False),
                     ConditionalTruth((Component(const(2.0), 1.0),), truncate=False),
                     CovariateSampler("uniform", (), ()), 20_000, 20_000, ())


def _chance():
    truth = ConditionalTruth((Component(const(1.0), 0.2),
                              Component(const(1.5), 0.1, const(-0.5))))
    return TruthSpec(truth, truth, CovariateSampler("uniform", (), ()), 10_000, 10_000, ())


def _age_decline():
    match = ConditionalTruth((Component(
        Trend("linear", {"intercept": 0.2, "slopes": [0.0075, 0.0075]}), 0.12),))
    nonmatch = ConditionalTruth((Component(const(1.4), 0.12),))
    return TruthSpec(match, nonmatch,
                     CovariateSampler("diagonal", (16.0,), (70.0,), half_width=2.0, decay=3.0),
                     3_000, 12_000, ("q_age", "g_age"))


def _linear_1d():
    match = ConditionalTruth((Component(Trend("linear", {"intercept": 0.5, "slopes": [0.4]}),
                                        0.15),))
    nonmatch = ConditionalTruth((Component(const(1.3), 0.15),))
    return TruthSpec(match, nonmatch, CovariateSampler("uniform", (0.0,), (1.0,)),
                     1_000, 2_000, ("x",))


PRESETS = {
    "scale-ridge": _scale_ridge,
    "binormal": _binormal,
    "chance": _chance,
    "age-decline": _age_decline,
    "linear-1d": _linear_1d,
}


def preset(name: str) -> TruthSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") \
            from None
