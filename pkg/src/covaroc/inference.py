"""Posterior inference for the match and non-match conditional mixtures."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .basis import BasisConfig, BasisSet, design_matrix, place_grid, prune
from .dataset import Affine, PairDataset
from .errors import ConfigurationError, PreconditionError
from .mixture import MixtureParams, PriorSpec, components_at, initial_params, log_density_many
from .samplers import advi, elbo_estimate, hmc_sample

log = logging.getLogger(__name__)

BLOCKS = ("w_weights", "w_locations", "log_sigmas")


@dataclass(frozen=True)
class HMCConfig:
    step_size: float = 0.1
    leapfrog_steps: int = 32
    warmup: int = 500
    target_accept: float = 0.8
    adapt_mass: bool = True


@dataclass(frozen=True)
class SVIConfig:
    iterations: int = 10_000
    minibatch_size: int = 1024
    learning_rate: float = 1e-2
    posterior_samples: int | None = None  # defaults to FitConfig.draws
    mc_samples: int = 1
    init_scale: float = 0.1


@dataclass(frozen=True)
class FitConfig:
    method: str = "svi"
    draws: int = 100
    components: int = 4
    chains: int = 1
    seed: int = 0
    hmc: HMCConfig = field(default_factory=HMCConfig)
    svi: SVIConfig = field(default_factory=SVIConfig)

    def __post_init__(self):
        if self.method not in ("hmc", "svi"):
            raise ConfigurationError(f"unknown inference method {self.method!r}")
        if self.draws < 2:
            raise ConfigurationError("draws must be >= 2")
        if self.components < 1:
            raise ConfigurationError("components must be >= 1")
        if self.svi.minibatch_size < 1:
            raise ConfigurationError("minibatch_size must be >= 1")
        if not self.svi.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.hmc.target_accept < 1:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.chains < 1:
            raise ConfigurationError("chains must be >= 1")

    @property
    def n_draws(self) -> int:
        if self.method == "svi" and self.svi.posterior_samples is not None:
            return self.svi.posterior_samples
        return self.draws

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        hmc = HMCConfig(**d.pop("hmc", {}))
        svi = SVIConfig(**d.pop("svi", {}))
        return cls(hmc=hmc, svi=svi, **d)


@dataclass(frozen=True)
class FitReport:
    method: str
    trace: list  # log posterior (hmc) or ELBO estimate (svi) per iteration
    wall_time: float
    seed: int
    config: dict

    def to_dict(self, include_time=True):
        d = {"method": self.method, "seed": self.seed, "config": self.config, "trace": self.trace}
        if include_time:
            d["wall_time"] = self.wall_time
        return d


@dataclass(frozen=True)
class Posterior:
    draws: tuple
    basis: BasisSet
    prior: PriorSpec
    covariate_names: tuple = ()
    score_transform: Affine = field(default_factory=lambda: Affine(0.0, 1.0))
    covariate_transform: Affine | None = None
    covariate_range: np.ndarray | None = None  # (C, 2) native units
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = tuple(self.draws)
        shapes = {(d.w_weights.shape, d.log_sigmas.shape) for d in draws}
        if len(shapes) > 1:
            raise PreconditionError("posterior draws have heterogeneous shapes")
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.covariate_transform is None:
            C = self.basis.dim
            object.__setattr__(self, "covariate_transform", Affine(np.zeros(C), np.ones(C)))

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    @property
    def H(self) -> int:
        return self.draws[0].H

    def features(self, X_native) -> np.ndarray:
        """Design matrix for covariates given in native units, shape (G, C)."""
        X = np.asarray(X_native, dtype=float)
        C = len(self.covariate_names)
        X = X.reshape(-1, C) if C else X.reshape(X.shape[0] if X.ndim == 2 else 1, 0)
        Z = self.covariate_transform.forward(X) if self.covariate_names else X
        return design_matrix(self.basis, Z)

    def components(self, X_native) -> tuple:
        """Per-draw mixture components in raw score units: three (D, G, H) arrays."""
        pi, mu, sigma = components_at(self.draws, self.features(X_native))
        t = self.score_transform
        return pi, mu * float(t.std) + float(t.mean), sigma * float(t.std)

    def to_dict(self):
        return {
            "covariate_names": list(self.covariate_names),
            "basis": self.basis.to_dict(),
            "prior": self.prior.to_dict(),
            "score_transform": self.score_transform.to_dict(),
            "covariate_transform": self.covariate_transform.to_dict(),
            "covariate_range": None if self.covariate_range is None
            else np.asarray(self.covariate_range).tolist(),
            "diagnostics": self.diagnostics,
            "draws": [d.to_dict() for d in self.draws],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            draws=[MixtureParams.from_dict(x) for x in d["draws"]],
            basis=BasisSet.from_dict(d["basis"]),
            prior=PriorSpec(**d["prior"]),
            covariate_names=d["covariate_names"],
            score_transform=Affine.from_dict(d["score_transform"], scalar=True),
            covariate_transform=Affine.from_dict(d["covariate_transform"]),
            covariate_range=None if d["covariate_range"] is None
            else np.asarray(d["covariate_range"], dtype=float).reshape(-1, 2),
            diagnostics=d["diagnostics"],
        )


def log_posterior(p: MixtureParams, prior: PriorSpec, y, phi, scale_factor: float = 1.0) -> float:
    """``scale_factor * sum_i log_density(y_i | phi_i) + log prior(p)``."""
    return log_posterior_grad(p, prior, y, phi, scale_factor, grad=False)[0]


def log_posterior_grad(p: MixtureParams, prior: PriorSpec, y, phi, scale_factor=1.0, grad=True):
    """Value and (optionally) gradient of :func:`log_posterior`, gradient shaped like ``p``."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise PreconditionError("log_posterior needs at least one datum")
    if scale_factor < 1:
        raise PreconditionError("scale_factor must be >= 1")
    ll, _, _, g = kernels.mixture_loglik(y, phi, p.w_weights, p.w_locations, p.log_sigmas,
                                         scale_factor, grad=grad)
    lp, gp = prior.log_density_flat(p.flatten(), p.H)
    if not grad:
        return ll + lp, None
    flat = np.concatenate([g[0].ravel(), g[1].ravel(), g[2]]) + gp
    return ll + lp, MixtureParams.unflatten(flat, p.H, p.n_features)


class StreamTarget:
    """Log posterior of one stream as a function of the free entries of a flat vector.

    ``fixed`` maps block names (``w_weights``, ``w_locations``, ``log_sigmas``)
    to values held constant; with a single component the weight block has no
    effect on the likelihood and is always held at zero.
    """

    def __init__(self, y, phi, prior: PriorSpec, H: int, fixed=None, init: MixtureParams = None):
        self.y = np.ascontiguousarray(y, dtype=float)
        self.phi = np.ascontiguousarray(phi, dtype=float)
        self.prior, self.H, self.F = prior, H, self.phi.shape[1]
        base = init if init is not None else initial_params(self.y, H, self.F)
        blocks = {"w_weights": base.w_weights, "w_locations": base.w_locations,
                  "log_sigmas": base.log_sigmas}
        fixed = dict(fixed or {})
        if H == 1:
            fixed.setdefault("w_weights", np.zeros((1, self.F)))
        free = []
        for name in BLOCKS:
            if name in fixed:
                value = np.asarray(fixed[name], dtype=float).reshape(blocks[name].shape)
                blocks[name] = value
                free.append(np.zeros(value.size, dtype=bool))
            elif name not in blocks:
                raise ConfigurationError(f"unknown parameter block {name!r}")
            else:
                free.append(np.ones(blocks[name].size, dtype=bool))
        unknown = set(fixed) - set(BLOCKS)
        if unknown:
            raise ConfigurationError(f"unknown parameter blocks {sorted(unknown)}")
        self.template = MixtureParams(**blocks).flatten()
        self.free = np.concatenate(free)
        self.n = len(self.y)
        n_coef = self.template.size - H
        self._prior_loc = np.zeros_like(self.template)
        self._prior_loc[n_coef:] = prior.log_sigma_loc
        self._prior_scale = np.full_like(self.template, prior.coefficient_scale)
        self._prior_scale[n_coef:] = prior.log_sigma_scale
        self._log_norm = np.log(self._prior_scale) + 0.5 * np.log(2 * np.pi)

    @property
    def dim(self) -> int:
        return int(self.free.sum())

    def initial(self) -> np.ndarray:
        return self.template[self.free].copy()

    def params(self, free_theta) -> MixtureParams:
        theta = self.template.copy()
        theta[self.free] = free_theta
        return MixtureParams.unflatten(theta, self.H, self.F)

    def _eval(self, free_theta, idx=None, grad=True):
        theta = self.template.copy()
        theta[self.free] = free_theta
        n_coef = self.H * self.F
        ww = theta[:n_coef].reshape(self.H, self.F)
        wl = theta[n_coef:2 * n_coef].reshape(self.H, self.F)
        ls = theta[2 * n_coef:]
        if idx is None:
            y, phi, scale = self.y, self.phi, 1.0
        else:
            y, phi, scale = self.y[idx], self.phi[idx], self.n / len(idx)
        ll, _, _, g = kernels.mixture_loglik(y, phi, ww, wl, ls, scale, grad=grad)
        z = (theta - self._prior_loc) / self._prior_scale
        lp = float(np.sum((-0.5 * z * z - self._log_norm)[self.free]))
        if not grad:
            return ll + lp, None
        flat = np.concatenate([g[0].ravel(), g[1].ravel(), g[2]]) - z / self._prior_scale
        return ll + lp, flat[self.free]

    def logp_grad(self, free_theta):
        return self._eval(free_theta)

    def logp(self, free_theta):
        return self._eval(free_theta, grad=False)[0]

    def minibatch_logp_grad(self, batch_size, rng):
        """Stochastic estimator cycling through shuffled epochs of the data."""
        if batch_size >= self.n:
            return lambda theta, _rng: self._eval(theta)
        state = {"perm": rng.permutation(self.n), "pos": 0}

        def fn(theta, _rng):
            if state["pos"] + batch_size > self.n:
                state["perm"] = rng.permutation(self.n)
                state["pos"] = 0
            idx = np.sort(state["perm"][state["pos"]:state["pos"] + batch_size])
            state["pos"] += batch_size
            return self._eval(theta, idx)

        return fn


def _check_stream(y, X, basis: BasisSet):
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise PreconditionError("cannot fit an empty score stream")
    X = np.asarray(X, dtype=float).reshape(len(y), basis.dim)
    return y, design_matrix(basis, X)


def fit_hmc(y, X, basis: BasisSet, prior: PriorSpec, cfg: FitConfig, fixed=None):
    """HMC posterior for one stream of normalized scores ``y`` at normalized covariates ``X``."""
    if cfg.method != "hmc":
        raise ConfigurationError("fit_hmc requires method='hmc'")
    y, phi = _check_stream(y, X, basis)
    target = StreamTarget(y, phi, prior, cfg.components, fixed)
    start = time.perf_counter()
    per_chain = [len(a) for a in np.array_split(np.arange(cfg.n_draws), cfg.chains)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    draws, trace, chains, warnings = [], [], [], []
    for seed, n in zip(seeds, per_chain):
        res = hmc_sample(
            target.logp_grad, target.initial(), n, rng=np.random.default_rng(seed),
            step_size=cfg.hmc.step_size, n_steps=cfg.hmc.leapfrog_steps,
            warmup=cfg.hmc.warmup, target_accept=cfg.hmc.target_accept,
            adapt_mass=cfg.hmc.adapt_mass)
        draws.extend(target.params(t) for t in res.draws)
        trace.extend(res.trace)
        chains.append({"acceptance_rate": res.accept_rate, "divergences": res.divergences,
                       "step_size": res.step_size})
        warnings.extend(res.warnings)
    for w in warnings:
        log.warning(w)
    diagnostics = {
        "method": "hmc",
        "acceptance_rate": float(np.mean([c["acceptance_rate"] for c in chains])),
        "divergences": int(sum(c["divergences"] for c in chains)),
        "chains": chains,
        "warnings": warnings,
        "clamped_densities": _clamp_count(draws, y, phi),
    }
    post = Posterior(draws, basis, prior, diagnostics=diagnostics)
    report = FitReport("hmc", trace, time.perf_counter() - start, cfg.seed, cfg.to_dict())
    return post, report


def fit_svi(y, X, basis: BasisSet, prior: PriorSpec, cfg: FitConfig, fixed=None):
    """Mean-field variational posterior for one stream; draws sampled from the fitted family."""
    if cfg.method != "svi":
        raise ConfigurationError("fit_svi requires method='svi'")
    y, phi = _check_stream(y, X, basis)
    target = StreamTarget(y, phi, prior, cfg.components, fixed)
    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    res = advi(target.minibatch_logp_grad(cfg.svi.minibatch_size, rng), target.initial(), rng=rng,
               iterations=cfg.svi.iterations, learning_rate=cfg.svi.learning_rate,
               init_scale=cfg.svi.init_scale, mc_samples=cfg.svi.mc_samples)
    for w in res.warnings:
        log.warning(w)
    draws = [target.params(t) for t in res.sample(cfg.n_draws, rng)]
    tail = res.trace[-max(1, len(res.trace) // 10):]
    diagnostics = {
        "method": "svi",
        "final_elbo": float(np.mean(tail)),
        "divergences": 0,
        "warnings": res.warnings,
        "variational_mean": res.mean.tolist(),
        "variational_log_scale": res.log_scale.tolist(),
        "free_mask": target.free.tolist(),
        "clamped_densities": _clamp_count(draws, y, phi),
    }
    post = Posterior(draws, basis, prior, diagnostics=diagnostics)
    report = FitReport("svi", res.trace, time.perf_counter() - start, cfg.seed, cfg.to_dict())
    return post, report


def final_elbo(y, X, post: Posterior, n_samples=2000, seed=0, fixed=None):
    """Full-data Monte Carlo ELBO of an SVI posterior; returns (value, std. error)."""
    y, phi = _check_stream(y, X, post.basis)
    target = StreamTarget(y, phi, post.prior, post.H, fixed)
    m = np.asarray(post.diagnostics["variational_mean"])
    ls = np.asarray(post.diagnostics["variational_log_scale"])
    return elbo_estimate(target.logp, m, ls, n_samples, np.random.default_rng(seed))


def _clamp_count(draws, y, phi):
    return int(sum(log_density_many(d, y, phi)[1] for d in draws[:5]))


def fit(y, X, basis, prior, cfg, fixed=None):
    return (fit_hmc if cfg.method == "hmc" else fit_svi)(y, X, basis, prior, cfg, fixed)


def stream_basis(Z, cfg: BasisConfig) -> BasisSet:
    """Grid over the range of normalized covariates ``Z``, pruned to the data."""
    if Z.shape[1] == 0:
        return BasisSet.empty()
    rng_ = np.column_stack([Z.min(axis=0), Z.max(axis=0)])
    basis = place_grid(cfg, Z.shape[1], rng_)
    return prune(basis, Z, cfg.prune_distance)


def fit_both(ds: PairDataset, basis_cfg, prior: PriorSpec, cfg: FitConfig,
             match_covariates=None, nonmatch_covariates=None):
    """Independent fits of the match and non-match streams of a normalized dataset.

    ``basis_cfg`` is one :class:`BasisConfig` or a ``(match, nonmatch)`` pair.
    Each stream may condition on its own subset of covariate names.
    Returns ``(posterior_match, posterior_nonmatch, (report_match, report_nonmatch))``.
    """
    if ds.normalization is None:
        raise PreconditionError("fit_both needs a normalized dataset")
    if isinstance(basis_cfg, BasisConfig):
        basis_cfg = (basis_cfg, basis_cfg)
    names = {
        True: tuple(ds.covariate_names if match_covariates is None else match_covariates),
        False: tuple(ds.covariate_names if nonmatch_covariates is None else nonmatch_covariates),
    }
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    out, reports = {}, {}
    for is_match, bcfg, seed in ((True, basis_cfg[0], seeds[0]), (False, basis_cfg[1], seeds[1])):
        stream = ds.take(ds.match == is_match)
        label = "match" if is_match else "non-match"
        if len(stream) == 0:
            raise PreconditionError(f"{label} stream is empty")
        cols = [ds.covariate_index(n) for n in names[is_match]]
        y = ds.normalization.score_transform(is_match).forward(stream.scores)
        Z = stream.normalized_covariates(names[is_match])
        basis = stream_basis(Z, bcfg)
        post, report = fit(y, Z, basis, prior, replace(cfg, seed=int(seed)))
        raw = stream.covariates[:, cols]
        post = replace(
            post,
            covariate_names=names[is_match],
            score_transform=ds.normalization.score_transform(is_match),
            covariate_transform=ds.normalization.covariates.subset(cols),
            covariate_range=np.column_stack([raw.min(axis=0), raw.max(axis=0)])
            if cols else np.zeros((0, 2)),
        )
        out[is_match], reports[is_match] = post, report
    return out[True], out[False], (reports[True], reports[False])
