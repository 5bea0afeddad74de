"""Conditional mixture of normals.

Given a feature vector ``phi`` (active RBF activations followed by a constant 1),
component ``h`` has weight ``softmax(W_weights @ phi)[h]``, location
``W_locations[h] @ phi`` and a covariate-free scale ``exp(log_sigmas[h])``.
Everything here works in normalized score units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr, softmax

from . import kernels
from .errors import MalformedInputError, PreconditionError

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureParams:
    w_weights: np.ndarray  # (H, F)
    w_locations: np.ndarray  # (H, F)
    log_sigmas: np.ndarray  # (H,)

    def __post_init__(self):
        ww = np.array(self.w_weights, dtype=float, ndmin=2)
        wl = np.array(self.w_locations, dtype=float, ndmin=2)
        ls = np.array(self.log_sigmas, dtype=float, ndmin=1)
        if ww.shape != wl.shape or ls.shape != (ww.shape[0],):
            raise MalformedInputError(
                f"inconsistent shapes {ww.shape}, {wl.shape}, {ls.shape}")
        if ww.shape[0] < 1:
            raise MalformedInputError("need at least one component")
        for a in (ww, wl, ls):
            a.setflags(write=False)
        object.__setattr__(self, "w_weights", ww)
        object.__setattr__(self, "w_locations", wl)
        object.__setattr__(self, "log_sigmas", ls)

    @property
    def H(self) -> int:
        return self.w_weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.w_weights.shape[1]

    @property
    def size(self) -> int:
        return 2 * self.w_weights.size + self.H

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(self.log_sigmas)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w_weights.ravel(), self.w_locations.ravel(), self.log_sigmas])

    @classmethod
    def unflatten(cls, theta, H: int, F: int) -> "MixtureParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2 * H * F + H,):
            raise MalformedInputError(f"parameter vector has shape {theta.shape}")
        n = H * F
        return cls(theta[:n].reshape(H, F), theta[n:2 * n].reshape(H, F), theta[2 * n:])

    def permuted(self, order) -> "MixtureParams":
        order = np.asarray(order)
        return MixtureParams(self.w_weights[order], self.w_locations[order], self.log_sigmas[order])

    def to_dict(self):
        return {
            "w_weights": self.w_weights.tolist(),
            "w_locations": self.w_locations.tolist(),
            "log_sigmas": self.log_sigmas.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["w_weights"], d["w_locations"], d["log_sigmas"])


@dataclass(frozen=True)
class PriorSpec:
    """Independent normals: N(0, coefficient_scale) on every coefficient,
    N(log_sigma_loc, log_sigma_scale) on every log-scale."""

    coefficient_scale: float = 1.0
    log_sigma_loc: float = -1.0
    log_sigma_scale: float = 1.0

    def __post_init__(self):
        if not (self.coefficient_scale > 0 and self.log_sigma_scale > 0):
            raise PreconditionError("prior scales must be positive")

    def log_density(self, p: MixtureParams) -> float:
        return float(self.log_density_flat(p.flatten(), p.H)[0])

    def log_density_flat(self, theta, H: int):
        """Log prior and its gradient for a flat parameter vector."""
        theta = np.asarray(theta, dtype=float)
        n_coef = theta.size - H
        loc = np.zeros_like(theta)
        loc[n_coef:] = self.log_sigma_loc
        scale = np.full_like(theta, self.coefficient_scale)
        scale[n_coef:] = self.log_sigma_scale
        z = (theta - loc) / scale
        value = float(np.sum(-0.5 * z * z - np.log(scale) - HALF_LOG_2PI))
        return value, -z / scale

    def to_dict(self):
        return {
            "coefficient_scale": self.coefficient_scale,
            "log_sigma_loc": self.log_sigma_loc,
            "log_sigma_scale": self.log_sigma_scale,
        }


def _check_phi(p: MixtureParams, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (p.n_features,):
        raise MalformedInputError(f"feature vector must have length {p.n_features}, got {phi.shape}")
    return phi


def weights_at(p: MixtureParams, phi) -> np.ndarray:
    return softmax(p.w_weights @ _check_phi(p, phi))


def locations_at(p: MixtureParams, phi) -> np.ndarray:
    return p.w_locations @ _check_phi(p, phi)


def log_density(p: MixtureParams, y: float, phi) -> float:
    """log sum_h pi_h N(y | mu_h, sigma_h), floored at -745."""
    phi = _check_phi(p, phi)
    if not np.isfinite(y):
        raise MalformedInputError("y must be finite")
    total, _, _, _ = kernels.mixture_loglik(
        np.array([y], dtype=float), phi[None, :], p.w_weights, p.w_locations, p.log_sigmas)
    return total


def log_density_many(p: MixtureParams, y, phi) -> tuple:
    """Per-row log densities for a design matrix; returns ``(values, n_clamped)``."""
    _, clamped, rows, _ = kernels.mixture_loglik(
        y, phi, p.w_weights, p.w_locations, p.log_sigmas, rows=True)
    return rows, clamped


def log_density_grad(p: MixtureParams, y: float, phi) -> MixtureParams:
    """Gradient of :func:`log_density` in every parameter, shaped like ``p``."""
    phi = _check_phi(p, phi)
    _, _, _, (gww, gwl, gls) = kernels.mixture_loglik(
        np.array([y], dtype=float), phi[None, :], p.w_weights, p.w_locations, p.log_sigmas,
        grad=True)
    return MixtureParams(gww, gwl, gls)


def cdf(p: MixtureParams, phi, y: float) -> float:
    phi = _check_phi(p, phi)
    return float(np.sum(weights_at(p, phi) * ndtr((y - locations_at(p, phi)) / p.sigmas)))


def sample(p: MixtureParams, phi, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. draws: a component by weight, then a normal draw from it."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    phi = _check_phi(p, phi)
    rng = np.random.default_rng(seed)
    comp = rng.choice(p.H, size=n, p=weights_at(p, phi))
    return locations_at(p, phi)[comp] + p.sigmas[comp] * rng.standard_normal(n)


def initial_params(y, H: int, n_features: int) -> MixtureParams:
    """Uniform weights, locations at spread quantiles of ``y``, equal narrow scales."""
    y = np.asarray(y, dtype=float)
    ww = np.zeros((H, n_features))
    wl = np.zeros((H, n_features))
    wl[:, -1] = np.quantile(y, (np.arange(H) + 0.5) / H)
    std = y.std() if len(y) > 1 and y.std() > 0 else 1.0
    return MixtureParams(ww, wl, np.full(H, np.log(std / H)))


def stack(draws) -> tuple:
    """Stack a list of MixtureParams into arrays (D,H,F), (D,H,F), (D,H)."""
    return (np.stack([d.w_weights for d in draws]),
            np.stack([d.w_locations for d in draws]),
            np.stack([d.log_sigmas for d in draws]))


def components_at(draws, phi_rows) -> tuple:
    """Weights, locations and scales of every draw at every feature row.

    Returns arrays of shape (D, G, H) where G is the number of rows.
    """
    ww, wl, ls = stack(draws)
    phi_rows = np.asarray(phi_rows, dtype=float)
    logits = np.einsum("dhf,gf->dgh", ww, phi_rows)
    pi = np.exp(logits - logsumexp(logits, axis=2, keepdims=True))
    mu = np.einsum("dhf,gf->dgh", wl, phi_rows)
    sigma = np.broadcast_to(np.exp(ls)[:, None, :], mu.shape)
    return pi, mu, sigma
