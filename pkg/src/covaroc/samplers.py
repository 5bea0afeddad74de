"""Generic gradient-based posterior approximations over flat parameter vectors.

Both samplers take a callable returning ``(log_density, gradient)``; they know
nothing about mixtures.  The HMC sampler is static-path-length leapfrog HMC
with dual-averaging step-size adaptation and a diagonal mass matrix estimated
during warmup.  ``advi`` is mean-field Gaussian variational inference with
reparameterized gradients and Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_THRESHOLD = 1000.0
STEP_JITTER = 0.2


def _finite(logp, grad):
    return np.isfinite(logp) and np.all(np.isfinite(grad))


def _leapfrog(theta, r, grad, logp_grad, step, n_steps, inv_mass):
    r = r + 0.5 * step * grad
    logp = -np.inf
    for i in range(n_steps):
        theta = theta + step * inv_mass * r
        logp, grad = logp_grad(theta)
        if not _finite(logp, grad):
            return theta, r, -np.inf, grad
        if i < n_steps - 1:
            r = r + step * grad
    r = r + 0.5 * step * grad
    return theta, r, logp, grad


def leapfrog(theta, r, logp_grad, step, n_steps, inv_mass=None):
    """Integrate Hamiltonian dynamics for ``n_steps``; returns ``(theta, r, logp, grad)``."""
    theta = np.asarray(theta, dtype=float)
    inv_mass = np.ones_like(theta) if inv_mass is None else inv_mass
    _, grad = logp_grad(theta)
    return _leapfrog(theta, np.asarray(r, dtype=float), grad, logp_grad, step, n_steps, inv_mass)


def hamiltonian(logp, r, inv_mass=None):
    inv_mass = 1.0 if inv_mass is None else inv_mass
    return -logp + 0.5 * float(np.sum(inv_mass * r * r))


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014)."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0

    def update(self, accept_prob):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** -self.kappa
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final_step_size(self):
        return math.exp(self.log_eps_bar)


def find_reasonable_step(theta, logp, grad, logp_grad, step, inv_mass, rng):
    r = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = hamiltonian(logp, r, inv_mass)

    def accept(eps):
        _, r1, lp1, _ = _leapfrog(theta, r, grad, logp_grad, eps, 1, inv_mass)
        dh = hamiltonian(lp1, r1, inv_mass) - h0
        if not np.isfinite(dh):
            return 0.0
        return 1.0 if dh <= 0 else math.exp(-dh)

    a = accept(step)
    direction = 1.0 if a > 0.5 else -1.0
    for _ in range(100):
        new_a = accept(step * 2.0 ** direction)
        if (direction > 0 and new_a <= 0.5) or (direction < 0 and new_a > 0.5):
            break
        step *= 2.0 ** direction
        if not 1e-10 < step < 1e5:
            break
    return step


@dataclass
class HMCResult:
    draws: np.ndarray  # (n_draws, P)
    trace: list  # log density at every iteration, warmup included
    accept_rate: float
    divergences: int
    step_size: float
    inv_mass: np.ndarray
    warnings: list = field(default_factory=list)


def hmc_sample(logp_grad, theta0, n_draws, *, rng, step_size=0.1, n_steps=32, warmup=500,
               target_accept=0.8, adapt_mass=True) -> HMCResult:
    theta = np.array(theta0, dtype=float)
    logp, grad = logp_grad(theta)
    if not _finite(logp, grad):
        raise NumericError("log density or gradient is not finite at the initial state",
                           snapshot=theta.copy())
    P = theta.size
    inv_mass = np.ones(P)
    step = find_reasonable_step(theta, logp, grad, logp_grad, step_size, inv_mass, rng) \
        if warmup > 0 else step_size
    da = DualAveraging(step, target_accept)
    mass_window = (int(0.15 * warmup), int(0.9 * warmup)) if adapt_mass and warmup >= 40 else None
    window = []

    draws = np.empty((n_draws, P))
    trace, accepted, divergences = [], 0, 0
    for it in range(warmup + n_draws):
        r = rng.standard_normal(P) / np.sqrt(inv_mass)
        h0 = hamiltonian(logp, r, inv_mass)
        # after warmup the step is jittered so a fixed path length cannot resonate
        eps = step if it < warmup else step * rng.uniform(1 - STEP_JITTER, 1 + STEP_JITTER)
        th1, r1, lp1, g1 = _leapfrog(theta, r, grad, logp_grad, eps, n_steps, inv_mass)
        dh = hamiltonian(lp1, r1, inv_mass) - h0 if np.isfinite(lp1) else np.inf
        if not np.isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
            accept_prob = 0.0
            if it >= warmup:
                divergences += 1
        else:
            accept_prob = 1.0 if dh <= 0 else math.exp(-dh)
        if rng.random() < accept_prob:
            theta, logp, grad = th1, lp1, g1
            if it >= warmup:
                accepted += 1

        if it < warmup:
            step = da.update(accept_prob)
            if mass_window and mass_window[0] <= it < mass_window[1]:
                window.append(theta)
            if mass_window and it == mass_window[1] - 1:
                w = np.asarray(window)
                n = len(w)
                inv_mass = (n / (n + 5.0)) * w.var(axis=0) + 1e-3 * (5.0 / (n + 5.0))
                step = find_reasonable_step(theta, logp, grad, logp_grad, step, inv_mass, rng)
                da = DualAveraging(step, target_accept)
            if it == warmup - 1:
                step = da.final_step_size
        else:
            draws[it - warmup] = theta
        trace.append(float(logp))

    result = HMCResult(draws, trace, accepted / max(n_draws, 1), divergences, step, inv_mass)
    if n_draws and divergences / n_draws > 0.2:
        result.warnings.append(
            f"divergence rate {divergences / n_draws:.1%} exceeds 20%; fit quality is suspect")
    return result


@dataclass
class ADVIResult:
    mean: np.ndarray
    log_scale: np.ndarray
    trace: list  # single-sample ELBO estimate per iteration
    warnings: list = field(default_factory=list)

    def sample(self, n, rng):
        eps = rng.standard_normal((n, self.mean.size))
        return self.mean + np.exp(self.log_scale) * eps


def gaussian_entropy(log_scale):
    return float(np.sum(log_scale)) + 0.5 * log_scale.size * (1.0 + LOG_2PI)


def advi(logp_grad, m0, *, rng, iterations=10_000, learning_rate=1e-2, init_scale=0.1,
         mc_samples=1) -> ADVIResult:
    """Maximize the ELBO of a mean-field normal family.

    ``logp_grad(theta, rng)`` may be a stochastic (minibatch) estimate.  The
    learning rate follows a cosine decay from ``learning_rate`` to zero.
    """
    m = np.array(m0, dtype=float)
    log_s = np.full_like(m, math.log(init_scale))
    P = m.size
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    mom = np.zeros(2 * P)
    vel = np.zeros(2 * P)
    trace = []
    for t in range(iterations):
        s = np.exp(log_s)
        g_m = np.zeros(P)
        g_ls = np.zeros(P)
        lp_sum = 0.0
        for _ in range(mc_samples):
            eps = rng.standard_normal(P)
            lp, g = logp_grad(m + s * eps, rng)
            lp_sum += lp
            g_m += g
            g_ls += g * eps * s
        elbo = lp_sum / mc_samples + gaussian_entropy(log_s)
        g = np.concatenate([g_m / mc_samples, g_ls / mc_samples + 1.0])
        if not _finite(elbo, g):
            raise NumericError(f"ELBO became non-finite at iteration {t}",
                               snapshot={"mean": m.copy(), "log_scale": log_s.copy()})
        trace.append(float(elbo))
        lr = learning_rate * 0.5 * (1.0 + math.cos(math.pi * t / iterations))
        mom = b1 * mom + (1 - b1) * g
        vel = b2 * vel + (1 - b2) * g * g
        step = lr * (mom / (1 - b1 ** (t + 1))) / (np.sqrt(vel / (1 - b2 ** (t + 1))) + adam_eps)
        m = m + step[:P]
        log_s = log_s + step[P:]

    result = ADVIResult(m, log_s, trace)
    warning = _elbo_regression(trace)
    if warning:
        result.warnings.append(warning)
    return result


def _elbo_regression(trace):
    """Warn when the ELBO over the final 20% is significantly worse than the 20% before."""
    n = len(trace)
    k = n // 5
    if k < 10:
        return None
    last = np.asarray(trace[n - k:])
    prev = np.asarray(trace[n - 2 * k:n - k])
    se = math.sqrt(last.var() / k + prev.var() / k)
    if last.mean() < prev.mean() - 3.0 * se:
        return (f"ELBO did not improve over the final 20% of iterations "
                f"({prev.mean():.3f} -> {last.mean():.3f})")
    return None


def elbo_estimate(logp, mean, log_scale, n_samples, rng):
    """Monte Carlo ELBO with the exact log density ``logp(theta)``; returns (value, std. error)."""
    s = np.exp(log_scale)
    vals = np.array([logp(mean + s * rng.standard_normal(mean.size)) for _ in range(n_samples)])
    ent = gaussian_entropy(np.asarray(log_scale))
    return float(vals.mean() + ent), float(vals.std(ddof=1) / math.sqrt(n_samples))
