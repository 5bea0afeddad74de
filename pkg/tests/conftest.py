import numpy as np
import pytest

from covaroc.basis import BasisSet
from covaroc.inference import Posterior
from covaroc.mixture import MixtureParams, PriorSpec


def fixed_posterior(weights, locations, sigmas, n_draws=4):
    """Covariate-free posterior whose every draw is the same mixture (raw units)."""
    weights = np.asarray(weights, dtype=float)
    H = len(weights)
    p = MixtureParams(np.log(weights).reshape(H, 1), np.asarray(locations, float).reshape(H, 1),
                      np.log(np.asarray(sigmas, dtype=float)))
    return Posterior([p] * n_draws, BasisSet.empty(), PriorSpec())


def normal_posterior(mu, sigma, n_draws=4):
    return fixed_posterior([1.0], [mu], [sigma], n_draws)


def random_params(rng, H, F, scale=0.7):
    return MixtureParams(scale * rng.standard_normal((H, F)), scale * rng.standard_normal((H, F)),
                         rng.uniform(-1.0, 0.5, H))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    """Remember an acceptance verdict; printed in the terminal summary."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
