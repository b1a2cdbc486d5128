import numpy as np
import pytest

from qpfk.cohomology import GOLDEN_MEAN, diophantine_constant
from qpfk.fields import SpectralField
from qpfk.model import ModelConfig, Potential, SolverState
from qpfk.solver import run_kam


@pytest.fixture(scope="session")
def golden_freq():
    return diophantine_constant([GOLDEN_MEAN], 1.0, 200)


@pytest.fixture(scope="session")
def model05(golden_freq):
    """Reference single-harmonic model: W = mu cos(2 pi theta_1), mu = 0.05."""
    pot = Potential.cosine((1, 0), 0.05)
    return ModelConfig(freq=golden_freq, beta=(1.0, 0.5), eta=0.0, potential=pot)


@pytest.fixture(scope="session")
def run05(model05):
    """Converged reference solve at grid 128 with its step history."""
    state, history = run_kam(model05, SolverState.trivial(1, 128), tol=1e-12, max_iter=20)
    return state, history


def random_band_limited(rng, grid_size=128, k_max=10, zero_mean=False, dim=1):
    """Random real field supported on |k_i| <= k_max."""
    coeffs = np.zeros((grid_size,) * dim, dtype=complex)
    span = range(-k_max, k_max + 1)
    lattice = [(k,) for k in span] if dim == 1 else [(a, b) for a in span for b in span]
    for k in lattice:
        if zero_mean and all(ki == 0 for ki in k):
            continue
        coeffs[tuple(ki % grid_size for ki in k)] = rng.normal() + 1j * rng.normal()
    return SpectralField.from_coefficients(coeffs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
