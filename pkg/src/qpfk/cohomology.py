"""Constant-coefficient cohomology equations and Diophantine certification.

The difference equation ``v(psi + Omega) - v(psi) = phi(psi)`` with zero-mean
data is solved mode by mode through the divisors ``exp(2 pi i k.Omega) - 1``.
Solvability at the grid scales used here is certified beforehand by a
brute-force lower bound on ``|k.Omega - m| |k|^tau`` over all modes up to a
cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import NonzeroMean, ResonanceDetected, SmallDivisorUnderflow
from .fields import SpectralField, _mode_axes

GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0

# Below this floor a certified constant counts as resonant.
RESONANCE_FLOOR = 1e-12
# Divisor magnitudes below this trip SmallDivisorUnderflow.
DIVISOR_FLOOR = 1e-13
# |<phi>| <= MEAN_TOL * sup|phi| is projected out silently; larger is an error.
MEAN_TOL = 1e-9


@dataclass(frozen=True)
class Frequency:
    """Intrinsic frequency with a numerically certified Diophantine constant.

    ``kappa_hat`` is the minimum of ``|k.Omega - m| |k|^tau`` over integer
    vectors ``0 < |k| <= cutoff`` (Euclidean mode norm) and integers m.
    """

    omega: tuple[float, ...]
    tau: float
    kappa_hat: float
    cutoff: int

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in np.atleast_1d(self.omega)))

    @property
    def dim(self) -> int:
        return len(self.omega)

    @property
    def omega_array(self) -> np.ndarray:
        return np.asarray(self.omega)

    def require_certified(self) -> None:
        if not self.kappa_hat > RESONANCE_FLOOR:
            raise ResonanceDetected(
                f"kappa_hat = {self.kappa_hat:.3e} is below {RESONANCE_FLOOR:.0e}; "
                "frequency unusable for small-divisor solves"
            )


def _half_lattice(dim: int, cutoff: int):
    """Integer vectors with 0 < |k| <= cutoff, one per +-k pair."""
    if dim == 1:
        for k in range(1, cutoff + 1):
            yield (k,)
        return
    for k in product(range(-cutoff, cutoff + 1), repeat=dim):
        if all(ki == 0 for ki in k):
            continue
        first = next(ki for ki in k if ki != 0)
        if first < 0:
            continue
        if math.hypot(*k) <= cutoff:
            yield k


def diophantine_details(omega, tau: float, cutoff: int):
    """Brute-force minimizer of ``|k.Omega - m| |k|^tau`` up to the cutoff.

    Returns ``(kappa_hat, k_min, m_min)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    best = math.inf
    best_k, best_m = None, None
    for k in _half_lattice(omega.size, cutoff):
        dot = float(np.dot(k, omega))
        m = round(dot)
        value = abs(dot - m) * math.hypot(*k) ** tau
        if value < best:
            best, best_k, best_m = value, k, m
    return best, best_k, best_m


def diophantine_constant(omega, tau: float, cutoff: int) -> Frequency:
    """Certify ``omega`` Diophantine up to the cutoff; resonances are rejected."""
    kappa_hat, k_min, m_min = diophantine_details(omega, tau, cutoff)
    if kappa_hat < RESONANCE_FLOOR:
        raise ResonanceDetected(
            f"near-resonance |k.Omega - m| = {kappa_hat:.3e} at k = {k_min}, m = {m_min}"
        )
    return Frequency(omega=tuple(np.atleast_1d(omega)), tau=tau, kappa_hat=kappa_hat, cutoff=cutoff)


def translation_phases(dim: int, grid_size: int, omega) -> np.ndarray:
    """Array of ``exp(2 pi i k.Omega)`` over the FFT mode lattice."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    axes = _mode_axes(dim, grid_size)
    k_dot = sum(ax * omega[i] for i, ax in enumerate(axes))
    return np.exp(2j * np.pi * k_dot)


def solve_constant_cohomology(phi: SpectralField, freq: Frequency) -> SpectralField:
    """Zero-average solution of ``v(psi+Omega) - v(psi) = phi(psi)``.

    The mean of ``phi`` must vanish to tolerance (relative to its sup norm);
    it is projected out before the mode-wise division
    ``vhat_k = phihat_k / (exp(2 pi i k.Omega) - 1)``.
    """
    freq.require_certified()
    if freq.dim != phi.dim:
        raise ValueError(f"frequency dim {freq.dim} != field dim {phi.dim}")
    scale = phi.sup_norm()
    mean = phi.average()
    if abs(mean) > MEAN_TOL * max(scale, 1e-300):
        raise NonzeroMean(
            f"|<phi>| = {abs(mean):.3e} exceeds {MEAN_TOL:.0e} * sup|phi| = "
            f"{MEAN_TOL * scale:.3e}"
        )
    divisors = translation_phases(phi.dim, phi.grid_size, freq.omega_array) - 1.0
    zero = (0,) * phi.dim
    coeffs = phi.coefficients.copy()
    coeffs[zero] = 0.0
    needed = np.abs(coeffs) > 0
    needed[zero] = False
    if np.any(needed & (np.abs(divisors) < DIVISOR_FLOOR)):
        worst = float(np.min(np.abs(divisors[needed])))
        raise SmallDivisorUnderflow(
            f"divisor magnitude {worst:.3e} below floor {DIVISOR_FLOOR:.0e}"
        )
    safe = divisors.copy()
    safe[zero] = 1.0
    out = coeffs / safe
    out[zero] = 0.0
    return SpectralField.from_coefficients(out)
