"""First-order difference equations with non-constant coefficients.

Equations ``a(psi) v(psi+Omega) - b(psi) v(psi) = lambda w(psi) + phi(psi)``
are reduced to constant coefficients by writing each strictly positive
coefficient as an exponential quotient,

    a = abar * gamma_a(psi+Omega) / gamma_a(psi),
    b = bbar * gamma_b(psi) / gamma_b(psi+Omega),

obtained from the log cohomology equations.  Multiplying through by
``gamma_a * (gamma_b)_+`` turns the equation into
``abar m_+ - bbar m = rhs`` for ``m = gamma_a gamma_b v``.

Two regimes: with equal average coefficients the k = 0 mode is free and the
counterterm ``lambda`` is pinned by solvability; with unequal averages every
right-hand side has a unique solution and ``lambda`` is pinned by the
normalization ``<v> = 0``.  Both are realized through the affine two-solve
trick (solve at lambda = 0 and lambda = 1, combine).
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .cohomology import (
    DIVISOR_FLOOR,
    Frequency,
    solve_constant_cohomology,
    translation_phases,
)
from .errors import (
    MixedSign,
    NonPositiveCoefficient,
    SmallDivisorUnderflow,
    TransversalityLoss,
    UnsolvableResonant,
)
from .fields import SpectralField, multiply

# Branches are merged when |log abar - log bbar| falls below this.
EQUAL_AVERAGE_TOL = 1e-8
# Counterterm slope denominators below this are treated as degenerate.
TRANSVERSALITY_TOL = 1e-6


@dataclass(frozen=True)
class TwistedFactorization:
    """Positive coefficient written as ``avg * gamma quotient``.

    ``orientation = 'forward'`` reconstructs ``avg * gamma_+ / gamma`` (a-type),
    ``'backward'`` reconstructs ``avg * gamma / gamma_+`` (b-type).  The gamma
    factor is normalized by ``<log gamma> = 0``.
    """

    avg_coeff: float
    gamma: SpectralField
    orientation: str

    def reconstruct(self, freq: Frequency) -> SpectralField:
        gamma_plus = self.gamma.translate(freq.omega_array)
        if self.orientation == "forward":
            quotient = multiply(gamma_plus, self.gamma.reciprocal())
        else:
            quotient = multiply(self.gamma, gamma_plus.reciprocal())
        return self.avg_coeff * quotient


def factor_coefficient(
    coeff: SpectralField, freq: Frequency, orientation: str = "forward"
) -> TwistedFactorization:
    """Log-factorize a strictly positive coefficient field.

    Solves the log cohomology equation so that the reconstruction identity of
    :class:`TwistedFactorization` holds, with ``avg_coeff = exp(<log coeff>)``.
    """
    if orientation not in ("forward", "backward"):
        raise ValueError(f"orientation must be 'forward' or 'backward', got {orientation!r}")
    log_coeff = coeff.log()
    mean = log_coeff.average()
    centered = log_coeff - mean
    if orientation == "forward":
        log_gamma = solve_constant_cohomology(centered, freq)
    else:
        log_gamma = solve_constant_cohomology(-centered, freq)
    return TwistedFactorization(
        avg_coeff=math.exp(mean), gamma=log_gamma.exp(), orientation=orientation
    )


@dataclass(frozen=True)
class TwistedSolution:
    """Counterterm and zero-average solution of a twisted cohomology equation."""

    lam: float
    v: SpectralField
    branch: str  # 'equal-average' | 'a-dominant' | 'b-dominant'
    residual_sup: float = float("nan")
    slope: float = float("nan")  # d<v>/dlambda (unequal) or <w gamma_a (gamma_b)_+> (equal)


def _as_field(x, dim: int, grid_size: int) -> SpectralField:
    if isinstance(x, SpectralField):
        return x
    return SpectralField.constant(float(x), dim, grid_size)


def solve_constant_twisted(
    a_bar: float, b_bar: float, rhs: SpectralField, freq: Frequency
) -> SpectralField:
    """Solve ``abar m_+ - bbar m = rhs`` by mode-wise division.

    Equal averages (within tolerance): the mean of ``rhs`` must vanish and the
    free k = 0 mode is set to zero.  Unequal averages: the solution is unique,
    k = 0 included.
    """
    if a_bar <= 0 or b_bar <= 0:
        raise NonPositiveCoefficient("average coefficients must be positive")
    freq.require_certified()
    divisors = a_bar * translation_phases(rhs.dim, rhs.grid_size, freq.omega_array) - b_bar
    zero = (0,) * rhs.dim
    coeffs = rhs.coefficients.copy()
    equal = abs(math.log(a_bar) - math.log(b_bar)) <= EQUAL_AVERAGE_TOL
    if equal:
        mean = float(coeffs[zero].real)
        if abs(mean) > 1e-9 * max(rhs.sup_norm(), 1e-300):
            raise UnsolvableResonant(
                f"equal-average branch with nonzero mean rhs: <rhs> = {mean:.3e}"
            )
        coeffs[zero] = 0.0
    needed = np.abs(coeffs) > 0
    if equal:
        needed[zero] = False
    if np.any(needed & (np.abs(divisors) < DIVISOR_FLOOR)):
        worst = float(np.min(np.abs(divisors[needed])))
        raise SmallDivisorUnderflow(f"twisted divisor {worst:.3e} below floor")
    safe = divisors.copy()
    if equal:
        safe[zero] = 1.0
    out = coeffs / safe
    if equal:
        out[zero] = 0.0
    return SpectralField.from_coefficients(out)


class TwistedOperator:
    """Operator ``u -> a u_+ - b u`` prepared for repeated solves.

    Coefficients may be fields or scalars.  Both must be strictly positive on
    the grid after sign normalization: a pair of strictly negative
    coefficients flips the whole equation, a mixed pair is rejected.
    Factorizations, average coefficients and the transform/untwist fields are
    computed once at construction.
    """

    def __init__(self, a, b, freq: Frequency):
        dim, grid_size = None, None
        for x in (a, b):
            if isinstance(x, SpectralField):
                dim, grid_size = x.dim, x.grid_size
        if dim is None:
            raise ValueError("at least one coefficient must be a SpectralField")
        a = _as_field(a, dim, grid_size)
        b = _as_field(b, dim, grid_size)
        a._like(b)
        self.freq = freq
        self.sign_flipped = False

        def definite_sign(field):
            lo, hi = float(np.min(field.values)), float(np.max(field.values))
            return 1 if lo > 0 else (-1 if hi < 0 else 0)

        sign_a, sign_b = definite_sign(a), definite_sign(b)
        if sign_a == sign_b == -1:
            a, b = -a, -b
            self.sign_flipped = True
        elif sign_a * sign_b == -1:
            raise MixedSign(
                f"coefficients have opposite definite signs ({sign_a:+d}, {sign_b:+d}); "
                "no single log factorization exists"
            )
        # indefinite coefficients fall through to the positivity check in
        # factor_coefficient
        self.a, self.b = a, b
        self.fact_a = factor_coefficient(a, freq, "forward")
        self.fact_b = factor_coefficient(b, freq, "backward")
        self.a_bar = self.fact_a.avg_coeff
        self.b_bar = self.fact_b.avg_coeff
        self.equal = abs(math.log(self.a_bar) - math.log(self.b_bar)) <= EQUAL_AVERAGE_TOL
        gamma_b_plus = self.fact_b.gamma.translate(freq.omega_array)
        # rhs transform gamma_a (gamma_b)_+ and the untwist factor 1/(gamma_a gamma_b)
        self.weight = multiply(self.fact_a.gamma, gamma_b_plus)
        self.untwist = multiply(self.fact_a.gamma, self.fact_b.gamma).reciprocal()
        self._divisors = (
            self.a_bar * translation_phases(dim, grid_size, freq.omega_array) - self.b_bar
        )
        self._zero = (0,) * dim

    @property
    def dim(self):
        return self.a.dim

    @property
    def grid_size(self):
        return self.a.grid_size

    def apply(self, u: SpectralField) -> SpectralField:
        """Evaluate ``a u_+ - b u`` (with the original signs)."""
        out = multiply(self.a, u.translate(self.freq.omega_array)) - multiply(self.b, u)
        return -out if self.sign_flipped else out

    def solve_raw(self, rhs: SpectralField):
        """Particular solve against a plain right-hand side (no counterterm).

        Returns ``(v, obstruction)``: in the equal-average branch the k = 0
        mode of the twisted unknown is left at zero and the obstruction is the
        mean of the transformed right-hand side (the solvability defect); in
        the unequal branch the solution is unique and the obstruction is None.
        """
        if self.sign_flipped:
            rhs = -rhs
        r = multiply(rhs, self.weight)
        coeffs = r.coefficients.copy()
        obstruction = None
        if self.equal:
            obstruction = float(coeffs[self._zero].real)
            coeffs[self._zero] = 0.0
        needed = np.abs(coeffs) > 0
        if self.equal:
            needed[self._zero] = False
        if np.any(needed & (np.abs(self._divisors) < DIVISOR_FLOOR)):
            worst = float(np.min(np.abs(self._divisors[needed])))
            raise SmallDivisorUnderflow(f"twisted divisor {worst:.3e} below floor")
        safe = self._divisors.copy()
        if self.equal:
            safe[self._zero] = 1.0
        m = SpectralField.from_coefficients(coeffs / safe)
        return multiply(m, self.untwist), obstruction

    @property
    def free_direction(self) -> SpectralField:
        """Solution-space direction of the free k = 0 twisted mode (equal branch)."""
        return self.untwist

    def solve(self, phi: SpectralField, w=None) -> TwistedSolution:
        """Solve ``a v_+ - b v = lambda w + phi`` with ``<v> = 0``.

        The map ``lambda -> solution`` is affine; it is sampled at
        ``lambda = 0`` and ``lambda = 1`` and combined to satisfy the active
        scalar condition (solvability when the averages are equal, ``<v> = 0``
        otherwise).
        """
        w = _as_field(1.0 if w is None else w, self.dim, self.grid_size)
        if self.equal:
            v_phi, obs_phi = self.solve_raw(phi)
            v_w, obs_w = self.solve_raw(w)
            sign = -1.0 if self.sign_flipped else 1.0
            if abs(obs_w) < TRANSVERSALITY_TOL:
                raise TransversalityLoss(
                    f"equal-average counterterm denominator {obs_w:.3e} below "
                    f"{TRANSVERSALITY_TOL:.0e}"
                )
            lam = -obs_phi / obs_w
            v = v_phi + lam * v_w
            shift = -v.average() / self.untwist.average()
            v = v + shift * self.untwist
            slope = sign * obs_w
            branch = "equal-average"
        else:
            v0, _ = self.solve_raw(phi)
            v1, _ = self.solve_raw(phi + w)
            slope = v1.average() - v0.average()
            if abs(slope) < TRANSVERSALITY_TOL:
                raise TransversalityLoss(
                    f"counterterm slope d<v>/dlambda = {slope:.3e} below "
                    f"{TRANSVERSALITY_TOL:.0e}"
                )
            lam = -v0.average() / slope
            v = v0 + lam * (v1 - v0)
            v = v.recentered()
            branch = "a-dominant" if self.a_bar > self.b_bar else "b-dominant"
        residual = self.apply(v) - lam * w - phi
        return TwistedSolution(
            lam=lam, v=v, branch=branch, residual_sup=residual.sup_norm(), slope=slope
        )


def solve_twisted(
    a, b, phi: SpectralField, w=None, freq: Frequency | None = None
) -> TwistedSolution:
    """One-shot form of :meth:`TwistedOperator.solve`."""
    if freq is None:
        raise ValueError("freq is required")
    return TwistedOperator(a, b, freq).solve(phi, w)
