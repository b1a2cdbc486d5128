"""Quasi-periodic potential, model configuration, and equation residuals.

The model couples a finite trigonometric potential ``W`` on the d-torus to a
hull-function unknown ``v`` on the (d-1)-torus through the composition
``W((psi, eta) + beta v(psi))`` at a fixed transversal phase ``eta``.  This
module evaluates that composition and its first two directional derivatives
along ``beta``, and forms the residuals of the equilibrium equation

    e = v_+ + v_- - 2 v + W_v + sigma v + lambda

and of the factorization equation

    f = (-c + 2 - dW_v - sigma) c_+ - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cohomology import Frequency
from .errors import ImaginaryResidue, RangeViolation
from .fields import IMAG_RESIDUE_TOL, POSITIVITY_FLOOR, SpectralField, multiply

# Default refinement factor for evaluating the unimodular composition factor.
OVERSAMPLE = 2
# Fraction of the declared strip reserved as the (H4)-style range margin.
RANGE_MARGIN_FRACTION = 0.5


@dataclass(frozen=True)
class Potential:
    """Finite trigonometric polynomial on the d-torus, real on real arguments.

    ``modes`` maps integer vectors j to complex amplitudes and is Hermitian by
    construction (the -j amplitude is the conjugate).  ``declared_strip`` is
    diagnostic metadata: the half-width of the analyticity strip the caller
    vouches for, used by the composition range check (infinite by default,
    which disables the check).
    """

    dim_total: int
    modes: tuple[tuple[tuple[int, ...], complex], ...]
    declared_strip: float = math.inf

    @classmethod
    def from_modes(cls, dim_total, mode_amplitudes, declared_strip=math.inf) -> "Potential":
        merged: dict[tuple[int, ...], complex] = {}
        for j, amp in dict(mode_amplitudes).items():
            j = tuple(int(ji) for ji in np.atleast_1d(j))
            if len(j) != dim_total:
                raise ValueError(f"mode {j} does not have {dim_total} components")
            merged[j] = merged.get(j, 0.0) + complex(amp)
        closed = dict(merged)
        for j, amp in merged.items():
            neg = tuple(-ji for ji in j)
            if neg == j:
                if abs(amp.imag) > 1e-15 * max(1.0, abs(amp)):
                    raise ValueError(f"amplitude at self-conjugate mode {j} must be real")
                closed[j] = complex(amp.real)
            elif neg not in merged:
                closed[neg] = np.conj(amp)
            elif abs(merged[neg] - np.conj(amp)) > 1e-14 * max(1.0, abs(amp)):
                raise ValueError(f"modes {j} and {neg} are not conjugate")
        items = tuple(sorted((j, a) for j, a in closed.items() if a != 0))
        return cls(dim_total=dim_total, modes=items, declared_strip=float(declared_strip))

    @classmethod
    def zero(cls, dim_total: int) -> "Potential":
        return cls(dim_total=dim_total, modes=(), declared_strip=math.inf)

    @classmethod
    def cosine(cls, j, amplitude: float, declared_strip=math.inf) -> "Potential":
        """``amplitude * cos(2 pi j.theta)`` for an integer vector j."""
        j = tuple(int(ji) for ji in np.atleast_1d(j))
        return cls.from_modes(len(j), {j: amplitude / 2.0}, declared_strip)

    def __add__(self, other: "Potential") -> "Potential":
        if self.dim_total != other.dim_total:
            raise ValueError("potential dimensions differ")
        merged: dict[tuple[int, ...], complex] = dict(self.modes)
        for j, a in other.modes:
            merged[j] = merged.get(j, 0.0) + a
        strip = min(self.declared_strip, other.declared_strip)
        return Potential.from_modes(self.dim_total, merged, strip)

    def scaled(self, factor: float) -> "Potential":
        return Potential(
            dim_total=self.dim_total,
            modes=tuple((j, a * factor) for j, a in self.modes),
            declared_strip=self.declared_strip,
        )

    def c2_size(self, beta) -> float:
        """Size proxy for the C^2 norm along beta: sum |W_j| (1 + |2 pi j.b| + (2 pi j.b)^2)."""
        beta = np.asarray(beta, dtype=float)
        total = 0.0
        for j, amp in self.modes:
            jb = 2.0 * math.pi * float(np.dot(j, beta))
            total += abs(amp) * (1.0 + abs(jb) + jb * jb)
        return total

    def format(self) -> str:
        lines = [f"# d={self.dim_total}"]
        for j, amp in self.modes:
            idx = " ".join(str(ji) for ji in j)
            lines.append(f"{idx} {amp.real:.17e} {amp.imag:.17e}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, declared_strip=math.inf) -> "Potential":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("missing potential header")
        header = dict(part.split("=") for part in lines[0].lstrip("# ").split())
        d = int(header["d"])
        modes: dict[tuple[int, ...], complex] = {}
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != d + 2:
                raise ValueError(f"bad potential line: {ln!r}")
            j = tuple(int(p) for p in parts[:d])
            modes[j] = complex(float(parts[d]), float(parts[d + 1]))
        return cls.from_modes(d, modes, declared_strip)


@dataclass(frozen=True)
class ModelConfig:
    """Frequency, coupling vector, transversal phase, and potential."""

    freq: Frequency
    beta: tuple[float, ...]
    eta: float
    potential: Potential

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        d = self.freq.dim + 1
        if len(self.beta) != d:
            raise ValueError(f"beta must have length d = {d}, got {len(self.beta)}")
        if self.potential.dim_total != d:
            raise ValueError(
                f"potential lives on a {self.potential.dim_total}-torus, expected {d}"
            )

    @property
    def dim(self) -> int:
        return self.freq.dim

    @property
    def beta_psi(self) -> np.ndarray:
        return np.asarray(self.beta[:-1])

    @property
    def beta_eta(self) -> float:
        return self.beta[-1]

    def with_eta(self, eta: float) -> "ModelConfig":
        return replace(self, eta=float(eta))

    def with_potential(self, potential: Potential) -> "ModelConfig":
        return replace(self, potential=potential)


@dataclass
class SolverState:
    """Current iterate ``(v, sigma, lambda, c)`` of the coupled equations."""

    v: SpectralField
    sigma: float
    lam: float
    c: SpectralField
    cache: object = field(default=None, compare=False, repr=False)

    @classmethod
    def trivial(cls, dim: int, grid_size: int) -> "SolverState":
        return cls(
            v=SpectralField.zeros(dim, grid_size),
            sigma=0.0,
            lam=0.0,
            c=SpectralField.constant(1.0, dim, grid_size),
        )

    @property
    def dim(self) -> int:
        return self.v.dim

    @property
    def grid_size(self) -> int:
        return self.v.grid_size

    def recentered(self) -> "SolverState":
        return SolverState(v=self.v.recentered(), sigma=self.sigma, lam=self.lam, c=self.c)

    def distance(self, other: "SolverState") -> float:
        """Sup distance over all four components."""
        return max(
            (self.v - other.v).sup_norm(),
            abs(self.sigma - other.sigma),
            abs(self.lam - other.lam),
            (self.c - other.c).sup_norm(),
        )


@dataclass(frozen=True)
class PotentialTerms:
    """Composition ``W_v`` and its first two derivatives along beta."""

    W: SpectralField
    dW: SpectralField
    ddW: SpectralField

    def __iter__(self):
        return iter((self.W, self.dW, self.ddW))


def _range_check(v: SpectralField, config: ModelConfig, margin_fraction: float) -> None:
    strip = config.potential.declared_strip
    if not math.isfinite(strip):
        return
    excursion = float(np.sum(np.abs(config.beta))) * v.sup_norm()
    allowed = (1.0 - margin_fraction) * strip
    if excursion > allowed:
        raise RangeViolation(
            f"|beta|_1 * sup|v| = {excursion:.3e} exceeds {allowed:.3e} "
            f"(declared strip {strip:.3e}, margin fraction {margin_fraction})"
        )


def _real_part(values: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    resid = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if resid > IMAG_RESIDUE_TOL * scale:
        raise ImaginaryResidue(
            f"potential composition imaginary residue {resid:.3e} (scale {scale:.3e})"
        )
    return values.real


def eval_potential_terms(
    v: SpectralField,
    config: ModelConfig,
    oversample: int = OVERSAMPLE,
    margin_fraction: float = RANGE_MARGIN_FRACTION,
) -> PotentialTerms:
    """Evaluate ``W((psi,eta) + beta v)`` and its beta-derivatives on the grid.

    Mode by mode: the term ``W_j e^{2 pi i j.(psi,eta)} e^{2 pi i (j.beta) v}``
    is accumulated on an ``oversample``-times refined grid (the unimodular
    factor is analytic but not band-limited), then truncated back and
    dealiased.
    """
    _range_check(v, config, margin_fraction)
    dim, n = v.dim, v.grid_size
    if not config.potential.modes:
        zero = SpectralField.zeros(dim, n)
        return PotentialTerms(W=zero, dW=zero, ddW=zero)
    v_fine = v.refine(oversample)
    nf = n * oversample
    beta = np.asarray(config.beta)
    axes = [np.arange(nf) / nf] * dim
    psi = np.meshgrid(*axes, indexing="ij") if dim > 1 else [axes[0]]
    vals = v_fine.values
    acc_w = np.zeros((nf,) * dim, dtype=complex)
    acc_dw = np.zeros_like(acc_w)
    acc_ddw = np.zeros_like(acc_w)
    for j, amp in config.potential.modes:
        j = np.asarray(j)
        jb = 2j * np.pi * float(np.dot(j, beta))
        phase_psi = sum(j[i] * psi[i] for i in range(dim))
        factor = amp * np.exp(2j * np.pi * (phase_psi + j[-1] * config.eta)) * np.exp(jb * vals)
        acc_w += factor
        acc_dw += jb * factor
        acc_ddw += jb * jb * factor
    out = []
    for acc in (acc_w, acc_dw, acc_ddw):
        fine = SpectralField.from_grid(_real_part(acc))
        out.append(fine.restrict(n).dealias())
    return PotentialTerms(W=out[0], dW=out[1], ddW=out[2])


def equilibrium_residual(
    state: SolverState, config: ModelConfig, terms: PotentialTerms | None = None
) -> SpectralField:
    """``e = v_+ + v_- - 2 v + W_v + sigma v + lambda`` on the grid."""
    if terms is None:
        terms = eval_potential_terms(state.v, config)
    omega = config.freq.omega_array
    v = state.v
    return (
        v.translate(omega)
        + v.translate(-omega)
        - 2.0 * v
        + terms.W
        + state.sigma * v
        + state.lam
    )


def factorization_residual(
    state: SolverState, config: ModelConfig, terms: PotentialTerms | None = None
) -> SpectralField:
    """``f = (-c + 2 - dW_v - sigma) c_+ - 1`` on the grid."""
    if terms is None:
        terms = eval_potential_terms(state.v, config)
    omega = config.freq.omega_array
    c_plus = state.c.translate(omega)
    return multiply(2.0 - state.c - terms.dW - state.sigma, c_plus) - 1.0


@dataclass(frozen=True)
class NondegeneracyThresholds:
    """Configured bounds for the runtime nondegeneracy checks.

    The corresponding theoretical constants are symbolic order-one bounds;
    these defaults are deliberately liberal so the checks act as sanity
    diagnostics rather than artificial stops.
    """

    max_c_deviation: float = 0.9
    max_sigma: float = 0.5
    max_potential: float = 10.0
    max_v: float = 0.5
    transversality_floor: float = 1e-6


@dataclass(frozen=True)
class NondegeneracyCheck:
    name: str
    value: float
    threshold: float
    ok: bool
    margin: float


@dataclass(frozen=True)
class NondegeneracyReport:
    passed: bool
    checks: tuple[NondegeneracyCheck, ...]

    def __getitem__(self, name: str) -> NondegeneracyCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


def check_nondegeneracy(
    state: SolverState,
    config: ModelConfig,
    thresholds: NondegeneracyThresholds | None = None,
    B: SpectralField | None = None,
    terms: PotentialTerms | None = None,
) -> NondegeneracyReport:
    """Evaluate the runtime analogues of the nondegeneracy hypotheses.

    Never raises.  With ``B`` unavailable (before a Newton step has produced
    it) the transversality integrand is evaluated at B = 0, i.e. as ``<c_+>``.
    """
    th = thresholds or NondegeneracyThresholds()
    checks = []

    def add(name, value, threshold, ok=None):
        ok = (value < threshold) if ok is None else ok
        checks.append(
            NondegeneracyCheck(
                name=name, value=float(value), threshold=float(threshold),
                ok=bool(ok), margin=float(threshold - value),
            )
        )

    add("c_deviation", (state.c - 1.0).sup_norm(), th.max_c_deviation)
    add("sigma_size", abs(state.sigma), th.max_sigma)
    add("potential_size", config.potential.c2_size(config.beta), th.max_potential)
    add("v_size", state.v.sup_norm(), th.max_v)
    c_min = float(np.min(state.c.values))
    add("c_positive", -c_min, -POSITIVITY_FLOOR, ok=c_min > POSITIVITY_FLOOR)
    c_plus = state.c.translate(config.freq.omega_array)
    if B is None:
        integrand_mean = -c_plus.average()
    else:
        if terms is None:
            terms = eval_potential_terms(state.v, config)
        integrand_mean = (-c_plus - multiply(multiply(terms.ddW, c_plus), B)).average()
    add(
        "transversality",
        -abs(integrand_mean),
        -th.transversality_floor,
        ok=abs(integrand_mean) >= th.transversality_floor,
    )
    return NondegeneracyReport(passed=all(c.ok for c in checks), checks=tuple(checks))
