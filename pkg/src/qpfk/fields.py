"""Real-analytic periodic functions on the (d-1)-torus.

A field is held redundantly as values on a uniform power-of-two grid and as
Fourier coefficients ``v(psi) = sum_k vhat_k exp(2*pi*i k.psi)`` in FFT layout.
Linear operations (translation, sums, scalar multiples, averaging) act exactly
on whichever representation is available; nonlinear grid operations (products,
exp, log, reciprocals) are followed by spectral truncation under the 2/3
dealiasing rule.  All operations are pure and return new fields, so
synchronized fields can be shared freely across threads.

Conventions kept throughout the package:

* grid point ``j`` sits at ``psi = j/N`` (unit torus),
* ``coefficients`` are amplitudes, i.e. ``fftn(values)/N**dim``, so the
  ``k = 0`` entry is the average,
* the Nyquist bin ``k = -N/2`` of a real field is treated as a pure cosine:
  translation multiplies it by ``cos(pi*N*shift)`` and grid refinement splits
  it evenly between ``+N/2`` and ``-N/2``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ImaginaryResidue, NonPositiveCoefficient

# Relative tolerance on imaginary parts of grid values derived from spectra.
IMAG_RESIDUE_TOL = 1e-10
# Grid values at or below this floor reject log/reciprocal.
POSITIVITY_FLOOR = 1e-12

# Fraction of the spectrum kept by the dealiasing rule (modes with any
# |k_i| > fraction*N are zeroed).  ``None`` disables truncation.
_DEALIAS_FRACTION: float | None = 1.0 / 3.0


def set_dealias_fraction(fraction: float | None) -> None:
    """Set the global dealiasing fraction (1/3 default, ``None`` disables)."""
    global _DEALIAS_FRACTION
    if fraction is not None and not 0.0 < fraction <= 0.5:
        raise ValueError(f"dealias fraction must lie in (0, 1/2], got {fraction}")
    _DEALIAS_FRACTION = fraction


def dealias_fraction() -> float | None:
    return _DEALIAS_FRACTION


def _check_grid_size(n: int) -> None:
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError(f"grid_size must be a power of two >= 4, got {n}")


@lru_cache(maxsize=None)
def _mode_axes(dim: int, grid_size: int) -> tuple[np.ndarray, ...]:
    """Integer mode numbers along each axis in FFT layout (Nyquist is -N/2)."""
    k = np.fft.fftfreq(grid_size, d=1.0 / grid_size).astype(np.int64)
    return tuple(k.reshape((-1,) + (1,) * (dim - 1 - i)) for i in range(dim))


@lru_cache(maxsize=None)
def _dealias_mask(dim: int, grid_size: int, fraction: float) -> np.ndarray:
    limit = int(grid_size * fraction)
    mask = np.ones((grid_size,) * dim, dtype=bool)
    for ax in _mode_axes(dim, grid_size):
        mask &= np.abs(ax) <= limit
    return mask


@lru_cache(maxsize=None)
def _negation_index(grid_size: int) -> np.ndarray:
    return (-np.arange(grid_size)) % grid_size


def _hermitianize(coeffs: np.ndarray) -> np.ndarray:
    """Project a spectrum onto the Hermitian (real-field) part."""
    neg = _negation_index(coeffs.shape[0])
    reflected = coeffs[np.ix_(*([neg] * coeffs.ndim))]
    return 0.5 * (coeffs + np.conj(reflected))


class SpectralField:
    """Immutable real field on the (d-1)-torus with grid and spectral views."""

    __slots__ = ("dim", "grid_size", "_grid", "_coeffs")

    def __init__(self, dim: int, grid_size: int, grid=None, coeffs=None):
        if grid is None and coeffs is None:
            raise ValueError("need at least one representation")
        _check_grid_size(grid_size)
        if not 1 <= dim <= 2:
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        self.dim = dim
        self.grid_size = grid_size
        self._grid = grid
        self._coeffs = coeffs

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_grid(cls, values) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.ndim not in (1, 2) or any(s != values.shape[0] for s in values.shape):
            raise ValueError(f"grid must be square, got shape {values.shape}")
        return cls(values.ndim, values.shape[0], grid=values.copy())

    @classmethod
    def from_coefficients(cls, coeffs) -> "SpectralField":
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim not in (1, 2) or any(s != coeffs.shape[0] for s in coeffs.shape):
            raise ValueError(f"spectrum must be square, got shape {coeffs.shape}")
        return cls(coeffs.ndim, coeffs.shape[0], coeffs=_hermitianize(coeffs))

    @classmethod
    def zeros(cls, dim: int, grid_size: int) -> "SpectralField":
        return cls(dim, grid_size, grid=np.zeros((grid_size,) * dim))

    @classmethod
    def constant(cls, value: float, dim: int, grid_size: int) -> "SpectralField":
        return cls(dim, grid_size, grid=np.full((grid_size,) * dim, float(value)))

    @classmethod
    def harmonic(cls, dim: int, grid_size: int, k, amplitude: complex) -> "SpectralField":
        """The real field ``2*Re(amplitude * exp(2*pi*i k.psi))`` (or ``Re`` if k=0)."""
        k = np.atleast_1d(np.asarray(k, dtype=int))
        if k.shape != (dim,):
            raise ValueError(f"mode index must have length {dim}")
        coeffs = np.zeros((grid_size,) * dim, dtype=complex)
        idx = tuple(int(ki) % grid_size for ki in k)
        if all(i == 0 for i in idx):
            coeffs[idx] = complex(amplitude).real
        else:
            coeffs[idx] = amplitude
            coeffs[tuple((-ki) % grid_size for ki in k)] = np.conj(amplitude)
        return cls(dim, grid_size, coeffs=coeffs)

    # -- representations ---------------------------------------------------

    @property
    def representation(self) -> str:
        if self._grid is not None and self._coeffs is not None:
            return "both"
        return "grid" if self._grid is not None else "spectral"

    def synchronize(self) -> "SpectralField":
        """Fill both representations (idempotent; O(N log N))."""
        self.values
        self.coefficients
        return self

    @property
    def size(self) -> int:
        return self.grid_size ** self.dim

    @property
    def values(self) -> np.ndarray:
        if self._grid is None:
            z = np.fft.ifftn(self._coeffs) * self.size
            scale = max(1.0, float(np.max(np.abs(z))))
            resid = float(np.max(np.abs(z.imag)))
            if resid > IMAG_RESIDUE_TOL * scale:
                raise ImaginaryResidue(
                    f"imaginary residue {resid:.3e} exceeds {IMAG_RESIDUE_TOL:.0e} "
                    f"relative to scale {scale:.3e}"
                )
            self._grid = z.real
        return self._grid

    @property
    def coefficients(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = np.fft.fftn(self._grid) / self.size
        return self._coeffs

    # -- linear operations ---------------------------------------------------

    def _like(self, other: "SpectralField") -> None:
        if not isinstance(other, SpectralField):
            raise TypeError(f"expected SpectralField, got {type(other).__name__}")
        if (self.dim, self.grid_size) != (other.dim, other.grid_size):
            raise ValueError(
                f"field shape mismatch: dim/grid {self.dim}/{self.grid_size} "
                f"vs {other.dim}/{other.grid_size}"
            )

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._like(other)
            return SpectralField(self.dim, self.grid_size, grid=self.values + other.values)
        return SpectralField(self.dim, self.grid_size, grid=self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._like(other)
            return SpectralField(self.dim, self.grid_size, grid=self.values - other.values)
        return SpectralField(self.dim, self.grid_size, grid=self.values - float(other))

    def __rsub__(self, other):
        return SpectralField(self.dim, self.grid_size, grid=float(other) - self.values)

    def __neg__(self):
        return SpectralField(self.dim, self.grid_size, grid=-self.values)

    def __mul__(self, other):
        if isinstance(other, SpectralField):
            return multiply(self, other)
        return SpectralField(self.dim, self.grid_size, grid=self.values * float(other))

    __rmul__ = __mul__

    def translate(self, shift) -> "SpectralField":
        """Shift the argument: ``v(psi) -> v(psi + shift)``, exact in Fourier space."""
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        if shift.shape != (self.dim,):
            raise ValueError(f"shift must have length {self.dim}")
        n = self.grid_size
        coeffs = self.coefficients
        phased = coeffs
        for axis in range(self.dim):
            k = np.fft.fftfreq(n, d=1.0 / n)
            phase = np.exp(2j * np.pi * k * shift[axis])
            # Nyquist bin as cosine: the symmetric average of exp(+-i pi N s).
            phase[n // 2] = math.cos(math.pi * n * shift[axis])
            shape = [1] * self.dim
            shape[axis] = n
            phased = phased * phase.reshape(shape)
        return SpectralField(self.dim, self.grid_size, coeffs=phased)

    def average(self) -> float:
        if self._coeffs is not None:
            return float(self._coeffs[(0,) * self.dim].real)
        return float(np.mean(self._grid))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def recentered(self) -> "SpectralField":
        """Subtract the mean so the k = 0 coefficient vanishes."""
        return self - self.average()

    # -- nonlinear (grid) operations ------------------------------------------

    def dealias(self, fraction: float | None = None) -> "SpectralField":
        frac = _DEALIAS_FRACTION if fraction is None else fraction
        if frac is None:
            return self
        mask = _dealias_mask(self.dim, self.grid_size, frac)
        return SpectralField(self.dim, self.grid_size, coeffs=np.where(mask, self.coefficients, 0.0))

    def exp(self) -> "SpectralField":
        return SpectralField(self.dim, self.grid_size, grid=np.exp(self.values)).dealias()

    def log(self) -> "SpectralField":
        vals = self.values
        lo = float(np.min(vals))
        if lo <= POSITIVITY_FLOOR:
            raise NonPositiveCoefficient(
                f"log requires strictly positive grid values; min = {lo:.3e}"
            )
        return SpectralField(self.dim, self.grid_size, grid=np.log(vals)).dealias()

    def reciprocal(self) -> "SpectralField":
        vals = self.values
        lo = float(np.min(vals))
        if lo <= POSITIVITY_FLOOR:
            raise NonPositiveCoefficient(
                f"reciprocal requires strictly positive grid values; min = {lo:.3e}"
            )
        return SpectralField(self.dim, self.grid_size, grid=1.0 / vals).dealias()

    # -- diagnostics ------------------------------------------------------------

    def tail_fraction(self) -> float:
        """Share of spectral energy in the outer half-octave of the retained band.

        The dealiasing rule zeroes everything above ``N/3``, so the honest
        under-resolution signal is energy accumulating just below the cutoff:
        modes with some ``|k_i|`` in ``(N/6, N/3]`` relative to total energy.
        """
        coeffs = self.coefficients
        total = float(np.sum(np.abs(coeffs) ** 2))
        if total == 0.0:
            return 0.0
        outer = ~_dealias_mask(self.dim, self.grid_size, 1.0 / 6.0)
        inner_band = _dealias_mask(self.dim, self.grid_size, 1.0 / 3.0)
        band = outer & inner_band
        return math.sqrt(float(np.sum(np.abs(coeffs[band]) ** 2)) / total)

    def analytic_norm_bound(self, rho: float) -> "AnalyticNormCertificate":
        """Certified upper bound ``sum_k |vhat_k| e^{2 pi |k|_1 rho}`` for the strip norm."""
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        axes = _mode_axes(self.dim, self.grid_size)
        k1 = sum(np.abs(ax) for ax in axes)
        with np.errstate(over="ignore", invalid="ignore"):
            weights = np.exp(2.0 * np.pi * k1 * rho)
            bound = float(np.sum(np.abs(self.coefficients) * weights))
        return AnalyticNormCertificate(rho=rho, bound=bound, overflow=not math.isfinite(bound))

    # -- resolution changes -------------------------------------------------------

    def refine(self, factor: int = 2) -> "SpectralField":
        """Resample on a ``factor``-times finer grid (trigonometric interpolation)."""
        if factor < 1 or (factor & (factor - 1)) != 0:
            raise ValueError("refinement factor must be a power of two")
        if factor == 1:
            return self
        n, m = self.grid_size, self.grid_size * factor
        src = self.coefficients
        out = np.zeros((m,) * self.dim, dtype=complex)
        sel_src = np.fft.fftfreq(n, d=1.0 / n).astype(int)
        out[np.ix_(*([sel_src % m] * self.dim))] = src
        # Split each axis' Nyquist line between +-N/2 in the finer spectrum.
        for axis in range(self.dim):
            idx_neg = [slice(None)] * self.dim
            idx_pos = [slice(None)] * self.dim
            idx_neg[axis] = (-(n // 2)) % m
            idx_pos[axis] = n // 2
            out[tuple(idx_neg)] *= 0.5
            out[tuple(idx_pos)] = out[tuple(idx_neg)]
        return SpectralField(self.dim, m, coeffs=_hermitianize(out))

    def restrict(self, grid_size: int) -> "SpectralField":
        """Drop to a coarser grid, folding the target Nyquist line."""
        _check_grid_size(grid_size)
        m, n = self.grid_size, grid_size
        if m == n:
            return self
        if m < n or m % n:
            raise ValueError(f"cannot restrict grid {m} to {n}")
        src = self.coefficients
        sel = np.fft.fftfreq(n, d=1.0 / n).astype(int)
        out = src[np.ix_(*([sel % m] * self.dim))].copy()
        for axis in range(self.dim):
            idx_out = [slice(None)] * self.dim
            idx_out[axis] = n // 2
            idx_src = [np.asarray(sel % m)] * self.dim
            idx_src[axis] = np.asarray([n // 2])
            out[tuple(idx_out)] += np.squeeze(src[np.ix_(*idx_src)], axis=axis)
        return SpectralField(self.dim, n, coeffs=_hermitianize(out))

    # -- text format -----------------------------------------------------------

    def format_coefficients(self) -> str:
        """Dump modes lexicographically as ``k_1 .. k_{d-1} re im`` lines."""
        n = self.grid_size
        coeffs = self.coefficients
        buf = io.StringIO()
        buf.write(f"# dim={self.dim} grid={n}\n")
        rng = range(-n // 2, n // 2)
        if self.dim == 1:
            for k in rng:
                c = coeffs[k % n]
                buf.write(f"{k} {c.real:.17e} {c.imag:.17e}\n")
        else:
            for k1 in rng:
                for k2 in rng:
                    c = coeffs[k1 % n, k2 % n]
                    buf.write(f"{k1} {k2} {c.real:.17e} {c.imag:.17e}\n")
        return buf.getvalue()

    @classmethod
    def parse_coefficients(cls, text: str) -> "SpectralField":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("missing coefficient dump header")
        header = dict(part.split("=") for part in lines[0].lstrip("# ").split())
        dim, n = int(header["dim"]), int(header["grid"])
        coeffs = np.zeros((n,) * dim, dtype=complex)
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != dim + 2:
                raise ValueError(f"bad coefficient line: {ln!r}")
            idx = tuple(int(p) % n for p in parts[:dim])
            coeffs[idx] = complex(float(parts[dim]), float(parts[dim + 1]))
        return cls(dim, n, coeffs=coeffs)

    def __repr__(self):
        return (
            f"SpectralField(dim={self.dim}, grid_size={self.grid_size}, "
            f"representation={self.representation!r})"
        )


@dataclass(frozen=True)
class AnalyticNormCertificate:
    """Certified upper bound for the sup norm on the strip of half-width rho."""

    rho: float
    bound: float
    overflow: bool = False


def multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Dealiased pointwise product of two fields."""
    f._like(g)
    return SpectralField(f.dim, f.grid_size, grid=f.values * g.values).dealias()
