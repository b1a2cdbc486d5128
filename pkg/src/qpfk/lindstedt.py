"""Order-by-order perturbative expansion of ``(v, sigma, lambda, c)``.

For the potential family ``W^mu = mu * W`` the solution of the coupled
equilibrium and factorization equations is expanded in powers of
``mu - mu0`` around a base point at which the linearization factorizes
(the trivial state at ``mu0 = 0`` by default).  The order-n pair of
equations has exactly the structure of the quasi-Newton linear solve, with
right-hand sides assembled from lower orders, so the solver's chain and
counterterm machinery is reused verbatim at every order.

The composition ``W((psi,eta) + beta v(mu))`` is expanded per potential mode
through the exponential power-series recursion ``E' = 2 pi i (j.beta) v' E``
(coefficient convolution), carried on a refined grid like the direct
evaluation path.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import InterpolationUnderResolved, QpfkError
from .fields import SpectralField, _dealias_mask, dealias_fraction
from .model import (
    ModelConfig,
    OVERSAMPLE,
    PotentialTerms,
    SolverState,
    equilibrium_residual,
    factorization_residual,
)
from .solver import StateCache, build_factors, chain_solve, solve_sigma_c

log = logging.getLogger(__name__)

# Per-order norm growth beyond this flags likely divergence within the radius.
GROWTH_BOUND = 1e3
# Residual tolerance for accepting the base point as an exact solution.
BASE_RESIDUAL_TOL = 1e-11


@dataclass
class PerturbativeSeries:
    """Taylor coefficients of the solution family in ``mu - mu0``.

    Index 0 of each coefficient list holds the base-point value; the
    normalization ``<v^n> = 0`` holds for every n >= 1.
    """

    config: ModelConfig            # the unit family member W (scaled by mu)
    mu0: float
    order: int
    v_coeffs: list[SpectralField]
    sigma_coeffs: list[float]
    lambda_coeffs: list[float]
    c_coeffs: list[SpectralField]
    equilibrium_only: bool = False
    order_residuals: list[float] = dc_field(default_factory=list)
    growth_flag: bool = False

    @property
    def base_point(self) -> SolverState:
        return SolverState(
            v=self.v_coeffs[0], sigma=self.sigma_coeffs[0],
            lam=self.lambda_coeffs[0], c=self.c_coeffs[0],
        )


def _dealias_complex(arr: np.ndarray) -> np.ndarray:
    frac = dealias_fraction()
    if frac is None:
        return arr
    mask = _dealias_mask(arr.ndim, arr.shape[0], frac)
    return np.fft.ifftn(np.where(mask, np.fft.fftn(arr), 0.0))


def _to_field(values: np.ndarray, grid_size: int) -> SpectralField:
    scale = max(1.0, float(np.max(np.abs(values))))
    resid = float(np.max(np.abs(values.imag)))
    if resid > 1e-9 * scale:
        raise QpfkError(f"series coefficient imaginary residue {resid:.3e}")
    return SpectralField.from_grid(values.real).restrict(grid_size).dealias()


class _CompositionSeries:
    """Taylor coefficients of ``W((psi,eta)+beta v(mu))`` and derivatives.

    Works on an oversampled grid; per potential mode j it tracks the series
    ``E_j = exp(2 pi i (j.beta) (v(mu) - v0))`` via the standard exponential
    recursion, appending one order at a time as new ``v^n`` become known.
    """

    def __init__(self, config: ModelConfig, v0: SpectralField, oversample: int = OVERSAMPLE):
        self.config = config
        self.grid_size = v0.grid_size
        self.dim = v0.dim
        self.oversample = oversample
        nf = self.grid_size * oversample
        axes = [np.arange(nf) / nf] * self.dim
        psi = np.meshgrid(*axes, indexing="ij") if self.dim > 1 else [axes[0]]
        v0_fine = v0.refine(oversample).values
        beta = np.asarray(config.beta)
        self.mode_jb: list[complex] = []
        self.mode_base: list[np.ndarray] = []
        self.exp_series: list[list[np.ndarray]] = []
        ones = np.ones((nf,) * self.dim, dtype=complex)
        for j, amp in config.potential.modes:
            j = np.asarray(j)
            jb = 2j * np.pi * float(np.dot(j, beta))
            phase_psi = sum(j[i] * psi[i] for i in range(self.dim))
            base = amp * np.exp(2j * np.pi * (phase_psi + j[-1] * config.eta)) * np.exp(jb * v0_fine)
            self.mode_jb.append(jb)
            self.mode_base.append(base)
            self.exp_series.append([ones])
        self.v_fine: list[np.ndarray] = [v0_fine]  # refined values of each v^n

    def order(self) -> int:
        return len(self.v_fine) - 1

    def append_order(self, v_n: SpectralField) -> None:
        """Extend every per-mode exponential series with a newly solved v^n."""
        n = self.order() + 1
        vf = v_n.refine(self.oversample).values
        self.v_fine.append(vf)
        for jb, series in zip(self.mode_jb, self.exp_series):
            acc = np.zeros_like(series[0])
            for m in range(1, n + 1):
                acc += m * (jb * self.v_fine[m]) * series[n - m]
            series.append(_dealias_complex(acc / n))

    def partial_next(self) -> list[np.ndarray]:
        """Order-(n+1) exponential coefficients with the unknown ``v^{n+1}`` zeroed."""
        n = self.order() + 1
        out = []
        for jb, series in zip(self.mode_jb, self.exp_series):
            acc = np.zeros_like(series[0])
            for m in range(1, n):
                acc += m * (jb * self.v_fine[m]) * series[n - m]
            out.append(_dealias_complex(acc / n))
        return out

    def assemble(self, exp_coeffs: list[np.ndarray], derivative: int = 0) -> SpectralField:
        """Sum the per-mode terms into a real field coefficient.

        ``derivative`` applies the extra factor ``(2 pi i j.beta)^derivative``
        (directional derivatives along beta).
        """
        nf = self.grid_size * self.oversample
        acc = np.zeros((nf,) * self.dim, dtype=complex)
        for jb, base, e_n in zip(self.mode_jb, self.mode_base, exp_coeffs):
            acc += (jb ** derivative) * base * e_n
        return _to_field(acc, self.grid_size)

    def coefficient(self, n: int, derivative: int = 0) -> SpectralField:
        return self.assemble([series[n] for series in self.exp_series], derivative)


def expand_series(
    config: ModelConfig,
    order: int,
    base: SolverState | None = None,
    mu0: float = 0.0,
    equilibrium_only: bool = False,
    grid_size: int = 128,
    oversample: int = OVERSAMPLE,
    growth_bound: float = GROWTH_BOUND,
) -> PerturbativeSeries:
    """Expand the family ``W^mu = mu * W`` around a factorizing base point.

    The default base is the trivial solution ``(0, 0, 0, 1)`` at ``mu0 = 0``
    (the linearization around zero admits the trivial factorization).  The
    base must solve both equations at ``mu0`` to within ``1e-11``.  With
    ``equilibrium_only=True`` only the equilibrium hierarchy is solved, with
    ``sigma^n = 0`` and no factorization coefficients.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if base is None:
        base = SolverState.trivial(config.dim, grid_size)
    base_config = config.with_potential(config.potential.scaled(mu0))
    comp = _CompositionSeries(config, base.v, oversample)
    # Base-point potential terms from the series machinery itself, so every
    # order equation is consistent with one evaluation path.
    s0 = comp.coefficient(0, 0)
    d1s0 = comp.coefficient(0, 1)
    d2s0 = comp.coefficient(0, 2)
    base_terms = PotentialTerms(W=mu0 * s0, dW=mu0 * d1s0, ddW=mu0 * d2s0)
    base_state = SolverState(v=base.v, sigma=base.sigma, lam=base.lam, c=base.c)
    e0 = equilibrium_residual(base_state, base_config, base_terms)
    f0 = factorization_residual(base_state, base_config, base_terms)
    if max(e0.sup_norm(), f0.sup_norm()) > BASE_RESIDUAL_TOL:
        raise QpfkError(
            f"base point does not solve the equations at mu0 = {mu0}: "
            f"residuals ({e0.sup_norm():.3e}, {f0.sup_norm():.3e})"
        )
    base_state.cache = StateCache(terms=base_terms, e=e0, f=f0)
    factors = build_factors(base_state, base_config)
    base_state.cache.factors = factors
    freq = config.freq
    if equilibrium_only:
        B = SpectralField.zeros(base.dim, base.grid_size)
        D = 0.0
    else:
        B, D = chain_solve(factors, freq, -base.v)

    series = PerturbativeSeries(
        config=config, mu0=mu0, order=order,
        v_coeffs=[base.v], sigma_coeffs=[base.sigma],
        lambda_coeffs=[base.lam], c_coeffs=[base.c],
        equilibrium_only=equilibrium_only,
    )
    c0_plus = factors.c_plus
    omega = freq.omega_array
    zero = SpectralField.zeros(base.dim, base.grid_size)

    for n in range(1, order + 1):
        exp_part = comp.partial_next()
        s_part_n = comp.assemble(exp_part, 0)       # W-composition coeff, v^n zeroed
        s_prev = comp.coefficient(n - 1, 0)
        # order-n coefficient of E with order-n unknowns zeroed:
        #   mu0 * S_n^part + S_{n-1} + sum_{m=1}^{n-1} sigma^m v^{n-m}
        e_part = mu0 * s_part_n + s_prev
        for m in range(1, n):
            e_part = e_part + series.sigma_coeffs[m] * series.v_coeffs[n - m]
        A, G = chain_solve(factors, freq, -e_part)

        if equilibrium_only:
            sigma_n, c_n = 0.0, zero
            v_n, lam_n = A, G
        else:
            d1s_part_n = comp.assemble(exp_part, 1)
            d1s_prev = comp.coefficient(n - 1, 1)
            # F coefficient with order-n unknowns zeroed: Q_n^part c0_+ plus
            # the known middle products Q_p (c^{n-p})_+.
            q_part_n = -(mu0 * d1s_part_n + d1s_prev)
            f_part = q_part_n * c0_plus
            for p in range(1, n):
                d1s_p = comp.coefficient(p, 1)
                d1s_pm1 = comp.coefficient(p - 1, 1)
                q_p = -series.c_coeffs[p] - (mu0 * d1s_p + d1s_pm1) - series.sigma_coeffs[p]
                f_part = f_part + q_p * series.c_coeffs[n - p].translate(omega)
            sigma_n, c_n, _, _ = solve_sigma_c(
                base_state, base_config, A, B, f=f_part,
                factors=factors, terms=base_terms, oversample=oversample,
            )
            v_n, lam_n = A + sigma_n * B, G + sigma_n * D

        series.v_coeffs.append(v_n)
        series.sigma_coeffs.append(sigma_n)
        series.lambda_coeffs.append(lam_n)
        series.c_coeffs.append(c_n)
        comp.append_order(v_n)

        # order-n equation residuals (both lines), as a solve diagnostic
        lhs1 = (
            v_n.translate(omega) + v_n.translate(-omega)
            + (mu0 * d1s0 + (base.sigma - 2.0)) * v_n
            + sigma_n * base.v + lam_n + e_part
        )
        res = lhs1.sup_norm()
        if not equilibrium_only:
            q0 = 2.0 - base.c - base_terms.dW - base.sigma
            lhs2 = (
                q0 * c_n.translate(omega) - c0_plus * c_n
                - sigma_n * c0_plus - (base_terms.ddW * c0_plus) * v_n + f_part
            )
            res = max(res, lhs2.sup_norm())
        series.order_residuals.append(res)

        prev_norm = max(series.v_coeffs[n - 1].sup_norm(), 1e-300) if n > 1 else None
        if prev_norm is not None and v_n.sup_norm() / prev_norm > growth_bound:
            series.growth_flag = True
            log.warning(
                "series coefficient growth ratio %.2e at order %d exceeds %.1e",
                v_n.sup_norm() / prev_norm, n, growth_bound,
            )
    return series


def evaluate_series(
    series: PerturbativeSeries, mu: float, max_step: float | None = None
) -> SolverState:
    """Horner evaluation of the partial sums at the given parameter value.

    ``max_step`` optionally bounds ``|mu - mu0|`` (the caller's trust radius).
    """
    t = mu - series.mu0
    if max_step is not None and abs(t) > max_step:
        raise ValueError(f"|mu - mu0| = {abs(t):.3e} exceeds max_step = {max_step:.3e}")
    v = series.v_coeffs[series.order]
    c = series.c_coeffs[series.order]
    sigma = series.sigma_coeffs[series.order]
    lam = series.lambda_coeffs[series.order]
    for n in range(series.order - 1, -1, -1):
        v = v * t + series.v_coeffs[n]
        c = c * t + series.c_coeffs[n]
        sigma = sigma * t + series.sigma_coeffs[n]
        lam = lam * t + series.lambda_coeffs[n]
    return SolverState(v=v.recentered(), sigma=sigma, lam=lam, c=c)


@dataclass(frozen=True)
class TruncationFit:
    """Log-log slopes of the truncation residuals against ``mu - mu0``."""

    mu_values: tuple[float, ...]
    res_e: tuple[float, ...]
    res_f: tuple[float, ...]
    slope_e: float
    slope_f: float


def truncation_residual(series: PerturbativeSeries, mu_values) -> TruncationFit:
    """Evaluate the truncated series and fit the residual decay order."""
    mu_values = [float(m) for m in mu_values]
    res_e, res_f = [], []
    for mu in mu_values:
        state = evaluate_series(series, mu)
        cfg = series.config.with_potential(series.config.potential.scaled(mu))
        res_e.append(equilibrium_residual(state, cfg).sup_norm())
        res_f.append(factorization_residual(state, cfg).sup_norm())
    logmu = np.log([abs(m - series.mu0) for m in mu_values])

    def fit(res):
        # residuals at the roundoff floor (zero potential) make the fit moot
        if any(r == 0 for r in res):
            return float("nan")
        return float(np.polyfit(logmu, np.log(res), 1)[0])

    slope_e, slope_f = fit(res_e), fit(res_f)
    return TruncationFit(
        mu_values=tuple(mu_values), res_e=tuple(res_e), res_f=tuple(res_f),
        slope_e=slope_e, slope_f=slope_f,
    )


def format_series(series: PerturbativeSeries) -> str:
    """Series dump: per order the v and c coefficient blocks plus the scalars."""
    buf = io.StringIO()
    buf.write(
        f"# series mu0={series.mu0:.17e} order={series.order} "
        f"equilibrium_only={series.equilibrium_only}\n"
    )
    for n in range(series.order + 1):
        buf.write(f"# order={n} field=v\n")
        buf.write(series.v_coeffs[n].format_coefficients())
        buf.write(f"# order={n} field=c\n")
        buf.write(series.c_coeffs[n].format_coefficients())
        buf.write(
            f"sigma_{n}={series.sigma_coeffs[n]:.17e} "
            f"lambda_{n}={series.lambda_coeffs[n]:.17e}\n"
        )
    return buf.getvalue()


# -- symmetry transform over an eta family -----------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    iota: float
    etas: tuple[float, ...]
    residuals: tuple[float, ...]
    eta_tail: float
    sigma_shifted: tuple[float, ...]
    lambda_transformed: tuple[float, ...]

    @property
    def max_residual(self) -> float:
        return max(self.residuals)


def _eta_shift(values: np.ndarray, shift: float) -> np.ndarray:
    """Evaluate a periodic-in-eta sample stack at uniformly shifted nodes."""
    n_eta = values.shape[0]
    spec = np.fft.fft(values, axis=0) / n_eta
    m = np.fft.fftfreq(n_eta, d=1.0 / n_eta)
    phase = np.exp(2j * np.pi * m * shift)
    phase[n_eta // 2] = math.cos(math.pi * n_eta * shift)
    shape = (n_eta,) + (1,) * (values.ndim - 1)
    shifted = np.fft.ifft(spec * phase.reshape(shape), axis=0) * n_eta
    return shifted.real


def _eta_tail_fraction(values: np.ndarray) -> float:
    n_eta = values.shape[0]
    spec = np.fft.fft(values, axis=0) / n_eta
    m = np.abs(np.fft.fftfreq(n_eta, d=1.0 / n_eta))
    total = float(np.sum(np.abs(spec) ** 2))
    if total == 0.0:
        return 0.0
    tail = float(np.sum(np.abs(spec[m > n_eta / 3.0]) ** 2))
    return math.sqrt(tail / total)


def check_symmetry(
    etas, states, iota: float, config: ModelConfig, tail_tol: float = 1e-8
) -> SymmetryReport:
    """Apply the phase-shift symmetry to an eta-family and measure residuals.

    The family must solve the equilibrium equation on a uniform power-of-two
    eta grid.  The transformed family

        v~_eta(psi)   = v_{eta + iota beta_eta}(psi + iota beta_psi) + iota,
        sigma~(eta)   = sigma(eta + iota beta_eta),
        lambda~(eta)  = lambda(eta + iota beta_eta) - iota sigma(...),

    is built by Fourier interpolation in eta (the shift is uniform, hence a
    pure spectral phase) and exact translation in psi, then its equilibrium
    residual is evaluated at every grid eta.
    """
    etas = [float(e) for e in etas]
    n_eta = len(etas)
    if n_eta < 2 or (n_eta & (n_eta - 1)) != 0:
        raise ValueError("eta grid size must be a power of two >= 2")
    expected = [i / n_eta for i in range(n_eta)]
    if any(abs((e - x + 0.5) % 1.0 - 0.5) > 1e-12 for e, x in zip(etas, expected)):
        raise ValueError("etas must be the uniform grid i/n_eta")
    v_stack = np.stack([s.v.values for s in states])
    sigma_arr = np.array([s.sigma for s in states])
    lam_arr = np.array([s.lam for s in states])
    tail = max(
        _eta_tail_fraction(v_stack), _eta_tail_fraction(sigma_arr), _eta_tail_fraction(lam_arr)
    )
    if tail > tail_tol:
        raise InterpolationUnderResolved(
            f"eta-spectrum tail fraction {tail:.3e} exceeds {tail_tol:.0e}"
        )
    shift = iota * config.beta_eta
    v_shift = _eta_shift(v_stack, shift)
    sigma_shift = _eta_shift(sigma_arr, shift)
    lam_shift = _eta_shift(lam_arr, shift)
    dim, n = states[0].v.dim, states[0].v.grid_size
    psi_shift = iota * config.beta_psi
    residuals = []
    lam_transformed = []
    for i, eta in enumerate(etas):
        v_t = SpectralField.from_grid(v_shift[i]).translate(psi_shift) + iota
        sigma_t = float(sigma_shift[i])
        lam_t = float(lam_shift[i]) - iota * sigma_t
        lam_transformed.append(lam_t)
        state_t = SolverState(
            v=v_t, sigma=sigma_t, lam=lam_t, c=SpectralField.constant(1.0, dim, n)
        )
        res = equilibrium_residual(state_t, config.with_eta(eta))
        residuals.append(res.sup_norm())
    return SymmetryReport(
        iota=iota, etas=tuple(etas), residuals=tuple(residuals), eta_tail=tail,
        sigma_shifted=tuple(float(s) for s in sigma_shift),
        lambda_transformed=tuple(lam_transformed),
    )
