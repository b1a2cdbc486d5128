"""Dense linear-algebra oracle for the fast factorized solvers.

The linearized equations are assembled as explicit matrices over truncated
Fourier modes ``|k|_inf <= K`` and solved directly, independently of the
log-factorization machinery.  The coupled system targets the true Newton
linearization (not the factorized surrogate), so agreement with the fast path
is expected only up to the documented dropped term ``f v_hat (c_+)^{-1}``.

Unknowns are packed real: the k = 0 mode plus (Re, Im) pairs over a half
lattice, which keeps the matrices real and enforces Hermitian symmetry
structurally.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cohomology import Frequency
from .errors import SingularSystem
from .fields import SpectralField, multiply
from .model import ModelConfig, SolverState
from .solver import (
    NewtonUpdate,
    _prepare,
    build_factors,
    chain_solve,
    solve_sigma_c,
)

MAX_CUTOFF = 64
_COND_LIMIT = 1e13


def _mode_list(dim: int, cutoff: int) -> list[tuple[int, ...]]:
    if cutoff > MAX_CUTOFF:
        raise ValueError(f"dense cutoff {cutoff} exceeds the supported {MAX_CUTOFF}")
    span = range(-cutoff, cutoff + 1)
    if dim == 1:
        return [(k,) for k in span]
    return [(k1, k2) for k1 in span for k2 in span]


def _positive_half(k: tuple[int, ...]) -> bool:
    for ki in k:
        if ki > 0:
            return True
        if ki < 0:
            return False
    return False


def _coeff_lookup(field: SpectralField, diff: tuple[int, ...]) -> complex:
    n = field.grid_size
    if any(abs(d) > n // 2 for d in diff):
        return 0.0
    return complex(field.coefficients[tuple(d % n for d in diff)])


def _conv_matrix(field: SpectralField, modes) -> np.ndarray:
    out = np.empty((len(modes), len(modes)), dtype=complex)
    for i, ki in enumerate(modes):
        for j, kj in enumerate(modes):
            out[i, j] = _coeff_lookup(field, tuple(a - b for a, b in zip(ki, kj)))
    return out


def _translation_diag(modes, omega: np.ndarray) -> np.ndarray:
    return np.array([np.exp(2j * np.pi * np.dot(k, omega)) for k in modes])


def _field_vector(field: SpectralField, modes) -> np.ndarray:
    return np.array([_coeff_lookup(field, k) for k in modes])


def _real_basis(modes):
    """Complex-from-real map P and the complex rows kept after realification.

    The k = 0 mode contributes one real column (always the first); each mode
    in the positive half-lattice contributes a (Re, Im) column pair, with the
    conjugate mode's coefficient substituted structurally.
    """
    index = {k: i for i, k in enumerate(modes)}
    columns = []
    kept_rows = []  # (mode_index, 're'|'im')
    for k in modes:
        if all(ki == 0 for ki in k):
            col = np.zeros(len(modes), dtype=complex)
            col[index[k]] = 1.0
            columns.append(col)
            kept_rows.append((index[k], "re"))
        elif _positive_half(k):
            neg = tuple(-ki for ki in k)
            col_re = np.zeros(len(modes), dtype=complex)
            col_re[index[k]] = 1.0
            col_re[index[neg]] = 1.0
            col_im = np.zeros(len(modes), dtype=complex)
            col_im[index[k]] = 1j
            col_im[index[neg]] = -1j
            columns.extend([col_re, col_im])
            kept_rows.append((index[k], "re"))
            kept_rows.append((index[k], "im"))
    return np.column_stack(columns), kept_rows


def _realify(block_rows: np.ndarray, rhs: np.ndarray, kept_rows) -> tuple[np.ndarray, np.ndarray]:
    """Split the kept complex rows of ``block_rows x = rhs`` into real rows."""
    rows, vec = [], []
    for idx, part in kept_rows:
        if part == "re":
            rows.append(block_rows[idx].real)
            vec.append(rhs[idx].real)
        else:
            rows.append(block_rows[idx].imag)
            vec.append(rhs[idx].imag)
    return np.array(rows), np.array(vec)


def _spectrum_from_vector(vec: np.ndarray, modes, dim: int, grid_size: int) -> SpectralField:
    coeffs = np.zeros((grid_size,) * dim, dtype=complex)
    for k, value in zip(modes, vec):
        coeffs[tuple(ki % grid_size for ki in k)] = value
    return SpectralField.from_coefficients(coeffs)


@dataclass(frozen=True)
class DenseLinearSystem:
    """Assembled dense system: real matrix, right-hand side, conditioning."""

    cutoff: int
    matrix: np.ndarray
    rhs: np.ndarray
    condition: float

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def _solve_real(matrix: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    cond = float(np.linalg.cond(matrix))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystem(f"dense system condition number {cond:.3e}")
    try:
        x = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return x, cond


def dense_twisted_solve(a, b, phi: SpectralField, w, freq: Frequency, cutoff: int):
    """Mode-truncated direct solve of ``a v_+ - b v = lambda w + phi``, ``<v> = 0``.

    Returns ``(lam, v, info)``.
    """
    dim, n = phi.dim, phi.grid_size
    if not isinstance(a, SpectralField):
        a = SpectralField.constant(float(a), dim, n)
    if not isinstance(b, SpectralField):
        b = SpectralField.constant(float(b), dim, n)
    if w is None:
        w = SpectralField.constant(1.0, dim, n)
    elif not isinstance(w, SpectralField):
        w = SpectralField.constant(float(w), dim, n)
    modes = _mode_list(dim, cutoff)
    p, kept = _real_basis(modes)
    trans = _translation_diag(modes, freq.omega_array)
    op = _conv_matrix(a, modes) @ np.diag(trans) - _conv_matrix(b, modes)
    w_col = _field_vector(w, modes)
    # columns: v dofs then lambda
    complex_cols = np.hstack([op @ p, -w_col[:, None]])
    rhs = _field_vector(phi, modes)
    a_real, b_real = _realify(complex_cols, rhs, kept)
    zero_row = np.zeros(a_real.shape[1])
    zero_row[0] = 1.0  # <v> = 0: the k = 0 dof is the first column by construction
    matrix = np.vstack([a_real, zero_row])
    vec = np.concatenate([b_real, [0.0]])
    x, cond = _solve_real(matrix, vec)
    v = _spectrum_from_vector(p @ x[:-1], modes, dim, n)
    info = DenseLinearSystem(cutoff=cutoff, matrix=matrix, rhs=vec, condition=cond)
    return float(x[-1]), v, info


def _linearized_blocks(state: SolverState, config: ModelConfig, cutoff: int):
    """Shared assembly pieces of the linearized equilibrium/factorization rows."""
    cache = _prepare(state, config, 2)
    terms = cache.terms
    dim, n = state.dim, state.grid_size
    modes = _mode_list(dim, cutoff)
    p, kept = _real_basis(modes)
    omega = config.freq.omega_array
    trans = _translation_diag(modes, omega)
    # equilibrium linearization: T + T^{-1} - 2 + (dW + sigma) as convolution
    shift_diag = trans + np.conj(trans) - 2.0
    mult = _conv_matrix(terms.dW + state.sigma, modes)
    l_op = np.diag(shift_diag) + mult
    c_plus = state.c.translate(omega)
    v0_coeff = 2.0 - state.c - terms.dW - state.sigma
    fac_c = -_conv_matrix(c_plus, modes) + _conv_matrix(v0_coeff, modes) @ np.diag(trans)
    ddc = multiply(terms.ddW, c_plus)
    fac_v = -_conv_matrix(ddc, modes)
    return cache, modes, p, kept, l_op, fac_c, fac_v, c_plus


def dense_chain_solve(state: SolverState, config: ModelConfig, cutoff: int,
                      rhs: SpectralField):
    """Direct solve of ``L X + g = rhs`` with ``<X> = 0`` (true linearization L).

    Returns ``(X, g, info)``.
    """
    _, modes, p, kept, l_op, _, _, _ = _linearized_blocks(state, config, cutoff)
    g_col = np.zeros(len(modes), dtype=complex)
    g_col[[all(ki == 0 for ki in k) for k in modes].index(True)] = 1.0
    complex_cols = np.hstack([l_op @ p, g_col[:, None]])
    rhs_vec = _field_vector(rhs, modes)
    a_real, b_real = _realify(complex_cols, rhs_vec, kept)
    zero_row = np.zeros(a_real.shape[1])
    zero_row[0] = 1.0
    matrix = np.vstack([a_real, zero_row])
    vec = np.concatenate([b_real, [0.0]])
    x, cond = _solve_real(matrix, vec)
    field = _spectrum_from_vector(p @ x[:-1], modes, state.dim, state.grid_size)
    info = DenseLinearSystem(cutoff=cutoff, matrix=matrix, rhs=vec, condition=cond)
    return field, float(x[-1]), info


def dense_coupled_solve(state: SolverState, config: ModelConfig, cutoff: int):
    """Direct solve of the full coupled linearization for ``(v, sigma, lambda, c)``.

    Rows are the linearized equilibrium equation and the linearized
    factorization equation per mode plus the two normalization rows
    ``<v_hat> = 0`` and ``<c_hat> = 0``.  Returns
    ``(v_hat, sigma_hat, lambda_hat, c_hat, info)``.
    """
    cache, modes, p, kept, l_op, fac_c, fac_v, c_plus = _linearized_blocks(
        state, config, cutoff
    )
    n_modes = len(modes)
    zero_idx = [all(ki == 0 for ki in k) for k in modes].index(True)
    v0_col = _field_vector(state.v, modes)
    lam_col = np.zeros(n_modes, dtype=complex)
    lam_col[zero_idx] = 1.0
    cplus_col = _field_vector(c_plus, modes)
    ndof = p.shape[1]
    # columns: [v dofs | c dofs | sigma | lambda]
    eq_rows = np.hstack(
        [l_op @ p, np.zeros((n_modes, ndof)), v0_col[:, None], lam_col[:, None]]
    )
    fac_rows = np.hstack(
        [fac_v @ p, fac_c @ p, -cplus_col[:, None], np.zeros((n_modes, 1))]
    )
    rhs_eq = _field_vector(-cache.e, modes)
    rhs_fac = _field_vector(-cache.f, modes)
    a_eq, b_eq = _realify(eq_rows, rhs_eq, kept)
    a_fac, b_fac = _realify(fac_rows, rhs_fac, kept)
    norm_v = np.zeros(2 * ndof + 2)
    norm_v[0] = 1.0
    norm_c = np.zeros(2 * ndof + 2)
    norm_c[ndof] = 1.0
    matrix = np.vstack([a_eq, a_fac, norm_v, norm_c])
    vec = np.concatenate([b_eq, b_fac, [0.0, 0.0]])
    x, cond = _solve_real(matrix, vec)
    v_hat = _spectrum_from_vector(p @ x[:ndof], modes, state.dim, state.grid_size)
    c_hat = _spectrum_from_vector(p @ x[ndof:2 * ndof], modes, state.dim, state.grid_size)
    info = DenseLinearSystem(cutoff=cutoff, matrix=matrix, rhs=vec, condition=cond)
    return v_hat, float(x[-2]), float(x[-1]), c_hat, info


def dense_linearized_solve(state: SolverState, config: ModelConfig, cutoff: int) -> NewtonUpdate:
    """Full oracle update: chain solves for (A, G), (B, D) plus the coupled solve."""
    cache = _prepare(state, config, 2)
    a_field, g_val, _ = dense_chain_solve(state, config, cutoff, -cache.e)
    b_field, d_val, _ = dense_chain_solve(state, config, cutoff, -state.v)
    _, sigma_hat, lambda_hat, c_hat, info = dense_coupled_solve(state, config, cutoff)
    return NewtonUpdate(
        A=a_field, B=b_field, G=g_val, D=d_val,
        sigma_hat=sigma_hat, lambda_hat=lambda_hat, c_hat=c_hat,
        condition=info.condition,
    )


@dataclass(frozen=True)
class OracleComparison:
    """Componentwise fast-vs-dense differences and timings.

    ``diffs`` maps component names to ``(abs_diff, rel_diff, scale)`` where
    ``scale`` is the fast component's own sup norm (floored at 1e-8).
    """

    cutoff: int
    condition: float
    diffs: dict
    time_fast: float
    time_dense: float

    @property
    def timing_ratio(self) -> float:
        return self.time_dense / self.time_fast if self.time_fast > 0 else float("inf")

    def max_relative(self) -> float:
        return max(rel for _, rel, _ in self.diffs.values())


# Components sharing one linear solve, hence one dropped-term allowance scale.
_ALLOWANCE_GROUPS = {
    "A": ("A", "G"), "G": ("A", "G"),
    "B": ("B", "D"), "D": ("B", "D"),
    "sigma_hat": ("sigma_hat", "c_hat"), "c_hat": ("sigma_hat", "c_hat"),
    "v_hat": ("v_hat", "lambda_hat"), "lambda_hat": ("v_hat", "lambda_hat"),
}


def allowance_check(comp: OracleComparison, eps: float, floor: float = 1e-8) -> dict:
    """Check every component against ``max(floor, 10 * eps * |update|)``.

    ``eps`` is the state's residual size; the allowance reflects the term
    ``f v_hat (c_+)^{-1}`` the fast path drops.  Returns component ->
    ``(abs_diff, allowance, ok)``.
    """
    out = {}
    for name, (absdiff, _, _) in comp.diffs.items():
        group_scale = max(comp.diffs[g][2] for g in _ALLOWANCE_GROUPS[name])
        allowance = max(floor, 10.0 * eps * group_scale)
        out[name] = (absdiff, allowance, absdiff <= allowance)
    return out


def _diff_entry(fast, dense, floor: float) -> tuple[float, float, float]:
    if isinstance(fast, SpectralField):
        absdiff = (fast - dense).sup_norm()
        scale = max(fast.sup_norm(), floor)
    else:
        absdiff = abs(fast - dense)
        scale = max(abs(fast), floor)
    return absdiff, absdiff / scale, scale


def compare_solvers(state: SolverState, config: ModelConfig, cutoff: int) -> OracleComparison:
    """Run both paths on the same state and report componentwise differences.

    Relative differences are measured against each component's own size with
    an absolute floor of 1e-8 (quantities that vanish compare absolutely).
    """
    t0 = time.perf_counter()
    factors = build_factors(state, config)
    cache = _prepare(state, config, 2)
    a_fast, g_fast = chain_solve(factors, config.freq, -cache.e)
    b_fast, d_fast = chain_solve(factors, config.freq, -state.v)
    sigma_fast, c_fast, _, _ = solve_sigma_c(
        state, config, a_fast, b_fast, f=cache.f, factors=factors, terms=cache.terms
    )
    lambda_fast = g_fast + sigma_fast * d_fast
    time_fast = time.perf_counter() - t0
    t1 = time.perf_counter()
    dense = dense_linearized_solve(state, config, cutoff)
    time_dense = time.perf_counter() - t1
    floor = 1e-8
    diffs = {
        "A": _diff_entry(a_fast, dense.A, floor),
        "G": _diff_entry(g_fast, dense.G, floor),
        "B": _diff_entry(b_fast, dense.B, floor),
        "D": _diff_entry(d_fast, dense.D, floor),
        "sigma_hat": _diff_entry(sigma_fast, dense.sigma_hat, floor),
        "lambda_hat": _diff_entry(lambda_fast, dense.lambda_hat, floor),
        "c_hat": _diff_entry(c_fast, dense.c_hat, floor),
        "v_hat": _diff_entry(a_fast + sigma_fast * b_fast, dense.v_hat, floor),
    }
    return OracleComparison(
        cutoff=cutoff, condition=dense.condition, diffs=diffs,
        time_fast=time_fast, time_dense=time_dense,
    )
