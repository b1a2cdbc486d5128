"""Factorized quasi-Newton iteration for the coupled equilibrium and
factorization equations.

Each step linearizes both equations around the current iterate, replaces the
linearized equilibrium operator by the product of two first-order factors

    A_plus = a T_Omega - 1   with  a = (c_+)^{-1},
    A_minus = c - T_{-Omega},

and solves three twisted cohomology problems: the chained system
``A_plus A_minus X + g = rhs`` for (A, G) and (B, D), then the linearized
factorization equation for (sigma_hat, c_hat).  The corrections combine as
``v_hat = A + sigma_hat B`` and ``lambda_hat = G + sigma_hat D``.

The product of the factors differs from the true linearization by the term
``f v_hat (c_+)^{-1}`` (quadratically small); its size is recorded in every
step report.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .cohomology import Frequency
from .errors import (
    MaxIterations,
    NoProgress,
    NondegeneracyFailure,
    TransversalityLoss,
    UniquenessViolation,
)
from .fields import SpectralField, multiply
from .model import (
    ModelConfig,
    NondegeneracyThresholds,
    OVERSAMPLE,
    PotentialTerms,
    SolverState,
    check_nondegeneracy,
    equilibrium_residual,
    eval_potential_terms,
    factorization_residual,
)
from .twisted import TwistedOperator

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 20
# Consecutive steps with residual reduction below 10% trip NoProgress.
STALL_LIMIT = 2

# Average-coefficient case ids, keyed by (plus factor equal?, minus factor
# equal?).  These labels appear in step reports and the history CSV.
_CASE_LABELS = {
    (False, False): "5a",  # both factors invertible outright
    (True, False): "5b",   # plus factor needs a solvability choice
    (False, True): "5c",   # minus factor needs a solvability choice
    (True, True): "5d",    # both do (the classical small-divisor case)
}


@dataclass(frozen=True)
class StepReport:
    """Diagnostics of one Newton step."""

    iteration: int
    res_e_before: float
    res_f_before: float
    res_e_after: float
    res_f_after: float
    branch: str            # average-coefficient case 5a..5d of the chain solves
    fac_branch: str        # twisted branch of the (sigma_hat, c_hat) solve
    norm_v_hat: float
    sigma_hat: float
    lambda_hat: float
    norm_c_hat: float
    transversality: float  # mean of the counterterm weight -c_+ - ddW c_+ B
    tail_v: float
    tail_c: float
    dropped_term: float    # sup of f * v_hat * (c_+)^{-1}
    sigma_before: float
    lam_before: float
    norm_v_before: float

    @property
    def res_before(self) -> float:
        return max(self.res_e_before, self.res_f_before)

    @property
    def res_after(self) -> float:
        return max(self.res_e_after, self.res_f_after)


@dataclass(frozen=True)
class NewtonUpdate:
    """Affine pieces and assembled corrections of one linearized solve."""

    A: SpectralField
    B: SpectralField
    G: float
    D: float
    sigma_hat: float
    lambda_hat: float
    c_hat: SpectralField
    condition: float | None = None

    @property
    def v_hat(self) -> SpectralField:
        return self.A + self.sigma_hat * self.B


@dataclass
class Factors:
    """Per-state factorization data shared by the three linear solves."""

    a: SpectralField          # (c_+)^{-1}
    c_plus: SpectralField
    op_plus: TwistedOperator  # a T_Omega - 1
    op_minus: TwistedOperator # c_+ T_Omega - 1 acting on translated data
    case: str


@dataclass
class StateCache:
    terms: PotentialTerms
    e: SpectralField
    f: SpectralField
    factors: Factors | None = None


def build_factors(state: SolverState, config: ModelConfig) -> Factors:
    """Set ``a = (c_+)^{-1}`` and factor both first-order operators.

    ``A_minus u = c u - u_-`` is rewritten by the substitution
    ``psi -> psi + Omega`` into the twisted template with coefficients
    ``(c_+, 1)`` and right-hand sides translated by Omega, so one solver
    serves both factors.
    """
    freq = config.freq
    c_plus = state.c.translate(freq.omega_array)
    a = c_plus.reciprocal()
    op_plus = TwistedOperator(a, 1.0, freq)
    op_minus = TwistedOperator(c_plus, 1.0, freq)
    case = _CASE_LABELS[(op_plus.equal, op_minus.equal)]
    return Factors(a=a, c_plus=c_plus, op_plus=op_plus, op_minus=op_minus, case=case)


def _prepare(state: SolverState, config: ModelConfig, oversample: int) -> StateCache:
    if isinstance(state.cache, StateCache):
        return state.cache
    terms = eval_potential_terms(state.v, config, oversample)
    cache = StateCache(
        terms=terms,
        e=equilibrium_residual(state, config, terms),
        f=factorization_residual(state, config, terms),
    )
    state.cache = cache
    return cache


def _chain_pipeline(factors: Factors, freq: Frequency, rhs: SpectralField, u: np.ndarray):
    """Evaluate the chained solve at scalar parameters ``u = (g, [t1], [t2])``."""
    op_p, op_m = factors.op_plus, factors.op_minus
    pos = 1
    phi1 = rhs - float(u[0])
    y, obs1 = op_p.solve_raw(phi1)
    constraints = []
    if op_p.equal:
        y = y + float(u[pos]) * op_p.free_direction
        constraints.append(obs1)
        pos += 1
    rhs2 = y.translate(freq.omega_array)
    x, obs2 = op_m.solve_raw(rhs2)
    if op_m.equal:
        x = x + float(u[pos]) * op_m.free_direction
        constraints.append(obs2)
        pos += 1
    constraints.append(x.average())
    return x, np.asarray(constraints, dtype=float)


def chain_solve(factors: Factors, freq: Frequency, rhs: SpectralField):
    """Solve ``A_plus A_minus X + g = rhs`` with ``<X> = 0``.

    The scalar unknowns are ``g`` plus one free twisted constant per
    equal-average factor; the matching constraints are the solvability
    obstructions plus the normalization.  All of them are affine in the
    scalars, so the pipeline is sampled at 0 and at unit vectors and the
    resulting small linear system is solved directly.  The four
    average-coefficient cases (see ``_CASE_LABELS``) fall out of this one
    code path: in the equal cases the obstruction rows pin the scalars the
    direct averaging formulas would (``g = -<rhs gamma>/<gamma>`` and its
    chain analogues), in the unequal cases the normalization row does.
    """
    n_unknowns = 1 + int(factors.op_plus.equal) + int(factors.op_minus.equal)
    base_x, base_c = _chain_pipeline(factors, freq, rhs, np.zeros(n_unknowns))
    columns = []
    basis_x = []
    for i in range(n_unknowns):
        unit = np.zeros(n_unknowns)
        unit[i] = 1.0
        xi, ci = _chain_pipeline(factors, freq, rhs, unit)
        columns.append(ci - base_c)
        basis_x.append(xi)
    matrix = np.column_stack(columns)
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > 1e12:
        raise TransversalityLoss(
            f"chain constraint system is degenerate (condition {cond:.3e})"
        )
    u = np.linalg.solve(matrix, -base_c)
    x = base_x
    for i in range(n_unknowns):
        if u[i] != 0.0:
            x = x + float(u[i]) * (basis_x[i] - base_x)
    return x.recentered(), float(u[0])


def solve_AG(state: SolverState, config: ModelConfig, e: SpectralField | None = None,
             factors: Factors | None = None, oversample: int = OVERSAMPLE):
    """Solve ``A_plus A_minus A + G = -e`` with ``<A> = 0``."""
    cache = _prepare(state, config, oversample)
    if e is None:
        e = cache.e
    if factors is None:
        factors = cache.factors or build_factors(state, config)
        cache.factors = factors
    return chain_solve(factors, config.freq, -e)


def solve_BD(state: SolverState, config: ModelConfig,
             factors: Factors | None = None, oversample: int = OVERSAMPLE):
    """Solve ``A_plus A_minus B + D = -v`` with ``<B> = 0``."""
    cache = _prepare(state, config, oversample)
    if factors is None:
        factors = cache.factors or build_factors(state, config)
        cache.factors = factors
    return chain_solve(factors, config.freq, -state.v)


def solve_sigma_c(state: SolverState, config: ModelConfig, A: SpectralField,
                  B: SpectralField, f: SpectralField | None = None,
                  factors: Factors | None = None, terms: PotentialTerms | None = None,
                  oversample: int = OVERSAMPLE):
    """Solve the linearized factorization equation for ``(sigma_hat, c_hat)``.

    In twisted-template form the equation reads

        V0 c_hat_+ - c_+ c_hat = sigma_hat (c_+ + ddW c_+ B) + (ddW c_+ A - f)

    with ``V0 = -c + 2 - dW - sigma``, solved with normalization
    ``<c_hat> = 0``; the counterterm weight is the negative of the
    transversality integrand.

    Returns ``(sigma_hat, c_hat, branch, transversality)``.
    """
    cache = _prepare(state, config, oversample)
    terms = terms or cache.terms
    if f is None:
        f = cache.f
    if factors is None:
        factors = cache.factors or build_factors(state, config)
        cache.factors = factors
    v0_coeff = 2.0 - state.c - terms.dW - state.sigma
    op = TwistedOperator(v0_coeff, factors.c_plus, config.freq)
    ddc = multiply(terms.ddW, factors.c_plus)
    weight = factors.c_plus + multiply(ddc, B)
    phi = multiply(ddc, A) - f
    sol = op.solve(phi, weight)
    return sol.lam, sol.v, sol.branch, -weight.average()


def newton_step(state: SolverState, config: ModelConfig,
                thresholds: NondegeneracyThresholds | None = None,
                oversample: int = OVERSAMPLE, iteration: int = 0):
    """One quasi-Newton step; returns ``(new_state, StepReport)``.

    Any raised error leaves the input state unchanged (states are immutable
    values).  The updated state has its hull function re-centered to zero
    mean and carries a fresh residual cache.
    """
    cache = _prepare(state, config, oversample)
    report = check_nondegeneracy(state, config, thresholds, terms=cache.terms)
    if not report.passed:
        failed = [c.name for c in report.checks if not c.ok]
        raise NondegeneracyFailure(f"nondegeneracy checks failed: {', '.join(failed)}")
    factors = cache.factors or build_factors(state, config)
    cache.factors = factors
    if factors.case in ("5b", "5c"):
        log.warning(
            "average-coefficient case %s reached from a KAM iterate; "
            "the b = 1 normalization should only produce 5a or 5d", factors.case
        )
    e, f = cache.e, cache.f
    A, G = chain_solve(factors, config.freq, -e)
    B, D = chain_solve(factors, config.freq, -state.v)
    sigma_hat, c_hat, fac_branch, transversality = solve_sigma_c(
        state, config, A, B, f=f, factors=factors, terms=cache.terms, oversample=oversample
    )
    v_hat = A + sigma_hat * B
    lambda_hat = G + sigma_hat * D
    new_state = SolverState(
        v=(state.v + v_hat).recentered(),
        sigma=state.sigma + sigma_hat,
        lam=state.lam + lambda_hat,
        c=state.c + c_hat,
    )
    new_cache = _prepare(new_state, config, oversample)
    dropped = multiply(multiply(f, v_hat), factors.a).sup_norm()
    step = StepReport(
        iteration=iteration,
        res_e_before=e.sup_norm(),
        res_f_before=f.sup_norm(),
        res_e_after=new_cache.e.sup_norm(),
        res_f_after=new_cache.f.sup_norm(),
        branch=factors.case,
        fac_branch=fac_branch,
        norm_v_hat=v_hat.sup_norm(),
        sigma_hat=sigma_hat,
        lambda_hat=lambda_hat,
        norm_c_hat=c_hat.sup_norm(),
        transversality=transversality,
        tail_v=new_state.v.tail_fraction(),
        tail_c=new_state.c.tail_fraction(),
        dropped_term=dropped,
        sigma_before=state.sigma,
        lam_before=state.lam,
        norm_v_before=state.v.sup_norm(),
    )
    return new_state, step


def residuals(state: SolverState, config: ModelConfig, oversample: int = OVERSAMPLE):
    """Sup norms ``(res_e, res_f)`` of the two equation residuals."""
    cache = _prepare(state, config, oversample)
    return cache.e.sup_norm(), cache.f.sup_norm()


def run_kam(config: ModelConfig, guess: SolverState, tol: float = DEFAULT_TOL,
            max_iter: int = DEFAULT_MAX_ITER,
            thresholds: NondegeneracyThresholds | None = None,
            oversample: int = OVERSAMPLE):
    """Iterate Newton steps until ``max(res_e, res_f) < tol``.

    Returns ``(state, history)``.  Raises :class:`MaxIterations` or
    :class:`NoProgress` with the partial state and history attached.
    """
    state = guess.recentered()
    history: list[StepReport] = []
    stall = 0
    for iteration in range(max_iter):
        res_e, res_f = residuals(state, config, oversample)
        if max(res_e, res_f) < tol:
            return state, history
        state, step = newton_step(
            state, config, thresholds, oversample, iteration=iteration
        )
        history.append(step)
        if step.res_after >= 0.9 * step.res_before:
            stall += 1
            if stall >= STALL_LIMIT:
                raise NoProgress(
                    f"residual stalled at {step.res_after:.3e} after "
                    f"{iteration + 1} iterations", state=state, history=history,
                )
        else:
            stall = 0
    res_e, res_f = residuals(state, config, oversample)
    if max(res_e, res_f) < tol:
        return state, history
    raise MaxIterations(
        f"residual {max(res_e, res_f):.3e} above tolerance {tol:.1e} after "
        f"{max_iter} iterations", state=state, history=history,
    )


def residual_sequence(history, final_res: float | None = None, which: str = "max"):
    """Per-iterate residuals including the terminal one.

    ``which`` selects the equilibrium error (``"e"``), the factorization
    error (``"f"``), or their max (default).
    """
    def pick(before: bool, step: StepReport) -> float:
        if which == "e":
            return step.res_e_before if before else step.res_e_after
        if which == "f":
            return step.res_f_before if before else step.res_f_after
        return step.res_before if before else step.res_after

    eps = [pick(True, step) for step in history]
    if history:
        eps.append(pick(False, history[-1]) if final_res is None else final_res)
    elif final_res is not None:
        eps.append(final_res)
    return eps


def quadratic_slope(eps, window=(1e-10, 1e-2)):
    """Least-squares slope of ``log eps_{n+1}`` against ``log eps_n``.

    Only pairs whose source residual lies inside the window enter the fit.
    """
    pairs = [
        (math.log(eps[i]), math.log(eps[i + 1]))
        for i in range(len(eps) - 1)
        if window[0] <= eps[i] <= window[1] and eps[i + 1] > 0
    ]
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 residual pairs inside {window}, got {len(pairs)}")
    xs, ys = zip(*pairs)
    return float(np.polyfit(xs, ys, 1)[0])


def write_history_csv(fh, history, final_state: SolverState | None = None,
                      final_res: tuple[float, float] | None = None) -> None:
    """Write the residual-history table.

    Schema: ``iter,res_e,res_f,sigma,lambda,norm_v,branch,tail_frac``; one row
    per iteration (state before the step, branch and tails of the step) plus a
    terminal row for the final state.
    """
    fh.write("iter,res_e,res_f,sigma,lambda,norm_v,branch,tail_frac\n")

    def fmt(x):
        return f"{x:.17e}"

    for step in history:
        row = [
            str(step.iteration), fmt(step.res_e_before), fmt(step.res_f_before),
            fmt(step.sigma_before), fmt(step.lam_before), fmt(step.norm_v_before),
            step.branch, fmt(max(step.tail_v, step.tail_c)),
        ]
        fh.write(",".join(row) + "\n")
    if final_state is not None and final_res is not None:
        row = [
            str(len(history)), fmt(final_res[0]), fmt(final_res[1]),
            fmt(final_state.sigma), fmt(final_state.lam), fmt(final_state.v.sup_norm()),
            "", fmt(max(final_state.v.tail_fraction(), final_state.c.tail_fraction())),
        ]
        fh.write(",".join(row) + "\n")


def history_csv_text(history, final_state=None, final_res=None) -> str:
    buf = io.StringIO()
    write_history_csv(buf, history, final_state, final_res)
    return buf.getvalue()


@dataclass(frozen=True)
class UniquenessReport:
    scale: float
    distances: tuple[float, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(d <= self.tolerance for d in self.distances)


def _random_band_limited(dim, grid_size, rng, k_max=8, zero_mean=True):
    coeffs = np.zeros((grid_size,) * dim, dtype=complex)
    span = range(-k_max, k_max + 1)
    if dim == 1:
        lattice = [(k,) for k in span]
    else:
        lattice = [(k1, k2) for k1 in span for k2 in span]
    for k in lattice:
        if zero_mean and all(ki == 0 for ki in k):
            continue
        coeffs[tuple(ki % grid_size for ki in k)] = rng.normal() + 1j * rng.normal()
    field = SpectralField.from_coefficients(coeffs)
    scale = field.sup_norm()
    return field * (1.0 / scale) if scale > 0 else field


def uniqueness_probe(config: ModelConfig, solution: SolverState, scale: float,
                     n_directions: int = 10, seed: int = 0, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, distance_tol: float = 1e-9,
                     oversample: int = OVERSAMPLE) -> UniquenessReport:
    """Re-run the iteration from randomly perturbed starts and compare limits.

    All perturbation directions are re-normalized to zero mean.  This matters
    for the factorization coefficient: the coupled equations carry a
    one-parameter solution family along the mean of c (equivalently along the
    counterterm sigma), which every linear solve quotients out through the
    ``<c_hat> = 0`` normalization.  Newton steps therefore preserve ``<c>``
    exactly, and uniqueness is asserted on the gauge slice ``<v> = 0``,
    ``<c> = <c_reference>``.  Raises :class:`UniquenessViolation` if any
    restart lands farther than ``distance_tol`` from the reference solution.
    """
    rng = np.random.default_rng(seed)
    reference = solution.recentered()
    distances = []
    for _ in range(n_directions):
        dv = _random_band_limited(solution.dim, solution.grid_size, rng, zero_mean=True)
        dc = _random_band_limited(solution.dim, solution.grid_size, rng, zero_mean=True)
        guess = SolverState(
            v=solution.v + scale * dv,
            sigma=solution.sigma,
            lam=solution.lam,
            c=solution.c + scale * dc,
        )
        re_state, _ = run_kam(config, guess, tol, max_iter, oversample=oversample)
        dist = re_state.distance(reference)
        distances.append(dist)
        if dist > distance_tol:
            raise UniquenessViolation(
                f"perturbed restart converged {dist:.3e} away from the reference "
                f"(tolerance {distance_tol:.1e})",
                reference=reference, offender=re_state, distance=dist,
            )
    return UniquenessReport(scale=scale, distances=tuple(distances), tolerance=distance_tol)
