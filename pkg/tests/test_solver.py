import io
import math

import pytest

from qpfk.errors import MaxIterations, NoProgress
from qpfk.fields import SpectralField, multiply
from qpfk.model import ModelConfig, Potential, SolverState
from qpfk.solver import (
    build_factors,
    chain_solve,
    newton_step,
    quadratic_slope,
    residual_sequence,
    residuals,
    run_kam,
    solve_AG,
    solve_BD,
    solve_sigma_c,
    uniqueness_probe,
    write_history_csv,
)

from conftest import random_band_limited


def zero_config(golden_freq):
    return ModelConfig(
        freq=golden_freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.zero(2)
    )


def apply_factored(factors, freq, x):
    """Evaluate A_plus A_minus x with the factored operators."""
    y = multiply(factors.c_plus.translate(-freq.omega_array), x) - x.translate(-freq.omega_array)
    return multiply(factors.a, y.translate(freq.omega_array)) - y


# -- factor construction ----------------------------------------------------------

def test_trivial_factors(golden_freq):
    state = SolverState.trivial(1, 64)
    factors = build_factors(state, zero_config(golden_freq))
    assert factors.case == "5d"
    assert (factors.a - 1.0).sup_norm() < 1e-14
    assert abs(factors.op_plus.a_bar - 1.0) < 1e-14
    assert abs(factors.op_minus.a_bar - 1.0) < 1e-14


def test_constant_c_factors(golden_freq):
    state = SolverState.trivial(1, 64)
    state.c = SpectralField.constant(math.exp(0.05), 1, 64)
    factors = build_factors(state, zero_config(golden_freq))
    assert factors.case == "5a"
    assert abs(factors.op_plus.a_bar - math.exp(-0.05)) < 1e-13
    assert abs(factors.op_minus.a_bar - math.exp(0.05)) < 1e-13


def test_reciprocal_identity(golden_freq, rng):
    state = SolverState.trivial(1, 128)
    osc = random_band_limited(rng, 128, k_max=4, zero_mean=True)
    state.c = (osc * (0.05 / osc.sup_norm())).exp()
    factors = build_factors(state, zero_config(golden_freq))
    prod = multiply(factors.a, state.c.translate(golden_freq.omega_array))
    assert (prod - 1.0).sup_norm() < 1e-13


def test_average_coefficients_reciprocal(golden_freq, rng):
    # with the b = 1 normalization, abar_plus * abar_minus = 1
    state = SolverState.trivial(1, 128)
    osc = random_band_limited(rng, 128, k_max=4, zero_mean=True)
    state.c = (osc * (0.08 / osc.sup_norm()) + 0.02).exp()
    factors = build_factors(state, zero_config(golden_freq))
    assert abs(factors.op_plus.a_bar * factors.op_minus.a_bar - 1.0) < 1e-13
    assert factors.case in ("5a", "5d")


# -- chained solves ------------------------------------------------------------------

def test_chain_zero_rhs(golden_freq):
    factors = build_factors(SolverState.trivial(1, 64), zero_config(golden_freq))
    x, g = chain_solve(factors, golden_freq, SpectralField.zeros(1, 64))
    assert x.sup_norm() == 0.0
    assert g == 0.0


def test_equal_branch_counterterm_is_mean(golden_freq, rng):
    # at the trivial factors (gamma = 1) the solvability choice is g = <rhs>
    factors = build_factors(SolverState.trivial(1, 64), zero_config(golden_freq))
    e = random_band_limited(rng, 64, k_max=8) + 0.3
    a_field, g = chain_solve(factors, golden_freq, -e)
    assert abs(g - (-e.average())) < 1e-13
    assert abs(a_field.average()) < 1e-13


def test_chain_residual_trivial_factors(golden_freq, rng):
    factors = build_factors(SolverState.trivial(1, 128), zero_config(golden_freq))
    rhs = random_band_limited(rng, 128, k_max=10, zero_mean=True)
    x, g = chain_solve(factors, golden_freq, rhs)
    resid = apply_factored(factors, golden_freq, x) + g - rhs
    assert resid.sup_norm() < 1e-11 * max(1.0, rhs.sup_norm())


def test_chain_residual_nontrivial_factors(golden_freq, rng, model05):
    state = SolverState.trivial(1, 128)
    for i in range(2):
        state, _ = newton_step(state, model05, iteration=i)
    factors = build_factors(state, model05)
    assert factors.case == "5a"
    rhs = random_band_limited(rng, 128, k_max=10) * 0.01
    x, g = chain_solve(factors, golden_freq, rhs)
    resid = apply_factored(factors, golden_freq, x) + g - rhs
    assert resid.sup_norm() < 1e-10 * max(1.0, rhs.sup_norm())
    assert abs(x.average()) < 1e-12


def test_solve_AG_BD_wrappers(model05, run05):
    state, _ = run05
    fresh = SolverState(v=state.v, sigma=state.sigma, lam=state.lam, c=state.c)
    A, G = solve_AG(fresh, model05)
    B, D = solve_BD(fresh, model05)
    # converged state: e ~ 0 so (A, G) ~ 0; B solves against -v which is not 0
    assert A.sup_norm() < 1e-11
    assert abs(G) < 1e-12
    assert B.sup_norm() > 1e-4
    assert abs(B.average()) < 1e-12


def test_solve_sigma_c_trivial(golden_freq):
    state = SolverState.trivial(1, 64)
    config = zero_config(golden_freq)
    zero = SpectralField.zeros(1, 64)
    sigma_hat, c_hat, branch, transversality = solve_sigma_c(state, config, zero, zero)
    assert sigma_hat == 0.0
    assert c_hat.sup_norm() == 0.0
    # weight w = c_+ + ddW c_+ B ~ 1, so the recorded integrand mean is ~ -1
    assert abs(transversality + 1.0) < 1e-12


# -- newton step -----------------------------------------------------------------------

def test_exact_solution_is_fixed_point(golden_freq):
    state = SolverState.trivial(1, 64)
    new_state, report = newton_step(state, zero_config(golden_freq))
    assert report.norm_v_hat < 1e-13
    assert abs(report.sigma_hat) < 1e-13
    assert abs(report.lambda_hat) < 1e-13
    assert report.norm_c_hat < 1e-13


def test_converged_state_is_fixed_point(model05, run05):
    state, _ = run05
    fresh = SolverState(v=state.v, sigma=state.sigma, lam=state.lam, c=state.c)
    _, report = newton_step(fresh, model05)
    assert report.norm_v_hat < 1e-13
    assert report.norm_c_hat < 1e-13


def test_step_reduces_residual_quadratically(model05):
    state = SolverState.trivial(1, 128)
    state, report = newton_step(state, model05)
    assert report.res_after < 0.5 * report.res_before**1.5


def test_normalization_preserved(model05, run05):
    _, history = run05
    state = SolverState.trivial(1, 128)
    for i, _ in enumerate(history):
        state, _ = newton_step(state, model05, iteration=i)
        assert abs(state.v.average()) < 1e-12


def test_correction_proportional_to_residual(model05, run05, rng):
    # ||v_hat|| <= C eps with C stable across perturbation scales
    solution, _ = run05
    ratios = []
    for scale in (1e-3, 1e-4):
        dv = random_band_limited(rng, 128, k_max=6, zero_mean=True)
        dv = dv * (scale / dv.sup_norm())
        state = SolverState(
            v=solution.v + dv, sigma=solution.sigma, lam=solution.lam, c=solution.c
        )
        state_out, report = newton_step(state, model05)
        eps = report.res_before
        ratios.append(report.norm_v_hat / eps)
    assert 1.0 / 3.0 < ratios[0] / ratios[1] < 3.0


def test_branch_recorded(model05):
    state = SolverState.trivial(1, 128)
    state, rep0 = newton_step(state, model05, iteration=0)
    assert rep0.branch == "5d"  # c = 1: equal averages
    state, rep1 = newton_step(state, model05, iteration=1)
    assert rep1.branch == "5a"  # generic c: reciprocal unequal averages


def test_dropped_term_is_quadratic(model05):
    state = SolverState.trivial(1, 128)
    _, report = newton_step(state, model05)
    assert report.dropped_term <= 2.0 * report.res_f_before * report.norm_v_hat


# -- full runs -----------------------------------------------------------------------

def test_zero_potential_converges_immediately(golden_freq):
    config = zero_config(golden_freq)
    state, history = run_kam(config, SolverState.trivial(1, 64))
    assert history == []
    assert residuals(state, config) == (0.0, 0.0)


def test_reference_run_converges(model05, run05):
    state, history = run05
    assert len(history) <= 7
    res_e, res_f = residuals(state, model05)
    assert max(res_e, res_f) < 1e-12


def test_nonzero_mean_guess_lands_on_normalized_solution(model05, run05):
    reference, _ = run05
    guess = SolverState.trivial(1, 128)
    guess.v = guess.v + 0.037  # constant offset, removed by the normalization
    state, _ = run_kam(model05, guess, tol=1e-12)
    assert abs(state.v.average()) < 1e-12
    assert state.distance(reference) < 1e-9


def test_two_angle_solve_converges(golden_freq):
    from qpfk.cohomology import diophantine_constant

    freq = diophantine_constant(
        [golden_freq.omega[0], math.sqrt(2.0) - 1.0], 2.5, 40
    )
    pot = Potential.cosine((1, 0, 0), 0.02) + Potential.cosine((0, 1, 1), 0.01)
    config = ModelConfig(freq=freq, beta=(1.0, 0.3, 0.5), eta=0.1, potential=pot)
    state, history = run_kam(config, SolverState.trivial(2, 64), tol=1e-12, max_iter=15)
    assert max(residuals(state, config)) < 1e-12
    assert abs(state.v.average()) < 1e-12


def test_max_iterations_raised(model05):
    with pytest.raises(MaxIterations) as err:
        run_kam(model05, SolverState.trivial(1, 128), tol=1e-12, max_iter=1)
    assert err.value.history


def test_no_progress_at_roundoff_floor(model05):
    with pytest.raises(NoProgress):
        run_kam(model05, SolverState.trivial(1, 128), tol=1e-30, max_iter=15)


# -- reporting ------------------------------------------------------------------------

def test_residual_sequence_and_slope():
    eps = [1e-1, 1e-2, 1e-4, 1e-8]
    slope = quadratic_slope(eps, window=(1e-9, 1.0))
    assert abs(slope - 2.0) < 0.2


def test_history_csv_schema(model05, run05):
    state, history = run05
    buf = io.StringIO()
    write_history_csv(buf, history, state, residuals(state, model05))
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,res_e,res_f,sigma,lambda,norm_v,branch,tail_frac"
    assert len(lines) == len(history) + 2
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == history[0].res_e_before
    assert first[6] in ("5a", "5b", "5c", "5d")


def test_history_csv_deterministic(model05):
    outputs = []
    for _ in range(2):
        state, history = run_kam(model05, SolverState.trivial(1, 128), tol=1e-12)
        buf = io.StringIO()
        write_history_csv(buf, history, state, residuals(state, model05))
        outputs.append(buf.getvalue())
    assert outputs[0] == outputs[1]


# -- uniqueness ------------------------------------------------------------------------

def test_zero_perturbation_identical(model05, run05):
    state, _ = run05
    report = uniqueness_probe(model05, state, scale=0.0, n_directions=2, seed=3)
    assert max(report.distances) < 1e-12


def test_small_perturbations_reconverge(model05, run05):
    state, _ = run05
    report = uniqueness_probe(model05, state, scale=1e-4, n_directions=3, seed=5)
    assert report.passed
