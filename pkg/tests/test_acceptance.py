"""Acceptance gate: every criterion at its stated tolerance and runtime bound.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion.
All runs are desk scale: d = 2 (one hull angle), golden-mean frequency,
grid sizes <= 512.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from qpfk.cohomology import GOLDEN_MEAN, diophantine_constant, solve_constant_cohomology
from qpfk.fields import SpectralField, multiply
from qpfk.lindstedt import check_symmetry, evaluate_series, expand_series, truncation_residual
from qpfk.model import ModelConfig, Potential, SolverState
from qpfk.oracle import allowance_check, compare_solvers
from qpfk.solver import (
    newton_step,
    quadratic_slope,
    residual_sequence,
    residuals,
    run_kam,
    uniqueness_probe,
)
from qpfk.twisted import solve_twisted

from conftest import random_band_limited


@contextmanager
def criterion(number, description, budget_s):
    start = time.perf_counter()
    info = {}
    yield info
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    print(f"\ncriterion {number} PASS ({elapsed:.2f}s < {budget_s}s): {description}; {detail}")
    assert elapsed < budget_s, f"criterion {number} exceeded its {budget_s}s budget"


@pytest.fixture(scope="module")
def freq():
    return diophantine_constant([GOLDEN_MEAN], 1.0, 200)


@pytest.fixture(scope="module")
def model05(freq):
    return ModelConfig(
        freq=freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.cosine((1, 0), 0.05)
    )


@pytest.fixture(scope="module")
def run05(model05):
    return run_kam(model05, SolverState.trivial(1, 128), tol=1e-12, max_iter=20)


@pytest.fixture(scope="module")
def unit_family(freq):
    return ModelConfig(
        freq=freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.cosine((1, 0), 1.0)
    )


def test_criterion_01_trivial_exactness(freq):
    with criterion(1, "W = 0 is solved exactly by the trivial state", 1.0) as info:
        config = ModelConfig(
            freq=freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.zero(2)
        )
        state = SolverState.trivial(1, 128)
        res_e, res_f = residuals(state, config)
        assert max(res_e, res_f) < 1e-14
        final, history = run_kam(config, state, tol=1e-12)
        assert history == []
        _, report = newton_step(SolverState.trivial(1, 128), config)
        corrections = max(
            report.norm_v_hat, abs(report.sigma_hat), abs(report.lambda_hat),
            report.norm_c_hat,
        )
        assert corrections < 1e-13
        info["residual"] = f"{max(res_e, res_f):.1e}"
        info["corrections"] = f"{corrections:.1e}"


def test_criterion_02_manufactured_solutions(freq):
    with criterion(2, "manufactured cohomology and twisted solutions recovered", 5.0) as info:
        rng = np.random.default_rng(42)
        omega = freq.omega_array
        worst_coh = 0.0
        for _ in range(20):
            vstar = random_band_limited(rng, 128, k_max=20, zero_mean=True)
            phi = vstar.translate(omega) - vstar
            v = solve_constant_cohomology(phi, freq)
            worst_coh = max(worst_coh, (v - vstar).sup_norm())
        assert worst_coh < 1e-12
        worst_tw = 0.0
        one = SpectralField.constant(1.0, 1, 128)
        for _ in range(20):
            osc_a = random_band_limited(rng, 128, k_max=4, zero_mean=True)
            a = (osc_a * (0.05 / osc_a.sup_norm()) + rng.uniform(-0.05, 0.05)).exp()
            osc_b = random_band_limited(rng, 128, k_max=4, zero_mean=True)
            b = (osc_b * (0.04 / osc_b.sup_norm())).exp()
            vstar = random_band_limited(rng, 128, k_max=8, zero_mean=True)
            vstar = vstar * (1.0 / vstar.sup_norm())
            lamstar = rng.uniform(-1.0, 1.0)
            phi = multiply(a, vstar.translate(omega)) - multiply(b, vstar) - lamstar * one
            sol = solve_twisted(a, b, phi, one, freq)
            worst_tw = max(
                worst_tw, (sol.v - vstar).sup_norm(), abs(sol.lam - lamstar)
            )
        assert worst_tw < 1e-10
        info["cohomology_err"] = f"{worst_coh:.1e}"
        info["twisted_err"] = f"{worst_tw:.1e}"


def test_criterion_03_diophantine_certification(freq):
    with criterion(3, "golden-mean constant matches the brute-force oracle", 1.0) as info:
        # Independent oracle: literal loop over k <= 200, m the nearest integer.
        oracle = min(
            abs(k * GOLDEN_MEAN - round(k * GOLDEN_MEAN)) * k for k in range(1, 201)
        )
        assert abs(freq.kappa_hat - oracle) < 1e-3
        # The oracle value itself: the minimum sits at k = 1 and equals
        # 1 - golden_mean = (3 - sqrt 5)/2 ~ 0.38197.  The classical 1/sqrt(5)
        # ~ 0.44721 is the liminf along Fibonacci denominators, which the
        # k = 1 term undercuts; certifying against the computed minimum (not
        # the assumed constant) is what the divisor bounds require.
        assert abs(oracle - (3.0 - math.sqrt(5.0)) / 2.0) < 1e-15
        info["kappa_hat"] = f"{freq.kappa_hat:.5f}"
        info["oracle"] = f"{oracle:.5f}"
        info["minimizer"] = "k=1"


def test_criterion_04_quadratic_convergence(model05, run05):
    with criterion(4, "equilibrium error is squared at every Newton step", 10.0) as info:
        state, history = run05
        res_e, res_f = residuals(state, model05)
        assert max(res_e, res_f) < 1e-12
        eps_e = residual_sequence(history, which="e")
        slope_e = quadratic_slope(eps_e, window=(1e-10, 1e-2))
        assert 1.7 <= slope_e <= 2.3
        eps_f = residual_sequence(history, which="f")
        slope_f = quadratic_slope(eps_f, window=(1e-10, 1e-2))
        info["slope_e"] = f"{slope_e:.3f}"
        info["slope_f_diag"] = f"{slope_f:.3f}"
        info["final_residual"] = f"{max(res_e, res_f):.1e}"
        info["iterations"] = len(history)


def test_criterion_05_oracle_equivalence(freq):
    with criterion(5, "factorized updates match the dense solve on grid 64", 30.0) as info:
        config = ModelConfig(
            freq=freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.cosine((1, 0), 0.05)
        )
        state = SolverState.trivial(1, 64)
        for i in range(2):
            state, _ = newton_step(state, config, iteration=i)
        res_e, res_f = residuals(state, config)
        eps = max(res_e, res_f)
        comp = compare_solvers(state, config, 31)
        checks = allowance_check(comp, eps, floor=1e-8)
        for name, (absdiff, allowance, ok) in checks.items():
            assert ok, f"{name}: {absdiff:.3e} > {allowance:.3e}"
        # where the dropped term vanishes (converged state) the chain solves
        # must agree to the raw 1e-8 relative tolerance
        converged, _ = run_kam(config, state, tol=1e-12)
        comp2 = compare_solvers(converged, config, 31)
        for name in ("B", "D"):
            absdiff, rel, scale = comp2.diffs[name]
            assert absdiff <= 1e-8 * max(scale, 1.0)
        info["max_rel"] = f"{comp.max_relative():.1e}"
        info["sharp_B_rel"] = f"{comp2.diffs['B'][1]:.1e}"
        info["condition"] = f"{comp.condition:.1e}"


def test_criterion_06_lindstedt_truncation_law(unit_family):
    with criterion(6, "truncation residual decays like mu^(N+1)", 30.0) as info:
        mus = np.geomspace(1e-3, 1e-2, 7)
        for order in (1, 2, 3):
            series = expand_series(unit_family, order, grid_size=128)
            fit = truncation_residual(series, mus)
            assert abs(fit.slope_e - (order + 1)) <= 0.2, f"N={order}: {fit.slope_e}"
            assert abs(fit.slope_f - (order + 1)) <= 0.2, f"N={order}: {fit.slope_f}"
            info[f"slope_N{order}"] = f"{fit.slope_e:.2f}/{fit.slope_f:.2f}"


def test_criterion_07_kam_lindstedt_consistency(unit_family):
    with criterion(7, "KAM solutions track the series to order N+1", 60.0) as info:
        mus = np.geomspace(1e-3, 1e-2, 7)
        logmu = np.log(mus)
        for order in (1, 2, 3):
            series = expand_series(unit_family, order, grid_size=128)
            dsig, dv = [], []
            for mu in mus:
                cfg = unit_family.with_potential(unit_family.potential.scaled(mu))
                guess = evaluate_series(series, mu)
                state, _ = run_kam(cfg, guess, tol=1e-13, max_iter=10)
                dsig.append(abs(state.sigma - guess.sigma))
                dv.append((state.v - guess.v).sup_norm())
            slope_sigma = float(np.polyfit(logmu, np.log(dsig), 1)[0])
            slope_v = float(np.polyfit(logmu, np.log(dv), 1)[0])
            assert slope_sigma >= order + 0.8, f"N={order}: sigma slope {slope_sigma}"
            assert slope_v >= order + 0.8, f"N={order}: v slope {slope_v}"
            info[f"slopes_N{order}"] = f"{slope_sigma:.2f}/{slope_v:.2f}"


def test_criterion_08_local_uniqueness(model05, run05):
    with criterion(8, "perturbed restarts reconverge to the same solution", 60.0) as info:
        solution, _ = run05
        report = uniqueness_probe(
            model05, solution, scale=1e-4, n_directions=10, seed=2024,
            tol=1e-12, distance_tol=1e-9,
        )
        assert report.passed
        info["max_distance"] = f"{max(report.distances):.1e}"
        info["restarts"] = len(report.distances)


def test_criterion_09_symmetry_transform(freq):
    with criterion(9, "phase-shift symmetry preserves the eta-family", 120.0) as info:
        mu = 0.05
        pot = (
            Potential.cosine((1, 0), mu)
            + Potential.cosine((1, 1), 0.25 * mu)
            + Potential.cosine((0, 1), 0.2 * mu)
        )
        config = ModelConfig(freq=freq, beta=(1.0, 0.5), eta=0.0, potential=pot)
        etas = [i / 32 for i in range(32)]
        states = [
            run_kam(config.with_eta(eta), SolverState.trivial(1, 128), tol=1e-12)[0]
            for eta in etas
        ]
        report = check_symmetry(etas, states, 0.01, config)
        assert report.max_residual < 1e-9
        info["max_residual"] = f"{report.max_residual:.1e}"
        info["eta_tail"] = f"{report.eta_tail:.1e}"
        sig = [s.sigma for s in states]
        info["sigma_span"] = f"{max(sig) - min(sig):.1e}"


def test_criterion_10_complexity_scaling(model05):
    with criterion(10, "per-step cost is quasilinear in the grid size", 60.0) as info:
        times, memory = {}, {}
        for n in (128, 256, 512):
            state, _ = run_kam(
                model05, SolverState.trivial(1, n), tol=1e-8, max_iter=8
            )
            best = math.inf
            for _ in range(7):
                fresh = SolverState(
                    v=state.v, sigma=state.sigma, lam=state.lam, c=state.c
                )
                t0 = time.perf_counter()
                newton_step(fresh, model05)
                best = min(best, time.perf_counter() - t0)
            times[n] = best
            state.v.synchronize()
            state.c.synchronize()
            memory[n] = (
                state.v.values.nbytes + state.v.coefficients.nbytes
                + state.c.values.nbytes + state.c.coefficients.nbytes
            )
        ratio1 = times[256] / times[128]
        ratio2 = times[512] / times[256]
        assert ratio1 <= 2.6, f"step-time ratio 256/128 = {ratio1:.2f}"
        assert ratio2 <= 2.6, f"step-time ratio 512/256 = {ratio2:.2f}"
        assert memory[256] == 2 * memory[128]
        assert memory[512] == 2 * memory[256]
        info["time_ratios"] = f"{ratio1:.2f},{ratio2:.2f}"
        info["step_ms"] = ",".join(f"{times[n] * 1e3:.1f}" for n in (128, 256, 512))
        info["memory_bytes"] = ",".join(str(memory[n]) for n in (128, 256, 512))
