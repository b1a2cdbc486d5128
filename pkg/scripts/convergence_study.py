#!/usr/bin/env python3
"""Convergence study over the coupling strength mu.

For each mu the coupled equations are solved from the trivial guess and the
per-iteration residual history is recorded, along with the fitted quadratic
slope and the converged counterterms.  Writes one long-format CSV with all
histories plus a per-mu summary CSV.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from qpfk.errors import QpfkError
from qpfk import (
    GOLDEN_MEAN,
    ModelConfig,
    Potential,
    SolverState,
    diophantine_constant,
    quadratic_slope,
    residual_sequence,
    residuals,
    run_kam,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mu-min", type=float, default=0.01)
    parser.add_argument("--mu-max", type=float, default=0.2)
    parser.add_argument("--mu-count", type=int, default=9)
    parser.add_argument("--grid-size", type=int, default=128)
    parser.add_argument("--tol", type=float, default=1e-12)
    parser.add_argument("--out-dir", default="out/convergence")
    args = parser.parse_args()

    freq = diophantine_constant([GOLDEN_MEAN], 1.0, 200)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    history_rows = ["mu,iter,res_e,res_f,branch"]
    summary_rows = ["mu,iterations,sigma,lambda,norm_v,res_e,res_f,slope_e"]
    for mu in np.geomspace(args.mu_min, args.mu_max, args.mu_count):
        config = ModelConfig(
            freq=freq, beta=(1.0, 0.5), eta=0.0, potential=Potential.cosine((1, 0), mu)
        )
        try:
            state, history = run_kam(
                config, SolverState.trivial(1, args.grid_size), tol=args.tol, max_iter=25
            )
        except QpfkError as exc:
            # larger couplings leave the positivity domain of the
            # log-factorization; record where the method stops
            print(f"mu = {mu:8.4f}: no convergence ({type(exc).__name__}: {exc})")
            summary_rows.append(f"{mu:.6e},-1,nan,nan,nan,nan,nan,nan")
            continue
        for step in history:
            history_rows.append(
                f"{mu:.6e},{step.iteration},{step.res_e_before:.6e},"
                f"{step.res_f_before:.6e},{step.branch}"
            )
        res_e, res_f = residuals(state, config)
        try:
            slope = quadratic_slope(residual_sequence(history, which="e"))
        except ValueError:
            slope = float("nan")
        summary_rows.append(
            f"{mu:.6e},{len(history)},{state.sigma:.10e},{state.lam:.10e},"
            f"{state.v.sup_norm():.10e},{res_e:.3e},{res_f:.3e},{slope:.3f}"
        )
        print(
            f"mu = {mu:8.4f}: {len(history)} iterations, sigma = {state.sigma:+.6e}, "
            f"|v| = {state.v.sup_norm():.4e}, slope = {slope:.2f}"
        )

    (out / "histories.csv").write_text("\n".join(history_rows) + "\n")
    (out / "summary.csv").write_text("\n".join(summary_rows) + "\n")
    print(f"wrote {out}/histories.csv and {out}/summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
