"""Batch driver: config ingestion, subcommands, and CSV/text artifacts.

A run is described by one TOML file with ``[model]``, ``[numerics]``,
``[task]`` and ``[output]`` blocks; every key can be overridden by the
matching command-line flag.  Unknown keys are rejected.  Subcommands:

    solve        converge the coupled equations, write history + solution
    lindstedt    expand the perturbative series, write dumps + slope fits
    compare      KAM vs series over a list of mu values
    diophantine  brute-force certification of a frequency vector
    sweep-eta    solve over an eta grid, then apply the symmetry check
    oracle-check fast factorized solves vs the dense oracle

Exit codes: 0 success, 2 configuration error, 3 precondition failure,
4 convergence failure, 5 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fields
from .cohomology import diophantine_constant, diophantine_details
from .errors import (
    ConfigError,
    ConvergenceError,
    PreconditionError,
    QpfkError,
)
from .lindstedt import (
    check_symmetry,
    evaluate_series,
    expand_series,
    format_series,
    truncation_residual,
)
from .model import ModelConfig, Potential, SolverState, check_nondegeneracy
from .oracle import allowance_check, compare_solvers
from .solver import (
    newton_step,
    quadratic_slope,
    residual_sequence,
    residuals,
    run_kam,
    write_history_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_CONVERGENCE = 4
EXIT_INTERNAL = 5


@dataclass
class ModelBlock:
    d: int = 2
    omega: list = field(default_factory=lambda: [(math.sqrt(5.0) - 1.0) / 2.0])
    tau: float = 1.0
    cutoff: int = 200
    beta: list = field(default_factory=lambda: [1.0, 0.5])
    eta: float = 0.0
    potential_file: str = ""
    potential_modes: list = field(default_factory=list)  # rows [j_1..j_d, re, im]
    declared_strip: float = math.inf


@dataclass
class NumericsBlock:
    grid_size: int = 128
    tol: float = 1e-12
    max_iter: int = 20
    dealias: bool = True
    oversample: int = 2
    seed: int = 0


@dataclass
class TaskBlock:
    order: int = 3
    mu: float = 0.05
    mu_values: list = field(default_factory=lambda: list(np.geomspace(1e-3, 1e-2, 7)))
    eta_count: int = 32
    iota: float = 0.01
    oracle_cutoff: int = 31
    newton_steps: int = 2


@dataclass
class OutputBlock:
    directory: str = "out"


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    task: TaskBlock = field(default_factory=TaskBlock)
    output: OutputBlock = field(default_factory=OutputBlock)


_BLOCKS = {"model": ModelBlock, "numerics": NumericsBlock, "task": TaskBlock,
           "output": OutputBlock}


def load_config(path: str | None) -> RunConfig:
    """Parse the TOML run configuration, rejecting unknown blocks and keys."""
    run = RunConfig()
    if path is None:
        return run
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for block_name, content in data.items():
        cls = _BLOCKS.get(block_name)
        if cls is None:
            raise ConfigError(f"unknown config block [{block_name}]")
        if not isinstance(content, dict):
            raise ConfigError(f"block [{block_name}] must be a table")
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in content.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in block [{block_name}]")
            setattr(getattr(run, block_name), key, value)
    return run


def build_model(run: RunConfig) -> ModelConfig:
    m = run.model
    if len(m.omega) != m.d - 1:
        raise ConfigError(f"omega must have d-1 = {m.d - 1} components, got {len(m.omega)}")
    if len(m.beta) != m.d:
        raise ConfigError(f"beta must have d = {m.d} components, got {len(m.beta)}")
    freq = diophantine_constant(m.omega, m.tau, m.cutoff)
    if m.potential_file:
        pot = Potential.parse(Path(m.potential_file).read_text(), m.declared_strip)
        if pot.dim_total != m.d:
            raise ConfigError(
                f"potential file is on a {pot.dim_total}-torus, model has d = {m.d}"
            )
    elif m.potential_modes:
        modes = {}
        for row in m.potential_modes:
            if len(row) != m.d + 2:
                raise ConfigError(f"potential mode row must have d+2 entries: {row}")
            modes[tuple(int(x) for x in row[: m.d])] = complex(row[m.d], row[m.d + 1])
        pot = Potential.from_modes(m.d, modes, m.declared_strip)
    else:
        pot = Potential.zero(m.d)
    return ModelConfig(freq=freq, beta=tuple(m.beta), eta=m.eta, potential=pot)


def _fmt(x: float) -> str:
    return f"{x:.17e}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _summary_lines(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def cmd_solve(run: RunConfig, out_dir: Path) -> int:
    config = build_model(run)
    num = run.numerics
    guess = SolverState.trivial(config.dim, num.grid_size)
    state, history = run_kam(
        config, guess, tol=num.tol, max_iter=num.max_iter, oversample=num.oversample
    )
    res_e, res_f = residuals(state, config, num.oversample)
    buf = io.StringIO()
    write_history_csv(buf, history, state, (res_e, res_f))
    _write(out_dir / "history.csv", buf.getvalue())
    _write(out_dir / "v_coefficients.txt", state.v.format_coefficients())
    _write(out_dir / "c_coefficients.txt", state.c.format_coefficients())
    report = check_nondegeneracy(state, config)
    pairs = [
        ("status", "converged"),
        ("iterations", len(history)),
        ("sigma", _fmt(state.sigma)),
        ("lambda", _fmt(state.lam)),
        ("res_e", _fmt(res_e)),
        ("res_f", _fmt(res_f)),
        ("norm_v", _fmt(state.v.sup_norm())),
    ]
    for check in report.checks:
        pairs.append((f"nd_{check.name}", f"{'pass' if check.ok else 'fail'}"))
        pairs.append((f"nd_{check.name}_margin", _fmt(check.margin)))
    if len(history) >= 3:
        try:
            pairs.append(
                ("quadratic_slope", _fmt(quadratic_slope(residual_sequence(history, which="e"))))
            )
        except ValueError:
            pass
    _write(out_dir / "summary.txt", _summary_lines(pairs))
    return EXIT_OK


def cmd_lindstedt(run: RunConfig, out_dir: Path) -> int:
    config = build_model(run)
    num, task = run.numerics, run.task
    series = expand_series(
        config, task.order, grid_size=num.grid_size, oversample=num.oversample
    )
    _write(out_dir / "series.txt", format_series(series))
    fit = truncation_residual(series, task.mu_values)
    rows = ["mu,res_e,res_f"]
    for mu, re_, rf_ in zip(fit.mu_values, fit.res_e, fit.res_f):
        rows.append(f"{_fmt(mu)},{_fmt(re_)},{_fmt(rf_)}")
    _write(out_dir / "truncation.csv", "\n".join(rows) + "\n")
    pairs = [
        ("order", series.order),
        ("slope_e", _fmt(fit.slope_e)),
        ("slope_f", _fmt(fit.slope_f)),
        ("max_order_residual", _fmt(max(series.order_residuals))),
        ("growth_flag", str(series.growth_flag).lower()),
    ]
    for n in range(series.order + 1):
        pairs.append((f"sigma_{n}", _fmt(series.sigma_coeffs[n])))
        pairs.append((f"lambda_{n}", _fmt(series.lambda_coeffs[n])))
    _write(out_dir / "summary.txt", _summary_lines(pairs))
    return EXIT_OK


def cmd_compare(run: RunConfig, out_dir: Path) -> int:
    config = build_model(run)
    num, task = run.numerics, run.task
    series = expand_series(
        config, task.order, grid_size=num.grid_size, oversample=num.oversample
    )
    rows = ["mu,sigma_kam,sigma_series,dsigma,dlambda,dv_sup"]
    dsig, dv, mus = [], [], []
    for mu in task.mu_values:
        cfg_mu = config.with_potential(config.potential.scaled(mu))
        series_state = evaluate_series(series, mu)
        kam_state, _ = run_kam(
            cfg_mu, series_state, tol=num.tol, max_iter=num.max_iter,
            oversample=num.oversample,
        )
        ds = abs(kam_state.sigma - series_state.sigma)
        dl = abs(kam_state.lam - series_state.lam)
        dvn = (kam_state.v - series_state.v).sup_norm()
        rows.append(
            f"{_fmt(mu)},{_fmt(kam_state.sigma)},{_fmt(series_state.sigma)},"
            f"{_fmt(ds)},{_fmt(dl)},{_fmt(dvn)}"
        )
        mus.append(mu)
        dsig.append(ds)
        dv.append(dvn)
    _write(out_dir / "compare.csv", "\n".join(rows) + "\n")
    logmu = np.log(mus)
    slope_sigma = float(np.polyfit(logmu, np.log(np.maximum(dsig, 1e-300)), 1)[0])
    slope_v = float(np.polyfit(logmu, np.log(np.maximum(dv, 1e-300)), 1)[0])
    _write(
        out_dir / "summary.txt",
        _summary_lines(
            [
                ("order", task.order),
                ("slope_sigma_diff", _fmt(slope_sigma)),
                ("slope_v_diff", _fmt(slope_v)),
            ]
        ),
    )
    return EXIT_OK


def cmd_diophantine(run: RunConfig, out_dir: Path | None) -> int:
    m = run.model
    kappa_hat, k_min, m_min = diophantine_details(m.omega, m.tau, m.cutoff)
    freq = diophantine_constant(m.omega, m.tau, m.cutoff)
    lines = [
        ("omega", " ".join(_fmt(w) for w in m.omega)),
        ("tau", _fmt(m.tau)),
        ("cutoff", m.cutoff),
        ("kappa_hat", _fmt(freq.kappa_hat)),
        ("k_min", " ".join(str(k) for k in k_min)),
        ("m_min", m_min),
    ]
    text = _summary_lines(lines)
    sys.stdout.write(text)
    if out_dir is not None:
        _write(out_dir / "diophantine.txt", text)
    return EXIT_OK


def cmd_sweep_eta(run: RunConfig, out_dir: Path) -> int:
    config = build_model(run)
    num, task = run.numerics, run.task
    etas = [i / task.eta_count for i in range(task.eta_count)]
    states = []
    rows = ["eta,sigma,lambda,norm_v,iterations,res_e,res_f"]
    for i, eta in enumerate(etas):
        cfg = config.with_eta(eta)
        guess = SolverState.trivial(config.dim, num.grid_size)
        state, history = run_kam(
            cfg, guess, tol=num.tol, max_iter=num.max_iter, oversample=num.oversample
        )
        res_e, res_f = residuals(state, cfg, num.oversample)
        states.append(state)
        rows.append(
            f"{_fmt(eta)},{_fmt(state.sigma)},{_fmt(state.lam)},"
            f"{_fmt(state.v.sup_norm())},{len(history)},{_fmt(res_e)},{_fmt(res_f)}"
        )
        _write(out_dir / "solutions" / f"eta_{i:03d}_v.txt", state.v.format_coefficients())
        _write(out_dir / "solutions" / f"eta_{i:03d}_c.txt", state.c.format_coefficients())
    _write(out_dir / "eta_sweep.csv", "\n".join(rows) + "\n")
    pairs = [("eta_count", task.eta_count), ("iota", _fmt(task.iota))]
    if task.eta_count >= 2 and task.eta_count & (task.eta_count - 1) == 0:
        report = check_symmetry(etas, states, task.iota, config)
        pairs += [
            ("symmetry_max_residual", _fmt(report.max_residual)),
            ("eta_tail", _fmt(report.eta_tail)),
        ]
    else:
        pairs.append(("symmetry_max_residual", "skipped_non_power_of_two"))
    _write(out_dir / "summary.txt", _summary_lines(pairs))
    return EXIT_OK


def cmd_oracle_check(run: RunConfig, out_dir: Path) -> int:
    config = build_model(run)
    num, task = run.numerics, run.task
    state = SolverState.trivial(config.dim, num.grid_size)
    for i in range(task.newton_steps):
        state, _ = newton_step(state, config, oversample=num.oversample, iteration=i)
    res_e, res_f = residuals(state, config, num.oversample)
    eps = max(res_e, res_f)
    comp = compare_solvers(state, config, task.oracle_cutoff)
    checks = allowance_check(comp, eps)
    rows = ["component,abs_diff,rel_diff,allowance,ok"]
    for name, (absdiff, reldiff, _) in comp.diffs.items():
        _, allowance, ok = checks[name]
        rows.append(
            f"{name},{_fmt(absdiff)},{_fmt(reldiff)},{_fmt(allowance)},{str(ok).lower()}"
        )
    all_ok = all(ok for _, _, ok in checks.values())
    _write(out_dir / "oracle.csv", "\n".join(rows) + "\n")
    _write(
        out_dir / "summary.txt",
        _summary_lines(
            [
                ("cutoff", comp.cutoff),
                ("condition", _fmt(comp.condition)),
                ("state_res_e", _fmt(res_e)),
                ("state_res_f", _fmt(res_f)),
                ("within_allowance", str(all_ok).lower()),
                ("time_fast_s", f"{comp.time_fast:.6f}"),
                ("time_dense_s", f"{comp.time_dense:.6f}"),
                ("timing_ratio", f"{comp.timing_ratio:.3f}"),
            ]
        ),
    )
    return EXIT_OK


_OVERRIDES = [
    # (flag, block, key, type)
    ("--grid-size", "numerics", "grid_size", int),
    ("--tol", "numerics", "tol", float),
    ("--max-iter", "numerics", "max_iter", int),
    ("--oversample", "numerics", "oversample", int),
    ("--seed", "numerics", "seed", int),
    ("--eta", "model", "eta", float),
    ("--tau", "model", "tau", float),
    ("--cutoff", "model", "cutoff", int),
    ("--potential-file", "model", "potential_file", str),
    ("--order", "task", "order", int),
    ("--mu", "task", "mu", float),
    ("--eta-count", "task", "eta_count", int),
    ("--iota", "task", "iota", float),
    ("--oracle-cutoff", "task", "oracle_cutoff", int),
    ("--newton-steps", "task", "newton_steps", int),
    ("--out-dir", "output", "directory", str),
]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpfk",
        description="Spectral quasi-Newton solver for resonant quasi-periodic "
        "Frenkel-Kontorova equilibria",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = ["solve", "lindstedt", "compare", "diophantine", "sweep-eta", "oracle-check"]
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML run configuration")
        for flag, _, _, typ in _OVERRIDES:
            p.add_argument(flag, type=typ, default=None)
        p.add_argument("--omega", type=float, nargs="+", default=None)
        p.add_argument("--beta", type=float, nargs="+", default=None)
        p.add_argument("--mu-values", type=float, nargs="+", default=None)
        p.add_argument("--no-dealias", action="store_true")
    return parser


def _apply_overrides(run: RunConfig, args: argparse.Namespace) -> None:
    for flag, block, key, _ in _OVERRIDES:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            setattr(getattr(run, block), key, value)
    if args.omega is not None:
        run.model.omega = list(args.omega)
        run.model.d = len(args.omega) + 1
    if args.beta is not None:
        run.model.beta = list(args.beta)
    if args.mu_values is not None:
        run.task.mu_values = list(args.mu_values)
    if args.no_dealias:
        run.numerics.dealias = False


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        run = load_config(args.config)
        _apply_overrides(run, args)
        fields.set_dealias_fraction(1.0 / 3.0 if run.numerics.dealias else None)
        out_dir = Path(run.output.directory)
        command = {
            "solve": cmd_solve,
            "lindstedt": cmd_lindstedt,
            "compare": cmd_compare,
            "diophantine": cmd_diophantine,
            "sweep-eta": cmd_sweep_eta,
            "oracle-check": cmd_oracle_check,
        }[args.command]
        return command(run, out_dir)
    except ConfigError as exc:
        sys.stderr.write(f"error_class=ConfigError\nerror={exc}\n")
        return EXIT_CONFIG
    except PreconditionError as exc:
        sys.stderr.write(f"error_class={type(exc).__name__}\nerror={exc}\n")
        return EXIT_PRECONDITION
    except ConvergenceError as exc:
        sys.stderr.write(f"error_class={type(exc).__name__}\nerror={exc}\n")
        return EXIT_CONVERGENCE
    except QpfkError as exc:
        sys.stderr.write(f"error_class={type(exc).__name__}\nerror={exc}\n")
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f"error_class={type(exc).__name__}\nerror={exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
