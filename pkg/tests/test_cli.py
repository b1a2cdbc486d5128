import math
from pathlib import Path

import pytest

from qpfk.cli import (
    EXIT_CONFIG,
    EXIT_CONVERGENCE,
    EXIT_OK,
    EXIT_PRECONDITION,
    RunConfig,
    build_model,
    load_config,
    main,
)
from qpfk.errors import ConfigError

GOLDEN = "0.6180339887498949"

BASE_CONFIG = f"""
[model]
d = 2
omega = [{GOLDEN}]
tau = 1.0
cutoff = 200
beta = [1.0, 0.5]
eta = 0.0
potential_modes = [[1, 0, 0.025, 0.0], [-1, 0, 0.025, 0.0]]

[numerics]
grid_size = 64
tol = 1e-12
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- configuration ---------------------------------------------------------------

def test_defaults_without_file():
    run = load_config(None)
    assert run.numerics.grid_size == 128
    assert run.model.d == 2
    assert math.isinf(run.model.declared_strip)


def test_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, BASE_CONFIG + "\n[numerics2]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path = write_config(tmp_path, BASE_CONFIG.replace("tol", "tolerance"))
    with pytest.raises(ConfigError):
        load_config(path)


def test_malformed_toml_rejected(tmp_path):
    path = write_config(tmp_path, "[model\nomega=")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_omega_is_config_error(tmp_path):
    path = write_config(tmp_path, BASE_CONFIG.replace(f"omega = [{GOLDEN}]", "omega = []"))
    run = load_config(path)
    with pytest.raises(ConfigError):
        build_model(run)


def test_default_potential_is_zero():
    run = RunConfig()
    config = build_model(run)
    assert config.potential.modes == ()


def test_potential_file_loading(tmp_path):
    pot_path = tmp_path / "pot.txt"
    pot_path.write_text("# d=2\n1 0 0.025 0.0\n-1 0 0.025 0.0\n")
    text = BASE_CONFIG.replace(
        "potential_modes = [[1, 0, 0.025, 0.0], [-1, 0, 0.025, 0.0]]",
        f'potential_file = "{pot_path}"',
    )
    run = load_config(write_config(tmp_path, text))
    config = build_model(run)
    assert dict(config.potential.modes)[(1, 0)] == 0.025


# -- exit-status taxonomy -----------------------------------------------------------

def test_parse_error_exit_code(tmp_path):
    path = write_config(tmp_path, "[model\n")
    assert main(["solve", "--config", path]) == EXIT_CONFIG


def test_precondition_exit_code(tmp_path):
    # resonant frequency fails certification
    text = BASE_CONFIG.replace(GOLDEN, "0.5")
    path = write_config(tmp_path, text + f'\n[output]\ndirectory = "{tmp_path}/o"\n')
    assert main(["solve", "--config", path]) == EXIT_PRECONDITION


def test_convergence_exit_code(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/o"\n'
    )
    assert main(["solve", "--config", path, "--max-iter", "1"]) == EXIT_CONVERGENCE


# -- solve artifacts ------------------------------------------------------------------

def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def test_zero_potential_solve(tmp_path):
    text = f"""
[model]
d = 2
omega = [{GOLDEN}]
beta = [1.0, 0.5]

[output]
directory = "{tmp_path}/out"
"""
    path = write_config(tmp_path, text)
    assert main(["solve", "--config", path]) == EXIT_OK
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert summary["iterations"] == "0"
    assert float(summary["sigma"]) == 0.0
    assert float(summary["lambda"]) == 0.0


def test_solve_artifacts(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/out"\n'
    )
    assert main(["solve", "--config", path]) == EXIT_OK
    out = tmp_path / "out"
    history = (out / "history.csv").read_text().splitlines()
    assert history[0] == "iter,res_e,res_f,sigma,lambda,norm_v,branch,tail_frac"
    assert len(history) > 2
    # residuals decrease monotonically down the run
    res = [max(float(r.split(",")[1]), float(r.split(",")[2])) for r in history[1:]]
    assert all(a > b for a, b in zip(res, res[1:]))
    assert (out / "v_coefficients.txt").read_text().startswith("# dim=1 grid=64")
    summary = read_summary(out / "summary.txt")
    assert summary["status"] == "converged"
    assert float(summary["res_e"]) < 1e-12


def test_flag_overrides_config(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/out"\n'
    )
    assert main(["solve", "--config", path, "--grid-size", "128"]) == EXIT_OK
    assert (tmp_path / "out" / "v_coefficients.txt").read_text().startswith(
        "# dim=1 grid=128"
    )


def test_deterministic_outputs(tmp_path):
    blobs = []
    for run_dir in ("a", "b"):
        path = write_config(
            tmp_path,
            BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/{run_dir}"\n',
            name=f"{run_dir}.toml",
        )
        assert main(["solve", "--config", path]) == EXIT_OK
        blobs.append(
            (
                (tmp_path / run_dir / "history.csv").read_bytes(),
                (tmp_path / run_dir / "v_coefficients.txt").read_bytes(),
            )
        )
    assert blobs[0] == blobs[1]


# -- other subcommands -----------------------------------------------------------------

def test_diophantine_stdout(capsys, tmp_path):
    argv = ["diophantine", "--omega", GOLDEN, "--tau", "1.0", "--cutoff", "200",
            "--out-dir", str(tmp_path / "out")]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    values = dict(line.split("=") for line in out.strip().splitlines())
    assert abs(float(values["kappa_hat"]) - (3 - math.sqrt(5)) / 2) < 1e-12
    assert values["k_min"] == "1"
    assert values["m_min"] == "1"


def test_lindstedt_artifacts(tmp_path):
    path = write_config(
        tmp_path,
        BASE_CONFIG.replace("grid_size = 64", "grid_size = 128")
        + f'\n[task]\norder = 2\n\n[output]\ndirectory = "{tmp_path}/out"\n',
    )
    assert main(["lindstedt", "--config", path]) == EXIT_OK
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert abs(float(summary["slope_e"]) - 3.0) < 0.2
    trunc = (tmp_path / "out" / "truncation.csv").read_text().splitlines()
    assert trunc[0] == "mu,res_e,res_f"
    series = (tmp_path / "out" / "series.txt").read_text()
    assert "# order=2 field=v" in series


def test_compare_artifacts(tmp_path):
    path = write_config(
        tmp_path,
        BASE_CONFIG.replace("grid_size = 64", "grid_size = 128")
        + f'\n[task]\norder = 2\n\n[output]\ndirectory = "{tmp_path}/out"\n',
    )
    assert main(["compare", "--config", path, "--tol", "1e-13"]) == EXIT_OK
    rows = (tmp_path / "out" / "compare.csv").read_text().splitlines()
    assert rows[0] == "mu,sigma_kam,sigma_series,dsigma,dlambda,dv_sup"
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert float(summary["slope_v_diff"]) >= 2.8


def test_sweep_eta_single_point_degenerates_to_solve(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/out"\n'
    )
    assert main(["sweep-eta", "--config", path, "--eta-count", "1"]) == EXIT_OK
    rows = (tmp_path / "out" / "eta_sweep.csv").read_text().splitlines()
    assert len(rows) == 2
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert summary["symmetry_max_residual"] == "skipped_non_power_of_two"
    assert (tmp_path / "out" / "solutions" / "eta_000_v.txt").exists()


def test_sweep_eta_with_symmetry(tmp_path):
    text = BASE_CONFIG.replace(
        "potential_modes = [[1, 0, 0.025, 0.0], [-1, 0, 0.025, 0.0]]",
        "potential_modes = [[1, 0, 0.025, 0.0], [-1, 0, 0.025, 0.0], "
        "[0, 1, 0.005, 0.0], [0, -1, 0.005, 0.0]]",
    ).replace("grid_size = 64", "grid_size = 128")
    path = write_config(
        tmp_path, text + f'\n[output]\ndirectory = "{tmp_path}/out"\n'
    )
    assert main(["sweep-eta", "--config", path, "--eta-count", "8", "--iota", "0.01"]) == EXIT_OK
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert float(summary["symmetry_max_residual"]) < 1e-9


def test_oracle_check_artifacts(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG + f'\n[output]\ndirectory = "{tmp_path}/out"\n'
    )
    assert main(["oracle-check", "--config", path, "--oracle-cutoff", "16"]) == EXIT_OK
    rows = (tmp_path / "out" / "oracle.csv").read_text().splitlines()
    assert rows[0] == "component,abs_diff,rel_diff,allowance,ok"
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert summary["within_allowance"] == "true"
