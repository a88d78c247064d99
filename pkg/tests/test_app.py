import logging

import numpy as np
import pytest

from src import app
from src.app import log_level, main
from src.artifacts.writer import read_rows
from src.family.model_family import family_moments
from src.family.presets import toy_family


TOY = """
[family]
L = 4
rates = [0, 1, 2, 3]
Q_preset = "toy-exp"
noise_scale = 0.1
noise_rate = 3

[cost]
mode = "geometric"
w0 = 0.25
gamma_cost = 2
"""

SYNTHETIC = """
[family]
L = 8
rates = [0, 2, 4]
Q_preset = "toy-exp"
mean = [1, 1, 1]
noise_scale = 0.1
noise_rate = 4

[cost]
mode = "geometric"
w0 = 1e-6
gamma_cost = 6
"""


@pytest.fixture
def run(tmp_path):
    def run(command, text, *extra):
        path = tmp_path / "run.toml"
        path.write_text(text)
        return main([command, "--config", str(path), "--out", str(tmp_path / "out"), *extra])
    return run


def test_moments(run, tmp_path):
    assert run("moments", TOY) == 0
    _, rows = read_rows(tmp_path / "out" / "moments.csv")
    C = family_moments(toy_family()).C
    np.testing.assert_allclose([[float(row[f"C_{j}"]) for j in range(1, 5)] for row in rows], C, rtol=1e-15)
    assert all(float(row["mu"]) == 0.0 for row in rows)


def test_malformed_rates_exit_with_the_field_path(run, capsys):
    assert run("moments", TOY.replace("[0, 1, 2, 3]", "[0, 2, 1, 3]")) == 1
    assert "error=config detail=family.rates" in capsys.readouterr().err


def test_allocate_with_coupling_one(run, tmp_path):
    text = TOY + '\n[[estimators]]\nkind = "saob"\ncoupling = 1\n\n[run]\nbudget = 100\n'
    assert run("allocate", text) == 0
    _, rows = read_rows(tmp_path / "out" / "allocation_saob1.csv")
    assert all(";" not in row["models"] for row in rows)
    _, summary = read_rows(tmp_path / "out" / "allocation_summary.csv")
    assert float(summary[0]["cost_continuous"]) == pytest.approx(100.0)
    assert float(summary[0]["cost_rounded"]) >= 100.0


def test_allocate_needs_a_budget(run, capsys):
    assert run("allocate", TOY + '\n[[estimators]]\nkind = "mlmc"\n') == 1
    assert "run.budget" in capsys.readouterr().err


def test_schemes(run, tmp_path):
    text = TOY + '\n[[estimators]]\nkind = "re"\ncoupling = 3\n\n[[estimators]]\nkind = "saob"\ncoupling = 2\n'
    assert run("schemes", text) == 0
    _, vectors = read_rows(tmp_path / "out" / "re_vectors.csv")
    assert len(vectors) == 3 * 4
    header, _ = read_rows(tmp_path / "out" / "scheme_re3.csv")
    assert header == ["group_id", "models", "beta_1", "beta_2", "beta_3", "beta_4", "sign_changes"]
    assert (tmp_path / "out" / "scheme_saob2.csv").exists()


def test_sweep_with_one_point(run, tmp_path):
    text = SYNTHETIC + '\n[[estimators]]\nkind = "mlmc"\n\n[run]\neps_grid = [1e-3]\n'
    assert run("sweep", text) == 0
    _, records = read_rows(tmp_path / "out" / "sweep.csv")
    _, slopes = read_rows(tmp_path / "out" / "slopes.csv")
    assert len(records) == 1
    assert slopes == []


def test_infeasible_accuracy_exits_with_3(run, capsys):
    text = SYNTHETIC.replace("L = 8", "L = 2") + '\n[[estimators]]\nkind = "mlmc"\n\n[run]\neps = 1e-9\n'
    assert run("sweep", text) == 3
    assert "error=infeasible detail=" in capsys.readouterr().err


def test_convergence(run, tmp_path):
    text = TOY + "\n[run]\nbudget = 100\nell0_range = [0, 2]\ncoupling_range = [2, 3]\n"
    assert run("convergence", text, "--threads", "2") == 0
    header, rows = read_rows(tmp_path / "out" / "convergence.csv")
    assert header == ["ell0", "q", "r_q", "e_q"]
    assert len(rows) == 4


@pytest.mark.slow
def test_convergence_on_the_toy_preset(run, tmp_path):
    assert run("convergence", TOY + "\n[run]\nbudget = 100\n") == 0
    _, rows = read_rows(tmp_path / "out" / "convergence.csv")
    assert len(rows) == 21


def test_simulate_with_explicit_counts(run, tmp_path):
    text = TOY + '\n[[estimators]]\nkind = "mlmc"\n\n[run]\ncounts = [4, 2, 1, 1]\nreplications = 200\n'
    assert run("simulate", text, "--seed", "3") == 0
    header, rows = read_rows(tmp_path / "out" / "simulate.csv")
    assert header[0] == "estimator"
    assert rows[0]["R"] == "200"


def test_simulate_seed_override_is_reproducible(run, tmp_path):
    text = TOY + '\n[[estimators]]\nkind = "saob"\ncoupling = 2\n\n[run]\nbudget = 50\nreplications = 100\n'
    assert run("simulate", text, "--seed", "1") == 0
    first = (tmp_path / "out" / "simulate.csv").read_text()
    assert run("simulate", text, "--seed", "1") == 0
    assert (tmp_path / "out" / "simulate.csv").read_text() == first


def test_bad_thread_count(run, capsys):
    assert run("moments", TOY, "--threads", "0") == 1
    assert "error=config" in capsys.readouterr().err


def test_linear_algebra_failure_exits_with_2(run, capsys, monkeypatch):
    def singular(config, out, threads):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setitem(app.COMMANDS, "moments", singular)
    assert run("moments", TOY) == 2
    assert capsys.readouterr().err.strip() == "error=numerical detail=Singular matrix"


def test_default_log_level_keeps_stderr_to_warnings():
    assert log_level(False) == logging.WARNING
    assert log_level(True) == logging.DEBUG


def test_failure_prints_a_single_stderr_line(run, capsys):
    assert run("allocate", TOY + '\n[[estimators]]\nkind = "mlmc"\n') == 1
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("error=config detail=")
