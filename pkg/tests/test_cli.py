import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bcpinn.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USER, main
from bcpinn.metrics import relative_total_error
from bcpinn.net import load_checkpoint
from bcpinn.oracle import ReferenceSolution, read_reference, write_reference
from bcpinn.pde import allen_cahn
from bcpinn.reports import read_solution_csv
from bcpinn.trainer import predict_grid

TINY_AC = """\
problem:
  kind: AC
network:
  hidden: [6, 6]
seed: 1
schedule:
  segments: 2
  steps_per_segment: 5
  n_initial: 16
  n_boundary: 4
  n_collocation: 30
  adam_iters: 5
lbfgs:
  max_iter: 3
runtime:
  chunk_size: 64
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_AC)
    return path


@pytest.fixture
def tiny_reference(tmp_path):
    x = np.linspace(-1, 1, 16, endpoint=False)
    t = np.linspace(0, 1, 11)
    sol = ReferenceSolution(x, t, np.outer(1 - t, x ** 2 * np.cos(np.pi * x)) + 0.1)
    path = tmp_path / "ref.bin"
    write_reference(sol, path)
    return path


def test_oracle_command(tmp_path, capsys):
    out = tmp_path / "heat.bin"
    code = main(["oracle", "--problem", "CH", "--out", str(out), "--nx", "32", "--dt", "1e-5",
                 "--snapshots", "3", "--T", "2e-4", "--csv", str(tmp_path / "ch.csv")])
    assert code == EXIT_OK
    sol = read_reference(out)
    assert sol.h.shape == (3, 32)
    assert sum(1 for _ in open(tmp_path / "ch.csv")) == 1 + 3 * 32
    assert "wrote" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_oracle_blow_up_is_numerical_failure(tmp_path):
    code = main(["oracle", "--problem", "AC", "--out", str(tmp_path / "x.bin"), "--nx", "64",
                 "--dt", "0.05", "--snapshots", "3", "--T", "1.0", "--integrator", "rk4",
                 "--set", "problem.c1_sq=1.0"])
    assert code == EXIT_NUMERICAL


def test_train_then_eval(tmp_path, tiny_config, tiny_reference):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(run),
                 "--reference", str(tiny_reference), "--times", "0.3"]) == EXIT_OK
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["segments_completed"] == 2
    assert manifest["config"]["network"]["layer_dims"] == [2, 6, 6, 1]
    assert len(manifest["terminations"]) == 2
    assert (run / "checkpoints" / "segment_02.bin").exists()
    rows = list(csv.DictReader(open(run / "log.csv")))
    assert {r["segment"] for r in rows} == {"1", "2"}
    summary = json.loads((run / "eval" / "summary.json").read_text())
    h_pred, h_true = read_solution_csv(run / "eval" / "solution.csv")
    assert relative_total_error(h_pred, h_true) == pytest.approx(summary["epsilon_total"], rel=1e-12)
    assert summary["method"] == "bc" and (run / "eval" / "snapshot_t0.3.csv").exists()

    # eval is pure: a second pass into another directory is byte-identical
    assert main(["eval", str(run), "--reference", str(tiny_reference), "--out", str(tmp_path / "e2"),
                 "--times", "0.3"]) == EXIT_OK
    for f in (run / "eval").iterdir():
        assert (tmp_path / "e2" / f.name).read_bytes() == f.read_bytes()


def test_eval_of_exact_prediction(tmp_path, tiny_config):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(run)]) == EXIT_OK
    params = load_checkpoint(run / "final.bin")
    x = np.linspace(-1, 1, 16, endpoint=False)
    t = np.linspace(0, 1, 11)
    h = predict_grid(params, x, t, allen_cahn().box)[..., 0]
    write_reference(ReferenceSolution(x, t, h), tmp_path / "exact.bin")
    assert main(["eval", str(run), "--reference", str(tmp_path / "exact.bin")]) == EXIT_OK
    assert json.loads((run / "eval" / "summary.json").read_text())["epsilon_total"] == 0.0


def test_train_records_variant_and_method(tmp_path, tiny_config):
    run = tmp_path / "run"
    code = main(["train", "--config", str(tiny_config), "--out", str(run), "--variant", "log-residual",
                 "--method", "standard", "--seed", "4"])
    assert code == EXIT_OK
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["variant"] == "log-residual" and manifest["method"] == "standard"
    assert manifest["seed"] == 4
    assert manifest["config"]["schedule"]["n_max"] == 1
    assert manifest["config"]["schedule"]["adam_iters"] == 10
    assert "--variant" in manifest["argv"]


def test_train_is_reproducible(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()
    assert (tmp_path / "a" / "final.bin").read_bytes() == (tmp_path / "b" / "final.bin").read_bytes()


def test_user_errors(tmp_path, tiny_config, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule:\n  segments: two\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == EXIT_USER
    assert f"{bad}:2: schedule.segments:" in capsys.readouterr().err
    assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert main(["eval", str(tmp_path / "r"), "--reference", str(tmp_path / "none.bin")]) == EXIT_USER
    assert "not found" in capsys.readouterr().err
    assert main(["eval", str(tmp_path), "--reference", str(tmp_path / "none.bin")]) == EXIT_USER
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"junk")
    assert main(["eval", str(tmp_path / "r"), "--reference", str(junk)]) == EXIT_USER
    assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "r"),
                 "--set", "nonsense"]) == EXIT_USER


def test_worker_env_validation(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("BCPINN_WORKERS", "zero")
    assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "r")]) == EXIT_USER
    monkeypatch.setenv("BCPINN_WORKERS", "2")
    assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "r")]) == EXIT_OK
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["status"] == "ok"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_exits_numerical(tmp_path, tiny_config):
    code = main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "r"),
                 "--set", "adam.lr=1.0e+300"])
    assert code == EXIT_NUMERICAL
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["status"] == "aborted"


def test_sweep_command(tmp_path):
    x = np.linspace(-1, 1, 16, endpoint=False)
    t = 0.005 * np.arange(51)
    write_reference(ReferenceSolution(x, t, np.tile(np.cos(np.pi * x), (51, 1))), tmp_path / "ch.bin")
    code = main(["sweep", "--reference", str(tmp_path / "ch.bin"), "--out", str(tmp_path / "sw"),
                 "--total-steps", "50", "--collocation-scale", "0.002", "--iteration-scale", "0.0005",
                 "--lbfgs-iters", "1", "--models", "A,E", "--set", "network.hidden=[4]"])
    assert code == EXIT_OK
    assert sum(1 for _ in open(tmp_path / "sw" / "sweep.csv")) == 3
    assert main(["sweep", "--reference", str(tmp_path / "ch.bin"), "--out", str(tmp_path / "sw"),
                 "--models", "Z"]) == EXIT_USER


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bcpinn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("oracle", "train", "eval", "sweep"):
        assert cmd in out.stdout
