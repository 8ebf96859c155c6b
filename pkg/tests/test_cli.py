import csv
import json
import os

import pytest

from slowfast.cli import EXIT_BLOWUP, EXIT_INVALID, _exit_code, main
from slowfast.config import RunConfig
from slowfast.experiments import Check, ExperimentReport

QUICK = ["--T", "0.1", "--paths", "4", "--set", "experiment.bootstrap=50", "--no-plots",
         "--quiet"]


def _read(d, name):
    with open(os.path.join(d, name), "rb") as fh:
        return fh.read()


def test_validate_exit_zero(tmp_path):
    assert main(["validate", "--model", "cubic-gl", "--budget", "2000", "--out",
                 str(tmp_path), "--quiet"]) == 0
    rep = json.loads(_read(tmp_path, "report.json"))
    assert all(c["passed"] for c in rep["checks"])


def test_simulate_zero_state_gives_zero_csv(tmp_path):
    assert main(["simulate", "--model", "deterministic-cubic", "--x0", "zero", "--y0", "zero",
                 "--out", str(tmp_path)] + QUICK) == 0
    with open(tmp_path / "trajectory.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert all(float(v) == 0 for r in rows for k, v in r.items() 
               if k[1:].isdigit() or k == "sup_norm")


def test_converge_twice_is_byte_identical(tmp_path):
    args = ["converge", "--model", "linear", "--eps", "0.1,0.01,0.001", "--seed", "42"] + QUICK
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("errors.csv", "summary.csv", "exceedance.csv"):
        assert _read(tmp_path / "a", name) == _read(tmp_path / "b", name)
    man = json.loads(_read(tmp_path / "a", "manifest.json"))
    assert man["master_seed"] == 42 and set(man["outputs"]) >= {"errors.csv", "report.json"}


def test_replay_reproduces_csvs(tmp_path, capsys):
    assert main(["mix", "--model", "cubic-gl", "--set", "experiment.mixing_pairs=20",
                 "--out", str(tmp_path)] + QUICK) == 0
    assert main(["replay", str(tmp_path / "manifest.json"), "--no-plots"]) == 0
    assert "identical  distance.csv" in capsys.readouterr().out


def test_replay_detects_tampered_outputs(tmp_path):
    assert main(["mix", "--set", "experiment.mixing_pairs=20", "--out", str(tmp_path)]
                + QUICK) == 0
    man = json.loads(_read(tmp_path, "manifest.json"))
    man["outputs"]["distance.csv"] = "0" * 64
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    assert main(["replay", str(tmp_path / "manifest.json"), "--quiet", "--no-plots"]) == 1


def test_plots_are_written(tmp_path):
    args = ["converge", "--model", "linear", "--eps", "0.1,0.01", "--T", "0.1", "--paths", "4",
            "--set", "experiment.bootstrap=50", "--quiet", "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "convergence.png").stat().st_size > 1000
    assert "convergence.png" in json.loads(_read(tmp_path, "manifest.json"))["outputs"]


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SLOWFAST_OUTPUT_DIR", str(tmp_path))
    assert main(["simulate", "--model", "deterministic-cubic"] + QUICK) == 0
    assert (tmp_path / "simulate" / "manifest.json").exists()


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[model]\nname = "linear"\n[experiment]\npaths = 3\n')
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--T", "0.05",
                 "--no-plots", "--quiet"]) == 0
    man = json.loads(_read(out, "manifest.json"))
    assert man["model_name"] == "linear" and man["config"]["experiment"]["paths"] == 3


@pytest.mark.parametrize("args,msg", [
    (["--paths", "3", "--set", "experiment.paths=4"], "conflicting flags"),
    (["--set", "solver.hh=1"], "unknown key"),
    (["--set", "nonsense"], "BLOCK.KEY=VALUE"),
    (["--workers", "0"], "workers"),
])
def test_bad_flags_exit_two(args, msg, tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)] + args) == EXIT_INVALID
    assert msg in capsys.readouterr().err


def test_malformed_config_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[solver]\nh = = 1\nT = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_INVALID
    assert "line" in capsys.readouterr().err


def test_unknown_model_is_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--model", "nope"])
    assert exc.value.code == 2


def test_blow_up_dominated_exit_three(tmp_path):
    assert main(["simulate", "--set", "solver.truncation_radius=1.5", "--set",
                 "noise.f_slow=3.0", "--T", "0.5", "--paths", "8", "--out", str(tmp_path),
                 "--no-plots", "--quiet"]) == EXIT_BLOWUP


def test_failed_validation_maps_to_exit_two():
    rep = ExperimentReport("validate", RunConfig().to_dict(), "", 0,
                           checks=[Check("A4d", "x <= 0", 1.0, 0.0, False, "witness")])
    assert _exit_code(rep) == EXIT_INVALID
