"""CLI behavior: exit codes, option precedence, reproducibility, pipeline."""

import json

import numpy as np
import pytest

from nodgames import __version__
from nodgames.cli import main
from nodgames.opinions import (
    NODParams,
    Topology,
    load_params,
    save_params,
)


def _run(argv, capsys=None):
    code = main(argv)
    return code


def _params_file(tmp_path):
    topo = Topology(2, (2, 1))
    params = NODParams.zero_coupling(topo, attention=2.0)
    path = tmp_path / "params.json"
    save_params(params, path)
    return path


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_missing_required_flag_exits_2(tmp_path, capsys):
    assert main(["train", "--out-dir", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_input_file_exits_2(tmp_path, capsys):
    code = main(["analyze", "--params", str(tmp_path / "nope.json"),
                 "--out-dir", str(tmp_path)])
    assert code == 2


def test_bad_trial_count_exits_2(tmp_path):
    assert main(["trials", "--n", "0", "--out-dir", str(tmp_path)]) == 2
    assert main(["trials", "--workers", "0", "--out-dir", str(tmp_path)]) == 2


def test_analyze_writes_report_and_spectrum(tmp_path, capsys):
    pfile = _params_file(tmp_path)
    code = main(["analyze", "--params", str(pfile), "--seed", "5",
                 "--spectrum-csv", "spec.csv", "--out-dir", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "bifurcation.json").read_text())
    assert doc["meta"]["tool_version"] == __version__
    assert doc["meta"]["seed"] == 5
    assert "eigenvalues" in doc["report"]
    lines = (tmp_path / "spec.csv").read_text().strip().splitlines()
    assert lines[0] == "index,real,imag"
    assert len(lines) == 1 + len(doc["report"]["eigenvalues"])


def test_analyze_does_not_mutate_input(tmp_path):
    pfile = _params_file(tmp_path)
    before = pfile.read_bytes()
    assert main(["analyze", "--params", str(pfile),
                 "--out-dir", str(tmp_path)]) == 0
    assert pfile.read_bytes() == before


def test_analyze_deterministic(tmp_path):
    pfile = _params_file(tmp_path)
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        assert main(["analyze", "--params", str(pfile),
                     "--out-dir", str(tmp_path / d)]) == 0
    assert ((tmp_path / "a" / "bifurcation.json").read_bytes()
            == (tmp_path / "b" / "bifurcation.json").read_bytes())


def test_gen_data_reproducible_and_seed_sensitive(tmp_path):
    base = ["gen-data", "--game", "line", "--episodes", "2", "--steps", "2"]
    for d in ("a", "b", "c"):
        (tmp_path / d).mkdir()
    assert main(base + ["--seed", "3", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(base + ["--seed", "3", "--out-dir", str(tmp_path / "b")]) == 0
    assert main(base + ["--seed", "4", "--out-dir", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "dataset.json").read_bytes()
    assert a == (tmp_path / "b" / "dataset.json").read_bytes()
    assert a != (tmp_path / "c" / "dataset.json").read_bytes()


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen-data": {
        "game": "line", "episodes": 2, "steps": 2, "seed": 3,
        "out": "from_file.json"}}))
    assert main(["gen-data", "--config", str(cfg), "--episodes", "1",
                 "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "from_file.json").read_text())
    assert len(doc["episodes"]) == 1  # flag beat the file's 2


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen-data": {"bogus-knob": 1}}))
    assert main(["gen-data", "--config", str(cfg),
                 "--out-dir", str(tmp_path)]) == 2
    assert "bogus-knob" in capsys.readouterr().err


def test_out_dir_env_override(tmp_path, monkeypatch):
    pfile = _params_file(tmp_path)
    target = tmp_path / "via_env"
    monkeypatch.setenv("NODGAMES_OUT_DIR", str(target))
    assert main(["analyze", "--params", str(pfile)]) == 0
    assert (target / "bifurcation.json").exists()


def test_race_emits_log_and_summary(tmp_path):
    code = main(["race", "--steps", "6", "--seed", "2", "--horizon", "8",
                 "--max-iterations", "2", "--out-dir", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "race_log.csv").read_text().splitlines()
    assert lines[0].startswith("# tool_version=")
    assert lines[1].split(",")[:2] == ["t", "x0"]
    summary = json.loads((tmp_path / "race_summary.json").read_text())
    assert summary["steps"] <= 6
    assert summary["reason"] in ("time-limit", "collision", "off-track")


def test_trials_fixed_seed_byte_identical(tmp_path):
    base = ["trials", "--n", "1", "--seed", "9", "--step-limit", "5",
            "--horizon", "8", "--max-iterations", "2"]
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        assert main(base + ["--out-dir", str(tmp_path / d)]) == 0
    for name in ("trials.csv", "metrics.json"):
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes())
    doc = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert doc["n_trial"] == 1
    assert doc["meta"]["seed"] == 9


def test_trials_workers_do_not_change_results(tmp_path):
    base = ["trials", "--n", "2", "--seed", "4", "--step-limit", "5",
            "--horizon", "8", "--max-iterations", "2"]
    for d, w in (("w1", "1"), ("w2", "2")):
        (tmp_path / d).mkdir()
        assert main(base + ["--workers", w, "--out-dir", str(tmp_path / d)]) == 0
    rows1 = (tmp_path / "w1" / "trials.csv").read_text().splitlines()[1:]
    rows2 = (tmp_path / "w2" / "trials.csv").read_text().splitlines()[1:]
    assert rows1 == rows2


def test_endurance_writes_summary(tmp_path):
    code = main(["endurance", "--ego", "centerline", "--steps", "80",
                 "--respawn-gap", "40", "--out-dir", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "endurance.json").read_text())
    assert doc["steps"] <= 80
    assert doc["overtakes"] >= 0 and doc["collisions"] >= 0


def test_neural_ego_requires_weights(tmp_path, capsys):
    assert main(["race", "--ego", "nod", "--out-dir", str(tmp_path)]) == 2


def test_pipeline_line_game_train_smoke(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--game", "line", "--episodes", "2",
                 "--steps", "2", "--seed", "1", "--out-dir", out]) == 0
    assert main(["train", "--data", str(tmp_path / "dataset.json"),
                 "--game", "line", "--epochs", "1", "--batch-size", "2",
                 "--hidden", "4", "--horizon", "5", "--seed", "1",
                 "--out-dir", out]) == 0
    weights = json.loads((tmp_path / "weights.json").read_text())
    assert weights["controller"] == "nod" and weights["game"] == "line"
    report = json.loads((tmp_path / "train_report.json").read_text())
    assert len(report["losses"]) == 1
    # trained parameters round-trip through the documented schema
    params = load_params(tmp_path / "nod_params.json")
    assert params.topology.num_agents == 2
    assert np.all(np.asarray(params.damping) > 0)


def test_mlp_ig_training_via_cli(tmp_path):
    out = str(tmp_path)
    assert main(["gen-data", "--game", "line", "--episodes", "2",
                 "--steps", "2", "--seed", "1", "--out-dir", out]) == 0
    assert main(["train", "--data", str(tmp_path / "dataset.json"),
                 "--game", "line", "--controller", "mlp-ig", "--epochs", "1",
                 "--batch-size", "2", "--hidden", "4", "--horizon", "5",
                 "--out-dir", out]) == 0
    weights = json.loads((tmp_path / "weights.json").read_text())
    assert weights["controller"] == "mlp-ig"
    assert len(weights["weights"]) == 1
