import json
import logging

import pytest

from mela.cli import main

SMALL = {
    "seed": 1,
    "data": {"C": 10, "C_test": 5, "d": 16, "k": 5, "n": 2, "m": 10, "T": 60, "test_tasks": 20},
    "replearn": {"steps": 60},
    "inference": {"V_init": 20, "q": 2.0},
    "pretrain": {"steps": 100},
    "finetune": {"steps": 30},
    "eval": {"draws": 50, "builder": "ridge"},
    "rate": {"t_grid": [5, 10], "seeds": 2, "steps": 30, "eval_draws": 20},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_run_writes_artifacts(tmp_path, config):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    for name in ("embedding_sim", "clusters", "assignment", "classifier", "embedding_pre",
                 "embedding_final", "report"):
        assert (out / f"{name}.csv").exists()
    rep = _report(out)
    assert set(rep["stages"]) == {"replearn", "infer", "pretrain", "finetune", "evaluate"}
    assert rep["stages"]["evaluate"]["split"] == "test"


def test_run_resume_skips_sweeps(tmp_path, config, caplog):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    first = (out / "report.json").read_bytes()
    with caplog.at_level(logging.INFO, logger="mela"):
        assert main(["run", "--config", str(config), "--out", str(out), "--resume"]) == 0
    assert "labeler ran 0 sweeps" in caplog.text
    rep = _report(out)
    assert rep["stages"]["infer"]["resumed"] is True
    assert rep["stages"]["evaluate"] == json.loads(first)["stages"]["evaluate"]


@pytest.mark.parametrize("cmd", [["simulate"], ["infer-labels"], ["verify-theory"], ["rate-study"],
                                 ["evaluate"]])
def test_subcommands_are_deterministic(tmp_path, config, cmd):
    out = tmp_path / "out"
    args = cmd + ["--config", str(config), "--out", str(out)]
    assert main(args) == 0
    first = (out / "report.json").read_bytes()
    assert main(args) == 0
    assert (out / "report.json").read_bytes() == first


def test_pipeline_subcommands_chain(tmp_path, config):
    base = ["--config", str(config), "--out", str(tmp_path)]
    assert main(["infer-labels"] + base) == 0
    assert main(["domains"] + base) == 0
    assert _report(tmp_path)["num_components"] >= 1
    assert main(["pretrain"] + base) == 0
    assert main(["finetune"] + base) == 0
    assert main(["evaluate", "--embedding", str(tmp_path / "embedding_final.csv")] + base) == 0
    assert 0.0 <= _report(tmp_path)["mean_accuracy"] <= 1.0


def test_simulate_then_infer_from_csv(tmp_path, config):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(config), "--out", str(sim)]) == 0
    assert _report(sim)["train_tasks"] == 60
    out = tmp_path / "inf"
    assert main(["infer-labels", "--config", str(config), "--input", str(sim / "tasks.csv"),
                 "--out", str(out)]) == 0
    assert "clustering_accuracy" in _report(out)


def test_flag_overrides_config(tmp_path, config):
    out = tmp_path / "o"
    assert main(["infer-labels", "--config", str(config), "--out", str(out), "--q", "4.5", "--v-init", "25",
                 "--seed", "3"]) == 0
    rep = _report(out)
    assert rep["config"]["inference"]["q"] == 4.5
    assert rep["config"]["inference"]["V_init"] == 25
    assert rep["seed"] == 3


def test_verify_theory_report(tmp_path, config):
    assert main(["verify-theory", "--config", str(config), "--out", str(tmp_path), "--draws", "40"]) == 0
    rep = _report(tmp_path)
    assert rep["holds"] and rep["pointwise_violations"] == 0
    assert rep["random_classifier"]["pointwise_violations"] == 0


def test_unknown_flag_is_usage_error(config):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", str(config), "--bogus"])
    assert exc.value.code == 2


def test_bad_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"colour": 1}}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "unknown config key" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_rotate_without_grid_is_config_error(tmp_path, config):
    assert main(["infer-labels", "--config", str(config), "--out", str(tmp_path)]) == 0
    assert main(["pretrain", "--config", str(config), "--out", str(tmp_path), "--rotate"]) == 2


def test_corrupt_input_is_reported(tmp_path, config, capsys):
    bad = tmp_path / "tasks.csv"
    bad.write_text("task_id,sample_id,role,local_label,global_label,f0\n0,0,support,0,1\n")
    assert main(["infer-labels", "--config", str(config), "--input", str(bad), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_stage_failure_exit_code(tmp_path, config, capsys):
    cfg = dict(SMALL, inference={"V_init": 500})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "[infer]" in capsys.readouterr().err
