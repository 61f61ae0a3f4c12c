import json

import pytest

from labelloop.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny dataset plus a pretrain checkpoint shared across CLI tests."""
    ws = tmp_path_factory.mktemp("cli")
    config = {
        "stages": 2,
        "data": {
            "root": str(ws / "data"),
            "width": 16,
            "height": 16,
            "seed": 3,
            "counts": {"source_train": 4, "source_val": 3, "target_train": 4, "target_val": 3},
        },
        "epochs": {"pretrain": 2, "self_train": 1, "discrepancy": 1, "retrain": 1},
        "out_dir": str(ws / "results"),
    }
    config_path = ws / "base.json"
    config_path.write_text(json.dumps(config))
    assert main(["gen-data", "--config", str(config_path)]) == 0
    assert main(["pretrain", "--config", str(config_path), "--set", "run_id=pre"]) == 0
    return ws, config_path


def test_gen_data_layout(workspace):
    ws, _ = workspace
    assert (ws / "data" / "dataset.json").exists()
    assert (ws / "data" / "target" / "val" / "images" / "0002.ppm").exists()


def test_pretrain_artifacts(workspace):
    ws, _ = workspace
    run_dir = ws / "results" / "pre"
    assert (run_dir / "pretrain.bin").exists()
    eval_report = json.loads((run_dir / "pretrain_eval.json").read_text())
    assert 0.0 <= eval_report["target_val"]["miou"] <= 1.0


def test_run_subcommand_writes_summary(workspace, capsys):
    ws, config_path = workspace
    code = main(["run", "--config", str(config_path), "--set", "strategy=SPL", "--seed", "5"])
    assert code == 0
    out = capsys.readouterr().out
    assert "stage 2" in out
    summary = json.loads((ws / "results" / "SPL_seed5" / "summary.json").read_text())
    assert summary["seed"] == 5
    echoed = json.loads((ws / "results" / "SPL_seed5" / "config.json").read_text())
    assert echoed["strategy"] == "SPL"
    assert echoed["seed"] == 5


def test_eval_matches_summary(workspace, capsys):
    ws, config_path = workspace
    summary = json.loads((ws / "results" / "SPL_seed5" / "summary.json").read_text())
    ckpt = ws / "results" / "SPL_seed5" / "stage2.bin"
    code = main([
        "eval", "--config", str(config_path), "--checkpoint", str(ckpt),
        "--split", "target/val", "--json-out", str(ws / "eval.json"),
    ])
    assert code == 0
    printed = capsys.readouterr().out
    result = json.loads((ws / "eval.json").read_text())
    assert result["miou"] == summary["stages"][-1]["miou"]
    assert f"{result['miou']:.4f}" in printed


def test_select_one_shot(workspace):
    ws, config_path = workspace
    ckpt = ws / "results" / "pre" / "pretrain.bin"
    code = main([
        "select", "--config", str(config_path), "--checkpoint", str(ckpt),
        "--set", "strategy=PPL_best", "--out", str(ws / "oneshot"),
    ])
    assert code == 0
    dumps = list((ws / "oneshot" / "selections" / "stage1").glob("*.json"))
    assert len(dumps) == 4
    record = json.loads(dumps[0].read_text())
    assert record["strategy"] == "PPL_best"
    assert len(record["points"]) <= 5


def test_unknown_config_key_rejected(tmp_path, capsys):
    code = main(["run", "--set", "no_such_key=1"])
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err


def test_bad_strategy_rejected(capsys):
    code = main(["run", "--set", "strategy=BOGUS"])
    assert code == 2
    assert "strategy" in capsys.readouterr().err


def test_missing_dataset_aborts_with_path(tmp_path, capsys):
    code = main(["run", "--set", f"data.root={tmp_path / 'nope'}"])
    assert code == 2
    assert "nope" in capsys.readouterr().err


def test_grad_check_small(capsys):
    assert main(["grad-check", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "L_dis" in out and "overall" in out
