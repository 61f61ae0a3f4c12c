import json

import numpy as np
import pytest

from labelloop.config import config_from_dict, load_config
from labelloop.data import SceneSpec, ShiftSpec, generate_dataset
from labelloop.model import ModelParams
from labelloop.pipeline import (
    Splits,
    confusion_matrix,
    derive_seed,
    evaluate,
    iou_from_confusion,
    pretrain,
    run_experiment,
)


def hand_iou(confusion):
    """Row/column walk over the matrix, independent of the vectorized path."""
    k = len(confusion)
    per_class = []
    for c in range(k):
        tp = confusion[c][c]
        fn = sum(confusion[c][j] for j in range(k)) - tp
        fp = sum(confusion[i][c] for i in range(k)) - tp
        union = tp + fp + fn
        per_class.append(None if union == 0 else tp / union)
    included = [v for v in per_class if v is not None]
    return per_class, sum(included) / len(included)


def test_iou_identical_prediction():
    gt = np.array([[0, 1], [2, 1]], dtype=np.uint8)
    confusion = confusion_matrix(gt, gt, 3)
    per_class, miou = iou_from_confusion(confusion)
    assert per_class == [1.0, 1.0, 1.0]
    assert miou == 1.0


def test_iou_fully_disjoint_prediction():
    gt = np.zeros((2, 2), dtype=np.uint8)
    pred = np.ones((2, 2), dtype=np.uint8)
    _, miou = iou_from_confusion(confusion_matrix(pred, gt, 2))
    assert miou == 0.0


def test_iou_two_class_fixture():
    confusion = np.array([[2, 1], [0, 1]], dtype=np.int64)
    per_class, miou = iou_from_confusion(confusion)
    np.testing.assert_allclose(per_class[0], 2 / 3, atol=1e-9)
    np.testing.assert_allclose(per_class[1], 1 / 2, atol=1e-9)
    np.testing.assert_allclose(miou, 0.583333333, atol=1e-6)
    expected_classes, expected_miou = hand_iou([[2, 1], [0, 1]])
    np.testing.assert_allclose(per_class, expected_classes)
    np.testing.assert_allclose(miou, expected_miou)


def test_iou_absent_class_excluded():
    # class 2 never appears in gt or prediction: excluded from the mean
    confusion = np.array([[3, 0, 0], [1, 2, 0], [0, 0, 0]], dtype=np.int64)
    per_class, miou = iou_from_confusion(confusion)
    assert per_class[2] is None
    np.testing.assert_allclose(miou, (3 / 4 + 2 / 3) / 2, atol=1e-9)


def test_confusion_matrix_random_agreement_with_loops():
    rng = np.random.default_rng(0)
    for _ in range(10):
        gt = rng.integers(0, 4, size=(6, 6)).astype(np.uint8)
        pred = rng.integers(0, 4, size=(6, 6)).astype(np.uint8)
        fast = confusion_matrix(pred, gt, 4)
        slow = np.zeros((4, 4), dtype=np.int64)
        for y in range(6):
            for x in range(6):
                slow[gt[y, x], pred[y, x]] += 1
        np.testing.assert_array_equal(fast, slow)


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    spec = SceneSpec(width=16, height=16, seed=5, shift=ShiftSpec(
        hue_shift=25.0, brightness_delta=-0.12, noise_sigma=0.05, texture_scale=1.5))
    generate_dataset(spec, {
        "source_train": 6, "source_val": 4, "target_train": 6, "target_val": 4,
    }, root)
    return root


def tiny_config(root, out, strategy="SPL", seed=0, **extra):
    values = {
        "strategy": strategy,
        "stages": 2,
        "seed": seed,
        "out_dir": str(out),
        "data": {"root": str(root), "width": 16, "height": 16,
                 "counts": {"source_train": 6, "source_val": 4, "target_train": 6, "target_val": 4}},
        "epochs": {"pretrain": 2, "self_train": 1, "discrepancy": 1, "retrain": 2},
    }
    values.update(extra)
    return config_from_dict(values)


def test_pretrain_zero_epochs_returns_init(tiny_root, tmp_path):
    config = tiny_config(tiny_root, tmp_path, epochs={
        "pretrain": 0, "self_train": 1, "discrepancy": 1, "retrain": 1})
    splits = Splits.load(tiny_root)
    params = pretrain(config, splits)
    fresh = ModelParams.initialize(splits.num_classes, derive_seed(config.seed, "init"))
    for a, b in zip(params.parameters(), fresh.parameters()):
        np.testing.assert_array_equal(a.value, b.value)


def test_run_experiment_spl_structure(tiny_root, tmp_path):
    summary = run_experiment(tiny_config(tiny_root, tmp_path / "r"))
    assert summary["strategy"] == "SPL"
    assert len(summary["stages"]) == 2
    budgets = [s["budget"]["cumulative_pixels"] for s in summary["stages"]]
    assert budgets[1] >= budgets[0]
    fractions = [s["budget"]["cumulative_fraction"] for s in summary["stages"]]
    assert fractions == sorted(fractions)
    for record in summary["stages"]:
        assert 0.0 <= record["miou"] <= 1.0
        for iou in record["per_class_iou"]:
            assert iou is None or 0.0 <= iou <= 1.0

    run_dir = tmp_path / "r" / "SPL_seed0"
    for name in ("summary.json", "config.json", "pretrain.bin", "stage1.bin",
                 "stage2.bin", "stage1.json", "stage2.json", "train_log.jsonl"):
        assert (run_dir / name).exists(), name
    record = json.loads((run_dir / "train_log.jsonl").read_text().splitlines()[0])
    assert set(record) == {"stage", "step", "loss", "value"}
    # selection dumps decode to the annotated pixels of stage 1
    dumps = sorted((run_dir / "selections" / "stage1").glob("*.json"))
    assert len(dumps) == 6
    first = json.loads(dumps[0].read_text())
    assert first["strategy"] == "SPL"
    assert all(len(pt) == 2 for pt in first["points"])


def test_run_experiment_deterministic(tiny_root, tmp_path):
    config = tiny_config(tiny_root, tmp_path, strategy="RAND", seed=3)
    summary_path = tmp_path / "RAND_seed3" / "summary.json"
    a = run_experiment(config)
    bytes_a = summary_path.read_bytes()
    b = run_experiment(tiny_config(tiny_root, tmp_path, strategy="RAND", seed=3))
    assert a == b
    assert bytes_a == summary_path.read_bytes()


def test_source_only_is_noop(tiny_root, tmp_path):
    summary = run_experiment(tiny_config(tiny_root, tmp_path, strategy="SOURCE_ONLY"))
    mious = [s["miou"] for s in summary["stages"]]
    assert mious[0] == summary["pretrain"]["target_val"]["miou"]
    assert mious[0] == mious[1]
    assert all(s["budget"]["cumulative_pixels"] == 0 for s in summary["stages"])


def test_supervised_uses_dense_labels(tiny_root, tmp_path):
    summary = run_experiment(tiny_config(tiny_root, tmp_path, strategy="SUPERVISED"))
    first = summary["stages"][0]["budget"]
    assert first["cumulative_fraction"] == 1.0
    assert summary["stages"][1]["budget"]["new_pixels"] == 0


def test_ppl_budget_bounded_by_classes(tiny_root, tmp_path):
    summary = run_experiment(tiny_config(tiny_root, tmp_path, strategy="PPL_best"))
    for record in summary["stages"]:
        assert record["budget"]["mean_points_per_image"] <= 5 * record["stage"]


def test_score_baselines_run_in_both_budget_modes(tiny_root, tmp_path):
    for strategy, mode in (("SCONF", "point"), ("ENT", "segment")):
        summary = run_experiment(tiny_config(
            tiny_root, tmp_path / mode, strategy=strategy,
            budgets={"segment_fraction": 0.01, "points_per_stage": 4, "baseline_mode": mode}))
        per_stage = 4 if mode == "point" else int(np.ceil(0.01 * 16 * 16))
        first = summary["stages"][0]["budget"]
        assert first["new_pixels"] == per_stage * 6
        # re-selections are excluded, so the budget is spent on fresh pixels
        second = summary["stages"][1]["budget"]
        assert second["cumulative_pixels"] == second["new_pixels"] + first["new_pixels"]


def test_rerun_from_echoed_config_reproduces(tiny_root, tmp_path):
    config = tiny_config(tiny_root, tmp_path, strategy="PPL_worst", seed=2)
    first = run_experiment(config)
    echoed = tmp_path / "PPL_worst_seed2" / "config.json"
    again = run_experiment(load_config(echoed))
    assert first == again


def test_pretrain_checkpoint_reuse(tiny_root, tmp_path):
    base = run_experiment(tiny_config(tiny_root, tmp_path / "base", strategy="SOURCE_ONLY"))
    ckpt = tmp_path / "base" / "SOURCE_ONLY_seed0" / "pretrain.bin"
    reused = run_experiment(tiny_config(
        tiny_root, tmp_path / "reuse", strategy="SOURCE_ONLY",
        pretrained_checkpoint=str(ckpt)))
    assert reused["pretrain"] == base["pretrain"]
    assert reused["stages"][0]["miou"] == base["stages"][0]["miou"]
