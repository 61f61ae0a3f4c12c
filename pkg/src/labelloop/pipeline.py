"""End-to-end loop: source pretraining, per-stage selector training and
selection, oracle annotation, sparse retraining, and mIoU evaluation.

Every phase draws its randomness from a seed derived from (config seed,
stage, phase name), so identical configs reproduce byte-identical artifacts.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as datamod
from . import losses, model as mdl, selection
from .config import RunConfig, write_effective_config
from .numerics import IGNORE
from .oracle import AnnotationStore, Provenance, reveal


def derive_seed(*parts) -> int:
    """Stable cross-process seed from a tuple of labels."""
    digest = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class TrainLog:
    """Buffered line-delimited JSON training log; one record per logged step."""

    def __init__(self, path, log_every: int = 1):
        self.path = Path(path)
        self.log_every = log_every
        self._lines: list[str] = []
        self._step = 0
        self._mode = "w"

    def record(self, stage: int, report: losses.LossReport) -> None:
        self._step += 1
        if self._step % self.log_every == 0:
            self._lines.append(json.dumps(report.record(stage, self._step), sort_keys=True))

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, self._mode) as f:
            for line in self._lines:
                f.write(line + "\n")
        self._mode = "a"
        self._lines.clear()


@dataclass
class Splits:
    source_train: list
    source_val: list
    target_train: list
    target_val: list
    num_classes: int
    width: int
    height: int

    @classmethod
    def load(cls, root) -> "Splits":
        manifest = datamod.load_manifest(root)
        return cls(
            source_train=datamod.load_split(root, "source", "train"),
            source_val=datamod.load_split(root, "source", "val"),
            target_train=datamod.load_split(root, "target", "train"),
            target_val=datamod.load_split(root, "target", "val"),
            num_classes=manifest["num_classes"],
            width=manifest["width"],
            height=manifest["height"],
        )


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """(K, K) counts, rows ground truth, columns prediction; IGNORE gt skipped."""
    valid = gt != IGNORE
    idx = num_classes * gt[valid].astype(np.int64) + pred[valid].astype(np.int64)
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_from_confusion(confusion: np.ndarray) -> tuple[list, float]:
    """Per-class IoU (None where the class is absent from gt and prediction)."""
    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - np.diag(confusion)
    per_class = []
    included = []
    for k in range(confusion.shape[0]):
        if union[k] == 0:
            per_class.append(None)
        else:
            iou = float(tp[k] / union[k])
            per_class.append(iou)
            included.append(iou)
    miou = float(np.mean(included)) if included else 0.0
    return per_class, miou


def evaluate(params: mdl.ModelParams, samples: list, num_classes: int) -> dict:
    """Confusion-matrix mIoU of the first head over (id, image, labels) samples."""
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for _, image, labels in samples:
        pred = mdl.forward(params, image).probs[0].argmax(axis=0)
        confusion += confusion_matrix(pred, labels, num_classes)
    per_class, miou = iou_from_confusion(confusion)
    return {"per_class_iou": per_class, "miou": miou}


def _epoch_order(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def pretrain(config: RunConfig, splits: Splits, log: TrainLog | None = None) -> mdl.ModelParams:
    """Train the task model on the labeled source split from a seeded init."""
    params = mdl.ModelParams.initialize(splits.num_classes, derive_seed(config.seed, "init"))
    lr, momentum = config.optim.task_lr, config.optim.momentum
    for epoch in range(config.epochs.pretrain):
        order = _epoch_order(len(splits.source_train), derive_seed(config.seed, "pretrain", epoch))
        for i in order:
            _, image, labels = splits.source_train[i]
            pred = mdl.forward(params, image)
            report, dlogits = losses.loss_source(pred.probs[0], labels)
            params.zero_grads()
            mdl.backward(params, pred, [dlogits])
            mdl.sgd_step(params, lr, momentum)
            if log:
                log.record(0, report)
    return params


def _train_selector(selector: mdl.ModelParams, pseudo: dict, splits: Splits,
                    stage: int, config: RunConfig, log: TrainLog | None) -> None:
    lr, momentum = config.optim.selector_lr, config.optim.momentum
    samples = splits.target_train
    for epoch in range(config.epochs.self_train):
        order = _epoch_order(len(samples), derive_seed(config.seed, "self", stage, epoch))
        for i in order:
            image_id, image, _ = samples[i]
            report, pred = losses.loss_self(selector, image, pseudo[image_id])
            mdl.sgd_step(selector, lr, momentum)
            selector.zero_grads()
            if log:
                log.record(stage, report)

    selector.reset_momentum()
    for epoch in range(config.epochs.discrepancy):
        order = _epoch_order(len(samples), derive_seed(config.seed, "dis", stage, epoch))
        for i in order:
            _, image, _ = samples[i]
            losses.discrepancy_minmax_round(
                selector, image, config.inner_max_steps, lr, momentum
            )
            if log:
                value = losses.discrepancy_value(*mdl.forward(selector, image).probs)
                log.record(stage, losses.LossReport("L_dis", value, image.shape[1] * image.shape[2]))


def _segment_budget(config: RunConfig, splits: Splits) -> int:
    return int(np.ceil(config.budgets.segment_fraction * splits.width * splits.height))


def _select_for_image(strategy: str, mask, task_probs, exclude, stage_rng, config, splits):
    """Returns the pixels this strategy wants labeled (bool mask or point list)."""
    if strategy == "SPL":
        return selection.select_spl(mask)
    if strategy in ("PPL_best", "PPL_worst"):
        return selection.select_ppl(mask, task_probs, variant=strategy.split("_")[1])
    if strategy in ("SCONF", "ENT", "RAND"):
        if config.budgets.baseline_mode == "segment":
            budget = _segment_budget(config, splits)
        else:
            budget = config.budgets.points_per_stage
        score = None
        if strategy == "SCONF":
            score = selection.score_sconf(task_probs)
        elif strategy == "ENT":
            score = selection.score_entropy(task_probs)
        return selection.select_budgeted(score, budget, exclude, rng=stage_rng)
    raise ValueError(f"strategy {strategy} does not select pixels")


def points_of(where) -> set:
    if isinstance(where, np.ndarray):
        ys, xs = np.nonzero(where)
        return {(int(x), int(y)) for x, y in zip(xs, ys)}
    return set(where)


def _retrain_task(task: mdl.ModelParams, labels_by_id: dict, splits: Splits,
                  stage: int, config: RunConfig, log: TrainLog | None) -> None:
    lr = config.optim.retrain_lr if config.optim.retrain_lr is not None else config.optim.task_lr
    momentum = config.optim.momentum
    task.reset_momentum()
    samples = splits.target_train
    for epoch in range(config.epochs.retrain):
        order = _epoch_order(len(samples), derive_seed(config.seed, "retrain", stage, epoch))
        for i in order:
            image_id, image, _ = samples[i]
            annotations = labels_by_id[image_id]
            pred = mdl.forward(task, image)
            report, dlogits = losses.loss_target_sparse(pred.probs[0], annotations)
            if config.lambda_ent > 0:
                ent_report, ent_dlogits = losses.loss_entropy_reg(
                    pred.probs[0], annotations, weight=config.lambda_ent
                )
                dlogits = dlogits + ent_dlogits
                if log:
                    log.record(stage, ent_report)
            task.zero_grads()
            mdl.backward(task, pred, [dlogits])
            mdl.sgd_step(task, lr, momentum)
            if log:
                log.record(stage, report)


@dataclass
class StageRecord:
    stage: int
    strategy: str
    per_class_iou: list
    miou: float
    budget: dict
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "strategy": self.strategy,
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "budget": self.budget,
            "checkpoint": self.checkpoint,
        }


def compute_stage_selection(
    task: mdl.ModelParams,
    store: AnnotationStore,
    stage: int,
    config: RunConfig,
    splits: Splits,
    log: TrainLog | None = None,
) -> dict[str, np.ndarray | list]:
    """Selector training plus per-image selection (bool mask or point list).

    Pixels already in the store are excluded so proposals reference only
    unannotated pixels. The selector is local to this call and discarded.
    """
    selector = mdl.clone_selector(task)
    pseudo = {
        image_id: losses.make_pseudo_labels(mdl.forward(task, image).probs[0], config.tau)
        for image_id, image, _ in splits.target_train
    }
    _train_selector(selector, pseudo, splits, stage, config, log)

    stage_rng = np.random.default_rng(derive_seed(config.seed, "select", stage))
    wheres: dict[str, np.ndarray | list] = {}
    for image_id, image, _ in splits.target_train:
        sel_pred = mdl.forward(selector, image)
        mask = selection.inconsistency_mask(*sel_pred.probs)
        task_probs = mdl.forward(task, image).probs[0]
        exclude = store.labels_for(image_id)
        wheres[image_id] = _select_for_image(
            config.strategy, mask, task_probs, exclude, stage_rng, config, splits
        )
    return wheres


def dump_selection(selection_dir, stage: int, strategy: str, image_id: str, points: set) -> None:
    dump_dir = Path(selection_dir) / f"stage{stage}"
    dump_dir.mkdir(parents=True, exist_ok=True)
    (dump_dir / f"{image_id}.json").write_text(json.dumps({
        "image_id": image_id,
        "stage": stage,
        "strategy": strategy,
        "points": sorted([x, y] for (x, y) in points),
    }, sort_keys=True))


def retrain_task(task: mdl.ModelParams, store: AnnotationStore, stage: int,
                 config: RunConfig, splits: Splits, log: TrainLog | None = None) -> None:
    """Sparse target retraining from the store's current annotation snapshot."""
    labels_by_id = {image_id: store.labels_for(image_id) for image_id, _, _ in splits.target_train}
    _retrain_task(task, labels_by_id, splits, stage, config, log)


def run_stage(
    task: mdl.ModelParams,
    store: AnnotationStore,
    stage: int,
    config: RunConfig,
    splits: Splits,
    log: TrainLog | None = None,
    selection_dir=None,
) -> StageRecord:
    """One full loop stage; mutates `task` and `store` in place."""
    strategy = config.strategy
    size = (splits.width, splits.height)
    selections: dict[str, set] = {}
    prior: dict[str, set] = {}

    if strategy == "SOURCE_ONLY":
        selections = {image_id: set() for image_id, _, _ in splits.target_train}
    elif strategy == "SUPERVISED":
        for image_id, _, gt in splits.target_train:
            prior[image_id] = store.annotated_points(image_id)
            full = np.ones_like(gt, dtype=bool)
            selections[image_id] = points_of(full)
            store.merge(image_id, gt.copy(), Provenance(stage, strategy, "simulated", ""))
    else:
        wheres = compute_stage_selection(task, store, stage, config, splits, log)
        gt_by_id = {image_id: gt for image_id, _, gt in splits.target_train}
        for image_id, where in wheres.items():
            prior[image_id] = store.annotated_points(image_id)
            selections[image_id] = points_of(where)
            sparse = reveal(gt_by_id[image_id], where)
            store.merge(image_id, sparse, Provenance(stage, strategy, "simulated", ""))
            if selection_dir is not None:
                dump_selection(selection_dir, stage, strategy, image_id, selections[image_id])

    budget = selection.selection_report(stage, strategy, selections, prior, size)

    if strategy != "SOURCE_ONLY":
        retrain_task(task, store, stage, config, splits, log)

    result = evaluate(task, splits.target_val, splits.num_classes)
    return StageRecord(stage, strategy, result["per_class_iou"], result["miou"], budget)


def run_experiment(config: RunConfig) -> dict:
    """Full seeded run; writes summary.json, per-stage records, checkpoints, logs."""
    root = config.data.resolve_root()
    splits = Splits.load(root)
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, run_dir)
    log = TrainLog(run_dir / "train_log.jsonl", config.log_every)

    if config.pretrained_checkpoint:
        task = mdl.load_checkpoint(config.pretrained_checkpoint)
    else:
        task = pretrain(config, splits, log)
    mdl.save_checkpoint(task, run_dir / "pretrain.bin")
    pretrain_eval = {
        "source_val": evaluate(task, splits.source_val, splits.num_classes),
        "target_val": evaluate(task, splits.target_val, splits.num_classes),
    }

    store = AnnotationStore(splits.width, splits.height, splits.num_classes)
    records = []
    for stage in range(1, config.stages + 1):
        record = run_stage(task, store, stage, config, splits, log, run_dir / "selections")
        ckpt = run_dir / f"stage{stage}.bin"
        mdl.save_checkpoint(task, ckpt)
        record.checkpoint = ckpt.name
        (run_dir / f"stage{stage}.json").write_text(
            json.dumps(record.to_dict(), sort_keys=True, indent=1)
        )
        records.append(record)
        log.flush()

    store.save(run_dir / "annotations")
    summary = {
        "run_id": config.resolved_run_id(),
        "strategy": config.strategy,
        "seed": config.seed,
        "pretrain": pretrain_eval,
        "stages": [r.to_dict() for r in records],
        "final_miou": records[-1].miou if records else None,
        "config": config.to_dict(),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    log.flush()
    return summary
