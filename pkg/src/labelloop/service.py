"""HTTP+JSON API for the live human-in-the-loop mode.

Serves target images and proposed pixels, accepts human labels into the
annotation store, and advances the training stage as a background job. All
writes go through the store and the same pipeline operations the simulated
loop uses, so a human run with identical labels produces identical artifacts.
"""
from __future__ import annotations

import io
import json
import threading
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import data as datamod
from . import model as mdl
from . import pipeline
from .config import RunConfig, write_effective_config
from .netpbm import float_to_image
from .numerics import IGNORE
from .oracle import AnnotationStore, Provenance


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Row-major run lengths alternating unselected/selected, starting unselected."""
    flat = mask.ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = [int(r) for r in np.diff(bounds)]
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_to_mask(runs: list[int], width: int, height: int) -> np.ndarray:
    flat = np.zeros(width * height, dtype=bool)
    pos, value = 0, False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    if pos != width * height:
        raise ValueError(f"run lengths cover {pos} pixels, expected {width * height}")
    return flat.reshape(height, width)


class LiveLoop:
    """Server-side state: dataset, task model, store, and stage proposals."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.splits = pipeline.Splits.load(config.data.resolve_root())
        self.manifest = datamod.load_manifest(config.data.resolve_root())
        self.run_dir = config.run_dir()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        write_effective_config(config, self.run_dir)
        self.log = pipeline.TrainLog(self.run_dir / "train_log.jsonl", config.log_every)

        if config.pretrained_checkpoint:
            self.task = mdl.load_checkpoint(config.pretrained_checkpoint)
        else:
            self.task = pipeline.pretrain(config, self.splits, self.log)
        mdl.save_checkpoint(self.task, self.run_dir / "pretrain.bin")

        self.store = AnnotationStore(self.splits.width, self.splits.height, self.splits.num_classes)
        self.stage = 1
        self.miou_history: list[dict] = []
        self.budget_history: list[dict] = []
        self.proposals: dict[int, dict[str, dict]] = {}
        self._job_lock = threading.Lock()
        self._job: threading.Thread | None = None
        self.running = False
        self.job_error: str | None = None

        self._compute_proposals()
        self.log.flush()

    # -- state transitions ---------------------------------------------------

    def _compute_proposals(self) -> None:
        wheres = pipeline.compute_stage_selection(
            self.task, self.store, self.stage, self.config, self.splits, self.log
        )
        batches = {}
        for image_id, where in wheres.items():
            annotated = self.store.labels_for(image_id) != IGNORE
            batch = {
                "image_id": image_id,
                "stage": self.stage,
                "strategy": self.config.strategy,
                "size": [self.splits.width, self.splits.height],
            }
            if isinstance(where, np.ndarray):
                fresh = where & ~annotated
                batch["mask_rle"] = mask_to_rle(fresh)
                points = pipeline.points_of(fresh)
            else:
                points = {(x, y) for (x, y) in where if not annotated[y, x]}
                batch["points"] = sorted([x, y] for (x, y) in points)
            batches[image_id] = batch
            pipeline.dump_selection(
                self.run_dir / "selections", self.stage, self.config.strategy, image_id, points
            )
        self.proposals[self.stage] = batches

    def advance(self) -> dict:
        with self._job_lock:
            if self.running:
                raise ApiError(409, "stage_running", f"stage {self.stage} is already running")
            self.running = True
            self.job_error = None
            self._job = threading.Thread(target=self._advance_job, daemon=True)
            self._job.start()
        return {"status": "started", "stage": self.stage}

    def _advance_job(self) -> None:
        try:
            stage = self.stage
            pipeline.retrain_task(self.task, self.store, stage, self.config, self.splits, self.log)
            result = pipeline.evaluate(self.task, self.splits.target_val, self.splits.num_classes)
            self.miou_history.append({"stage": stage, "miou": result["miou"]})
            self.budget_history.append(self._budget())
            mdl.save_checkpoint(self.task, self.run_dir / f"stage{stage}.bin")
            self.store.save(self.run_dir / "annotations")
            self.stage = stage + 1
            self._compute_proposals()
            self.log.flush()
        except Exception as exc:  # surfaced through /api/status
            self.job_error = f"{type(exc).__name__}: {exc}"
        finally:
            self.running = False

    # -- read models -----------------------------------------------------------

    def _budget(self) -> dict:
        total = self.store.annotated_count()
        images = len(self.splits.target_train)
        pixels = images * self.splits.width * self.splits.height
        return {
            "annotated_pixels": total,
            "annotated_fraction": total / pixels if pixels else 0.0,
            "mean_points_per_image": total / images if images else 0.0,
        }

    def status(self) -> dict:
        return {
            "stage": self.stage,
            "running": self.running,
            "strategy": self.config.strategy,
            "miou_history": self.miou_history,
            "budget": self._budget(),
            "job_error": self.job_error,
        }

    def image_png(self, image_id: str) -> bytes:
        for iid, image, _ in self.splits.target_train:
            if iid == image_id:
                buf = io.BytesIO()
                Image.fromarray(float_to_image(image), mode="RGB").save(buf, format="PNG")
                return buf.getvalue()
        raise ApiError(404, "unknown_image", f"no target image {image_id!r}")

    def proposals_for(self, image_id: str, stage: int) -> dict:
        if stage not in self.proposals:
            raise ApiError(404, "unknown_stage", f"no proposals computed for stage {stage}")
        batch = self.proposals[stage].get(image_id)
        if batch is None:
            raise ApiError(404, "unknown_image", f"no target image {image_id!r}")
        out = dict(batch)
        out["palette"] = [
            {"id": i, "name": name, "color": color}
            for i, (name, color) in enumerate(
                zip(self.manifest["class_names"], self.manifest["palette"])
            )
        ]
        return out

    def annotate(self, body: dict) -> dict:
        if not isinstance(body, dict) or "image_id" not in body or "labels" not in body:
            raise ApiError(400, "bad_request", "body must carry image_id and labels")
        image_id = body["image_id"]
        if image_id not in {iid for iid, _, _ in self.splits.target_train}:
            raise ApiError(404, "unknown_image", f"no target image {image_id!r}")
        sparse = np.full((self.splits.height, self.splits.width), IGNORE, dtype=np.uint8)
        for entry in body["labels"]:
            try:
                x, y, cls = int(entry["x"]), int(entry["y"]), int(entry["class"])
            except (KeyError, TypeError, ValueError):
                raise ApiError(400, "bad_label", f"malformed label entry {entry!r}")
            if not (0 <= x < self.splits.width and 0 <= y < self.splits.height):
                raise ApiError(400, "bad_label", f"({x}, {y}) outside the image")
            if not 0 <= cls < self.splits.num_classes:
                raise ApiError(400, "bad_label", f"class {cls} out of range")
            sparse[y, x] = cls
        provenance = Provenance(
            stage=self.stage,
            strategy=self.config.strategy,
            source="human",
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        result = self.store.merge(image_id, sparse, provenance)
        return {
            "applied": result.applied,
            "rejected": result.rejected,
            "counts": {
                "image": self.store.annotated_count(image_id),
                "total": self.store.annotated_count(),
            },
        }

    def dataset_info(self) -> dict:
        return {
            "width": self.splits.width,
            "height": self.splits.height,
            "num_classes": self.splits.num_classes,
            "class_names": self.manifest["class_names"],
            "palette": self.manifest["palette"],
            "image_ids": [iid for iid, _, _ in self.splits.target_train],
        }


def create_app(loop: LiveLoop, static_dir=None) -> FastAPI:
    app = FastAPI(title="labelloop-annotation-service")

    @app.exception_handler(ApiError)
    async def api_error_handler(_: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.get("/api/status")
    def status():
        return loop.status()

    @app.get("/api/dataset")
    def dataset():
        return loop.dataset_info()

    @app.get("/api/images/{image_id}")
    def image(image_id: str):
        return Response(content=loop.image_png(image_id), media_type="image/png")

    @app.get("/api/images/{image_id}/proposals")
    def proposals(image_id: str, stage: int | None = None):
        return loop.proposals_for(image_id, loop.stage if stage is None else stage)

    @app.post("/api/annotations")
    async def annotations(request: Request):
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError:
            raise ApiError(400, "bad_request", "body is not valid JSON")
        return loop.annotate(body)

    @app.post("/api/stage/advance")
    def advance():
        return loop.advance()

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
