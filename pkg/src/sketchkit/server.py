"""HTTP recommendation service.

Request flow: strokes arrive in canvas pixels, get normalized, resampled
and rasterized exactly like training data, and the response carries the
top-5 category recommendations plus per-point component labels. Every
recognize call is logged under a request_id; feedback referencing that
id appends a labeled example to the caller's append-only NDJSON store,
and an adapt call turns the accumulated store into a target-domain
dataset for adversarial adaptation, publishing a new per-user model
version on success. The base model is never mutated; version swaps are
atomic and old versions stay available for rollback.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .adapt import DAConfig, adapt, sample_shots
from .checkpoint import load_checkpoint, save_checkpoint
from .data import encode_dataset
from .errors import SketchKitError, ValidationError
from .geometry import Point, Sketch, Stroke, load_sketches
from .model import TwoStreamNet
from .train import TrainConfig

SCHEMA_VERSION = 1
TOPK_SERVED = 5


class RecognizeIn(BaseModel):
    strokes: list[list[list[float]]]
    user_id: str = "default"
    schema_version: int = SCHEMA_VERSION


class FeedbackIn(BaseModel):
    request_id: str
    category_id: int | None = None
    other: bool = False
    user_id: str = "default"
    per_stroke_semantics: list[int] | None = None
    schema_version: int = SCHEMA_VERSION


class AdaptIn(BaseModel):
    user_id: str = "default"
    steps: int | None = None
    schema_version: int = SCHEMA_VERSION


class RollbackIn(BaseModel):
    user_id: str = "default"
    schema_version: int = SCHEMA_VERSION


class NdjsonLog:
    """Append-only NDJSON file; offsets are line indices."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._count = 0
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                self._count = sum(1 for line in fh if line.strip())

    def append(self, obj: dict) -> int:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
            offset = self._count
            self._count += 1
            return offset

    def read_all(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def __len__(self) -> int:
        return self._count


class ModelRegistry:
    """Base model plus per-user version stacks; swaps happen under a lock
    and readers always see a complete (version, model) pair."""

    def __init__(self, base_model: TwoStreamNet | None, train_cfg: TrainConfig):
        self._lock = threading.Lock()
        self.train_cfg = train_cfg
        self._counter = 1
        self._base: tuple[int, TwoStreamNet] | None = (1, base_model) if base_model else None
        self._user: dict[str, list[tuple[int, TwoStreamNet]]] = {}

    @property
    def base_version(self) -> int | None:
        return self._base[0] if self._base else None

    def active(self, user_id: str) -> tuple[int, TwoStreamNet]:
        with self._lock:
            stack = self._user.get(user_id)
            if stack:
                return stack[-1]
            if self._base is None:
                raise HTTPException(503, "no model loaded")
            return self._base

    def publish(self, user_id: str, model: TwoStreamNet) -> int:
        with self._lock:
            self._counter += 1
            self._user.setdefault(user_id, []).append((self._counter, model))
            return self._counter

    def rollback(self, user_id: str) -> int:
        with self._lock:
            stack = self._user.get(user_id)
            if not stack:
                raise HTTPException(409, f"user {user_id!r} has no adapted version to roll back")
            stack.pop()
            if stack:
                return stack[-1][0]
            if self._base is None:
                raise HTTPException(503, "no base model to fall back to")
            return self._base[0]

    def versions(self, user_id: str) -> list[int]:
        with self._lock:
            return [v for v, _ in self._user.get(user_id, [])]


def _sketch_from_strokes(strokes: list[list[list[float]]]) -> Sketch:
    total = 0
    parsed = []
    for si, stroke in enumerate(strokes):
        pts = []
        for p in stroke:
            if len(p) != 2:
                raise HTTPException(422, f"stroke {si}: points must be [x, y] pairs")
            pts.append(Point(float(p[0]), float(p[1])))
        if not pts:
            raise HTTPException(400, f"stroke {si} is empty")
        total += len(pts)
        parsed.append(Stroke(pts))
    if not parsed:
        raise HTTPException(400, "no strokes")
    if total < 2:
        raise HTTPException(400, "need at least 2 points in total")
    return Sketch(parsed)


def create_app(
    model_path: str | Path | None = None,
    store_dir: str | Path | None = None,
    source_pool: str | Path | None = None,
    inline_jobs: bool = False,
    adapt_steps: int = 80,
    adapt_lr: float = 5e-4,
    latency_budget_ms: int = 500,
) -> FastAPI:
    model_path = model_path or os.environ.get("SKETCHKIT_MODEL")
    store_dir = Path(store_dir or os.environ.get("SKETCHKIT_STORE", "serve_store"))
    source_pool = source_pool or os.environ.get("SKETCHKIT_SOURCE_POOL")
    store_dir.mkdir(parents=True, exist_ok=True)

    base_model: TwoStreamNet | None = None
    train_cfg = TrainConfig()
    meta: dict = {}
    if model_path and Path(model_path).exists():
        base_model, meta = load_checkpoint(model_path)
        saved = meta.get("extra", {}).get("train_config")
        if saved:
            train_cfg = TrainConfig(**saved)

    registry = ModelRegistry(base_model, train_cfg)
    request_log = NdjsonLog(store_dir / "requests.ndjson")
    served: dict[str, dict] = {}
    for row in request_log.read_all():
        served[row["request_id"]] = row
    feedback_logs: dict[str, NdjsonLog] = {}
    job_log = NdjsonLog(store_dir / "jobs.ndjson")
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()

    source_sketches = load_sketches(source_pool) if source_pool and Path(source_pool).exists() else []

    def feedback_log(user_id: str) -> NdjsonLog:
        if user_id not in feedback_logs:
            feedback_logs[user_id] = NdjsonLog(store_dir / "feedback" / f"{user_id}.ndjson")
        return feedback_logs[user_id]

    app = FastAPI(title="sketch recognizer")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": registry.base_version is not None}

    @app.post("/v1/recognize")
    def recognize(body: RecognizeIn):
        t0 = time.perf_counter()
        sketch = _sketch_from_strokes(body.strokes)
        version, model = registry.active(body.user_id)
        try:
            ds = encode_dataset([sketch], train_cfg.n_points, train_cfg.render_config(), require_labels=False)
        except SketchKitError as e:
            raise HTTPException(400, str(e)) from e
        import torch

        with torch.no_grad():
            model.eval()
            out = model.forward_batch(
                ds.coords, ds.stroke_ids, ds.images, n_strokes=int(ds.n_strokes.max())
            )
        p_r = out["p_r"][0].numpy()
        order = np.argsort(-p_r, kind="stable")[:TOPK_SERVED]
        names = model.knowledge.category_names
        topk = [
            {
                "category_id": int(c),
                "probability": float(p_r[c]),
                "name": names.get(int(c), str(int(c))),
            }
            for c in order
        ]
        p_pts = out["p_s_final"][0].numpy()
        seg_ids = p_pts.argmax(axis=1)
        gamma_row = out["gamma"][0].numpy()
        gate_applied = not bool(np.allclose(gamma_row, 1.0))
        request_id = uuid.uuid4().hex
        response = {
            "schema_version": SCHEMA_VERSION,
            "request_id": request_id,
            "model_version": version,
            "topk": topk,
            "points": ds.coords[0].numpy().round(6).tolist(),
            "stroke_of_point": ds.stroke_ids[0].tolist(),
            "segmentation": [
                {"semantic_id": int(s), "probability": float(p_pts[i, s])}
                for i, s in enumerate(seg_ids)
            ],
            "gamma": gamma_row.round(6).tolist() if gate_applied else None,
            "elapsed_ms": round(1000 * (time.perf_counter() - t0), 2),
        }
        record = {
            "request_id": request_id,
            "user_id": body.user_id,
            "ts": time.time(),
            "strokes": body.strokes,
            "topk": [t["category_id"] for t in topk],
            "model_version": version,
        }
        try:
            request_log.append(record)
        except OSError as e:
            raise HTTPException(507, f"request log write failed: {e}") from e
        served[request_id] = record
        return response

    @app.post("/v1/feedback")
    def feedback(body: FeedbackIn):
        rec = served.get(body.request_id)
        if rec is None:
            raise HTTPException(404, f"unknown request_id {body.request_id!r}")
        if body.other:
            if body.category_id is not None and body.category_id in rec["topk"]:
                raise HTTPException(400, "'other' conflicts with a top-k category_id")
        else:
            if body.category_id is None:
                raise HTTPException(422, "category_id required unless other=true")
            if body.category_id not in rec["topk"]:
                raise HTTPException(400, f"category {body.category_id} was not in the served top-k")
        if body.per_stroke_semantics is not None and len(body.per_stroke_semantics) != len(rec["strokes"]):
            raise HTTPException(422, "per_stroke_semantics must give one label per stroke")
        row = {
            "request_id": body.request_id,
            "user_id": body.user_id,
            "category_id": body.category_id,
            "other": body.other,
            "per_stroke_semantics": body.per_stroke_semantics,
            "strokes": rec["strokes"],
            "ts": time.time(),
        }
        try:
            offset = feedback_log(body.user_id).append(row)
        except OSError as e:
            raise HTTPException(507, f"feedback store write failed: {e}") from e
        return {"schema_version": SCHEMA_VERSION, "status": "recorded", "count": offset + 1}

    def _run_adapt(user_id: str, steps: int) -> None:
        state = jobs[user_id]
        try:
            records = [r for r in feedback_log(user_id).read_all() if not r["other"]]
            target = []
            for r in records:
                sk = _sketch_from_strokes(r["strokes"])
                sems = r.get("per_stroke_semantics")
                strokes = [
                    Stroke(list(st.points), semantic_label=sems[i] if sems else None)
                    for i, st in enumerate(sk.strokes)
                ]
                target.append(Sketch(strokes, category=r["category_id"], source_id=user_id))
            base_version, base = registry.active(user_id)
            da_cfg = DAConfig(steps=steps, lr=adapt_lr, seed=base_version)
            source = sample_shots(source_sketches, da_cfg.shots_per_class_source, seed=base_version)
            result = adapt(base, source, target, train_cfg, da_cfg)
            new_version = registry.publish(user_id, result.model)
            ckpt = store_dir / "models" / f"{user_id}-v{new_version}.ckpt"
            save_checkpoint(ckpt, result.model, extra={"train_config": asdict(train_cfg), "user_id": user_id})
            job_log.append(
                {
                    "user_id": user_id,
                    "from_offset": 0,
                    "to_offset": len(records),
                    "old_version": base_version,
                    "new_version": new_version,
                    "domain_acc_rec": result.domain_acc_rec,
                    "domain_acc_seg": result.domain_acc_seg,
                    "ts": time.time(),
                }
            )
            state.update(running=False, version=new_version, error=None)
        except Exception as e:  # job thread: record, never raise
            state.update(running=False, error=str(e))

    @app.post("/v1/adapt")
    def adapt_endpoint(body: AdaptIn):
        user_id = body.user_id
        with jobs_lock:
            job = jobs.get(user_id)
            if job and job.get("running"):
                raise HTTPException(409, f"adaptation already running for {user_id!r}")
            usable = [r for r in feedback_log(user_id).read_all() if not r["other"]]
            if not usable:
                raise HTTPException(409, f"no usable feedback recorded for {user_id!r}")
            if not source_sketches:
                raise HTTPException(409, "server started without a source exemplar pool")
            registry.active(user_id)  # 503 if nothing loaded
            jobs[user_id] = {"running": True, "error": None, "started": time.time()}
        steps = body.steps or adapt_steps
        if inline_jobs:
            _run_adapt(user_id, steps)
            job = jobs[user_id]
            if job.get("error"):
                raise HTTPException(500, f"adaptation failed: {job['error']}")
            return {"schema_version": SCHEMA_VERSION, "status": "done", "version": job["version"]}
        t = threading.Thread(target=_run_adapt, args=(user_id, steps), daemon=True)
        t.start()
        return {"schema_version": SCHEMA_VERSION, "status": "started"}

    @app.get("/v1/model")
    def model_info(user_id: str = "default"):
        job = jobs.get(user_id) or {}
        version = None
        labels: dict = {"categories": {}, "components": {}}
        if registry.base_version is not None:
            version, active = registry.active(user_id)
            km = active.knowledge
            labels = {
                "categories": {str(k): v for k, v in sorted(km.category_names.items())},
                "components": {str(k): v for k, v in sorted(km.component_names.items())},
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "model_loaded": registry.base_version is not None,
            "base_version": registry.base_version,
            "version": version,
            "labels": labels,
            "user_versions": registry.versions(user_id),
            "adapting": bool(job.get("running")),
            "last_error": job.get("error"),
            "latency_budget_ms": latency_budget_ms,
            "topk_served": TOPK_SERVED,
            "n_feedback": len(feedback_log(user_id)),
        }

    @app.post("/v1/model/rollback")
    def rollback(body: RollbackIn):
        version = registry.rollback(body.user_id)
        return {"schema_version": SCHEMA_VERSION, "version": version}

    return app
