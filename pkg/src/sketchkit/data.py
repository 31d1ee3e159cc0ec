"""Turns stroke sketches into fixed-size tensors for training and builds
hash-stamped dataset splits.

Every sketch is normalized, resampled to a fixed point count, and
rasterized once up front; the resulting arrays are indexed per batch, so
epochs never re-run geometry code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import LabelError, ValidationError
from .geometry import Sketch, normalize, sketch_to_record
from .raster import RenderConfig, rasterize
from .resample import resample


@dataclass
class EncodedDataset:
    coords: torch.Tensor  # (M, N, 2) float32
    stroke_ids: torch.Tensor  # (M, N) int64
    images: torch.Tensor  # (M, 3, H, W) float32
    y_category: torch.Tensor  # (M,) int64, -1 where unknown
    y_component: torch.Tensor  # (M, N) int64, -1 where unknown
    n_strokes: torch.Tensor  # (M,) int64
    source_ids: list[str | None]

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n_points(self) -> int:
        return self.coords.shape[1]

    def subset(self, idx: torch.Tensor | np.ndarray | list[int]) -> "EncodedDataset":
        idx_t = torch.as_tensor(idx, dtype=torch.long)
        return EncodedDataset(
            coords=self.coords[idx_t],
            stroke_ids=self.stroke_ids[idx_t],
            images=self.images[idx_t],
            y_category=self.y_category[idx_t],
            y_component=self.y_component[idx_t],
            n_strokes=self.n_strokes[idx_t],
            source_ids=[self.source_ids[int(i)] for i in idx_t],
        )


def encode_sketch(
    sk: Sketch, n_points: int, render: RenderConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None]:
    """One sketch -> (points (N,2), stroke ids (N,), raster, point labels)."""
    norm = normalize(sk)
    rs = resample(norm, n_points)
    img = rasterize(rs, render)
    return rs.points, rs.stroke_of_point, img, rs.point_semantic


def encode_dataset(
    sketches: list[Sketch],
    n_points: int,
    render: RenderConfig,
    require_labels: bool = True,
) -> EncodedDataset:
    if not sketches:
        raise ValidationError("cannot encode an empty sketch list")
    m = len(sketches)
    coords = np.zeros((m, n_points, 2), dtype=np.float32)
    stroke_ids = np.zeros((m, n_points), dtype=np.int64)
    images = np.zeros((m, 3, render.height, render.width), dtype=np.float32)
    y_cat = np.full(m, -1, dtype=np.int64)
    y_comp = np.full((m, n_points), -1, dtype=np.int64)
    n_strokes = np.zeros(m, dtype=np.int64)
    source_ids: list[str | None] = []
    for i, sk in enumerate(sketches):
        pts, sid, img, labels = encode_sketch(sk, n_points, render)
        coords[i] = pts
        stroke_ids[i] = sid
        images[i] = img
        n_strokes[i] = sid.max() + 1
        source_ids.append(sk.source_id)
        if sk.category is not None:
            y_cat[i] = sk.category
        elif require_labels:
            raise LabelError(f"sketch {i} ({sk.source_id!r}) has no category label")
        if labels is not None:
            y_comp[i] = labels
        elif require_labels:
            raise LabelError(f"sketch {i} ({sk.source_id!r}) has unlabeled strokes")
    return EncodedDataset(
        coords=torch.from_numpy(coords),
        stroke_ids=torch.from_numpy(stroke_ids),
        images=torch.from_numpy(images),
        y_category=torch.from_numpy(y_cat),
        y_component=torch.from_numpy(y_comp),
        n_strokes=torch.from_numpy(n_strokes),
        source_ids=source_ids,
    )


def iterate_batches(
    n: int, batch_size: int, generator: torch.Generator | None = None, shuffle: bool = True
):
    """Yield index tensors covering [0, n); last batch may be short."""
    if shuffle:
        order = torch.randperm(n, generator=generator)
    else:
        order = torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def corpus_digest(sketches: list[Sketch]) -> str:
    """Order-sensitive sha256 over the canonical record lines."""
    h = hashlib.sha256()
    for sk in sketches:
        h.update(json.dumps(sketch_to_record(sk), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def stratified_split(
    sketches: list[Sketch], test_fraction: float, seed: int
) -> tuple[list[Sketch], list[Sketch], dict]:
    """Per-category shuffle and cut; returns (train, test, manifest).

    The manifest records split sizes and content digests so a later run
    can verify it is looking at the same data.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValidationError("test_fraction must be in (0, 1)")
    by_cat: dict[int, list[int]] = {}
    for i, sk in enumerate(sketches):
        if sk.category is None:
            raise LabelError("stratified split needs category labels")
        by_cat.setdefault(sk.category, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cat in sorted(by_cat):
        idx = np.array(by_cat[cat])
        rng.shuffle(idx)
        n_test = max(1, int(round(test_fraction * len(idx))))
        if n_test >= len(idx):
            raise ValidationError(f"category {cat} too small to split")
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    train = [sketches[i] for i in sorted(train_idx)]
    test = [sketches[i] for i in sorted(test_idx)]
    manifest = {
        "seed": seed,
        "test_fraction": test_fraction,
        "splits": {
            "train": {"count": len(train), "sha256": corpus_digest(train)},
            "test": {"count": len(test), "sha256": corpus_digest(test)},
        },
    }
    return train, test, manifest
