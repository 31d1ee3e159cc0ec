"""Seeded training and evaluation loops.

Two sizing profiles exist. "desk" is small enough to train on a single
CPU core in seconds (96 points, 64px rasters, a four-stage CNN); "full"
matches the reference setup (300 points, 224px rasters, an 18-layer
residual CNN, batch 256, 100 epochs) and only differs in scale, not in
code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import EncodedDataset, encode_dataset, iterate_batches
from .errors import ConfigError
from .geometry import Sketch
from .knowledge import KnowledgeMatrix
from .losses import LossConfig, total_loss
from .metrics import MetricReport, build_report
from .model import ModelConfig, TwoStreamNet
from .raster import RenderConfig


@dataclass
class TrainConfig:
    profile: str = "desk"
    n_points: int = 96
    image_size: int = 64
    batch_size: int = 32
    epochs: int = 20
    lr: float = 2e-3
    seed: int = 0
    lambda_rec: float = 150.0
    lambda_kld: float = 1.0
    use_image_feature: bool = True
    use_gate: bool = True
    cnn_backbone: str = "small_cnn"
    head: str = "linear"
    gamma_r: float = 0.9
    line_width: float = 4.0  # fat enough at 64px that pen wobble stays inside the band
    augment_noise: float = 0.0  # optional train-time gaussian jitter on point coords
    log_every: int = 0  # epochs between history rows; 0 logs every epoch

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_rec=self.lambda_rec, lambda_kld=self.lambda_kld)

    def render_config(self) -> RenderConfig:
        return RenderConfig(
            height=self.image_size, width=self.image_size, line_width=self.line_width
        )

    def model_config(self, n_categories: int, n_components: int, **overrides) -> ModelConfig:
        return ModelConfig(
            n_categories=n_categories,
            n_components=n_components,
            cnn_backbone=self.cnn_backbone,
            use_image_feature=self.use_image_feature,
            use_gate=self.use_gate,
            head=self.head,
            **overrides,
        )


def desk_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(profile="desk"), **overrides)


def full_config(**overrides) -> TrainConfig:
    base = TrainConfig(
        profile="full",
        n_points=300,
        image_size=224,
        batch_size=256,
        epochs=100,
        cnn_backbone="resnet18_equiv",
        line_width=2.0,
    )
    return replace(base, **overrides)


def config_for_profile(profile: str, **overrides) -> TrainConfig:
    if profile == "desk":
        return desk_config(**overrides)
    if profile == "full":
        return full_config(**overrides)
    raise ConfigError(f"unknown profile {profile!r}")


@dataclass
class TrainResult:
    model: TwoStreamNet
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    train_time_s: float = 0.0
    eval_report: MetricReport | None = None


def encode_for(cfg: TrainConfig, sketches: list[Sketch], require_labels: bool = True) -> EncodedDataset:
    return encode_dataset(sketches, cfg.n_points, cfg.render_config(), require_labels)


def validate_labels(ds: EncodedDataset, km: KnowledgeMatrix) -> None:
    """Every label must have a row/column in the knowledge matrix."""
    from .errors import LabelError

    max_cat = int(ds.y_category.max())
    max_comp = int(ds.y_component.max())
    if max_cat >= km.n_categories:
        raise LabelError(f"category {max_cat} not covered by the knowledge file ({km.n_categories} rows)")
    if max_comp >= km.n_components:
        raise LabelError(f"component {max_comp} not covered by the knowledge file ({km.n_components} columns)")


def train(
    train_sketches: list[Sketch] | EncodedDataset,
    km: KnowledgeMatrix,
    cfg: TrainConfig,
    eval_sketches: list[Sketch] | EncodedDataset | None = None,
    model: TwoStreamNet | None = None,
) -> TrainResult:
    """Train from scratch (or continue on a passed-in model)."""
    torch.manual_seed(cfg.seed)
    ds = train_sketches if isinstance(train_sketches, EncodedDataset) else encode_for(cfg, train_sketches)
    validate_labels(ds, km)
    if model is None:
        model = TwoStreamNet(cfg.model_config(km.n_categories, km.n_components), km)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    loss_cfg = cfg.loss_config()
    gen = torch.Generator().manual_seed(cfg.seed)
    max_strokes = int(ds.n_strokes.max())

    history: list[dict] = []
    t0 = time.perf_counter()
    model.train()
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        n_batches = 0
        for idx in iterate_batches(len(ds), cfg.batch_size, gen):
            coords = ds.coords[idx]
            if cfg.augment_noise > 0:
                # jitter the point stream only; rasters stay clean, so this
                # regularizes segmentation without touching recognition
                coords = coords + cfg.augment_noise * torch.randn(
                    coords.shape, generator=gen, dtype=coords.dtype
                )
            out = model.forward_batch(
                coords, ds.stroke_ids[idx], ds.images[idx],
                n_strokes=max_strokes, apply_gate=False,
            )
            loss, parts = total_loss(
                out, ds.y_category[idx], ds.y_component[idx], km, loss_cfg,
                ds.stroke_ids[idx], n_strokes=max_strokes,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if cfg.log_every <= 1 or epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            history.append(row)
    train_time = time.perf_counter() - t0

    result = TrainResult(model=model, config=cfg, history=history, train_time_s=train_time)
    if eval_sketches is not None:
        result.eval_report = evaluate(model, eval_sketches, cfg)[0]
    return result


@torch.no_grad()
def predict(
    model: TwoStreamNet,
    ds: EncodedDataset,
    batch_size: int = 64,
    apply_gate: bool | None = None,
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Batched inference: (category preds, per-sketch point preds, p_r rows)."""
    model.eval()
    max_strokes = int(ds.n_strokes.max())
    pred_cat = np.zeros(len(ds), dtype=np.int64)
    pred_points: list[np.ndarray] = [None] * len(ds)  # type: ignore[list-item]
    p_r_all: np.ndarray | None = None  # sized from the first batch; heads can grow
    for idx in iterate_batches(len(ds), batch_size, shuffle=False):
        out = model.forward_batch(
            ds.coords[idx], ds.stroke_ids[idx], ds.images[idx],
            n_strokes=max_strokes, apply_gate=apply_gate,
        )
        cats = out["p_r"].argmax(dim=-1).numpy()
        points = out["p_s_final"].argmax(dim=-1).numpy()
        if p_r_all is None:
            p_r_all = np.zeros((len(ds), out["p_r"].shape[-1]), dtype=np.float64)
        for row, i in enumerate(idx.tolist()):
            pred_cat[i] = cats[row]
            pred_points[i] = points[row]
            p_r_all[i] = out["p_r"][row].numpy()
    assert p_r_all is not None
    return pred_cat, pred_points, p_r_all


def evaluate(
    model: TwoStreamNet,
    data: list[Sketch] | EncodedDataset,
    cfg: TrainConfig | None = None,
    batch_size: int = 64,
    apply_gate: bool | None = None,
) -> tuple[MetricReport, np.ndarray, list[np.ndarray]]:
    """Metric report plus raw predictions for downstream analysis."""
    if isinstance(data, EncodedDataset):
        ds = data
    else:
        if cfg is None:
            raise ConfigError("evaluate needs a TrainConfig to encode raw sketches")
        ds = encode_for(cfg, data)
    pred_cat, pred_points, _ = predict(model, ds, batch_size, apply_gate)
    true_points = [ds.y_component[i].numpy() for i in range(len(ds))]
    stroke_ids = [ds.stroke_ids[i].numpy() for i in range(len(ds))]
    report = build_report(pred_cat, ds.y_category.numpy(), pred_points, true_points, stroke_ids)
    return report, pred_cat, pred_points
