"""Two-stream sketch network: an image CNN for category recognition and a
dynamic graph-convolution stream over stroke points for per-point semantic
segmentation, coupled at three levels:

* feature level: the sketch-level CNN feature is concatenated onto every
  node feature before the segmentation classifier;
* prediction level: when recognition is confident, a prior vector derived
  from the top-k predicted categories' component sets rescales the
  per-point component probabilities (inference only, no gradients);
* loss level: a KL term ties the stroke-pooled component distribution to
  the one implied by the category prediction (see losses.py).

Stroke-level pooling: node features pass through a small MLP, are
max-pooled per stroke, and the pooled vector is concatenated back onto
each node of that stroke.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericError
from .graph import dilated_knn_torch
from .knowledge import KnowledgeMatrix
from .resample import ResampledSketch


@dataclass
class ModelConfig:
    n_categories: int
    n_components: int
    cnn_backbone: str = "small_cnn"  # small_cnn | resnet18_equiv
    sketch_feature_dim: int = 128
    gnn_blocks: int = 4
    per_block_dim: int = 32
    knn_k: int = 10
    dilations: tuple[int, ...] = (1, 1, 2, 2)
    topk: int = 3
    rec_confidence_threshold: float = 0.5
    use_image_feature: bool = True  # concat f_c onto every node feature
    use_gate: bool = True  # recognition-gated segmentation at inference
    spool_hidden: int = 128
    cnn_channels: tuple[int, ...] = (16, 32, 64, 128)
    head: str = "linear"  # linear | cosine
    cosine_scale: float = 16.0
    virtual_categories: int = 0
    virtual_components: int = 0
    validate: bool = True

    def __post_init__(self) -> None:
        if self.gnn_blocks * self.per_block_dim != self.sketch_feature_dim:
            raise ConfigError(
                "gnn_blocks * per_block_dim must equal sketch_feature_dim "
                f"({self.gnn_blocks}*{self.per_block_dim} != {self.sketch_feature_dim})"
            )
        if len(self.dilations) != self.gnn_blocks:
            raise ConfigError("need one dilation per graph block")
        if not (0 < self.topk <= self.n_categories):
            raise ConfigError(f"topk must be in [1, {self.n_categories}]")
        if not (0.0 <= self.rec_confidence_threshold <= 1.0):
            raise ConfigError("rec_confidence_threshold must be in [0, 1]")
        if self.cnn_backbone not in ("small_cnn", "resnet18_equiv"):
            raise ConfigError(f"unknown backbone {self.cnn_backbone!r}")
        if self.head not in ("linear", "cosine"):
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def node_feature_dim(self) -> int:
        base = 2 * self.sketch_feature_dim  # stroke-pooled + node features
        return base + self.sketch_feature_dim if self.use_image_feature else base


@dataclass
class ForwardOutput:
    """Single-sketch forward results (tensors, batch dim stripped)."""

    f_c: torch.Tensor  # (D,)
    f_g: torch.Tensor  # (N, D)
    f_s: torch.Tensor  # (S, D) stroke-pooled features
    f_sg: torch.Tensor  # (N, 2D)
    f_csg: torch.Tensor  # (N, 2D or 3D)
    logits_r: torch.Tensor
    p_r: torch.Tensor  # (C_R,)
    logits_s: torch.Tensor
    p_s: torch.Tensor  # (N, C_S)
    p_s_final: torch.Tensor  # (N, C_S) after the recognition gate
    gamma: torch.Tensor | None  # (C_S,) prior applied, None if gate closed


def gather_neighbors(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """x (B, N, F), idx (B, N, k) -> neighbor features (B, N, k, F)."""
    b, n, f = x.shape
    k = idx.shape[-1]
    flat = x.reshape(b * n, f)
    offset = torch.arange(b, device=x.device).view(b, 1, 1) * n
    return flat[(idx + offset).reshape(-1)].view(b, n, k, f)


class EdgeConvBlock(nn.Module):
    """Max-aggregated edge convolution: MLP on [x_i, x_j - x_i]."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.lin = nn.Linear(2 * in_dim, out_dim)
        self.bn = nn.BatchNorm1d(out_dim)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, nbr: torch.Tensor) -> torch.Tensor:
        b, n, f = x.shape
        k = nbr.shape[-1]
        xj = gather_neighbors(x, nbr)
        xi = x.unsqueeze(2).expand(b, n, k, f)
        msg = self.lin(torch.cat([xi, xj - xi], dim=-1))
        msg = self.bn(msg.reshape(-1, msg.shape[-1])).view(b, n, k, -1)
        return self.act(msg).max(dim=2).values


class SmallCNN(nn.Module):
    """Four stride-2 conv stages + pooled linear projection."""

    def __init__(self, out_dim: int, channels: tuple[int, ...] = (16, 32, 64, 128)):
        super().__init__()
        stages = []
        prev = 3
        for ch in channels:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                    nn.BatchNorm2d(ch),
                    nn.ReLU(inplace=True),
                )
            )
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.mix_stage = 2  # manifold-mixup split point
        self.fc = nn.Linear(prev, out_dim)

    def front(self, x: torch.Tensor) -> torch.Tensor:
        for stage in self.stages[: self.mix_stage]:
            x = stage(x)
        return x

    def back(self, x: torch.Tensor) -> torch.Tensor:
        for stage in self.stages[self.mix_stage :]:
            x = stage(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.back(self.front(x))


class _BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x):
        identity = self.down(x) if self.down is not None else x
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResNet18Equivalent(nn.Module):
    """Standard 18-layer residual architecture with a projection head."""

    def __init__(self, out_dim: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        dims = [64, 128, 256, 512]
        layers = []
        prev = 64
        for i, ch in enumerate(dims):
            stride = 1 if i == 0 else 2
            layers.append(nn.Sequential(_BasicBlock(prev, ch, stride), _BasicBlock(ch, ch)))
            prev = ch
        self.stages = nn.ModuleList(layers)
        self.mix_stage = 2
        self.fc = nn.Linear(prev, out_dim)

    def front(self, x):
        x = self.stem(x)
        for stage in self.stages[: self.mix_stage]:
            x = stage(x)
        return x

    def back(self, x):
        for stage in self.stages[self.mix_stage :]:
            x = stage(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)

    def forward(self, x):
        return self.back(self.front(x))


def stroke_max_pool(
    h: torch.Tensor, stroke_ids: torch.Tensor, n_strokes: int, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Per-stroke elementwise max of node features.

    h (B, N, F), stroke_ids (B, N) -> (B, n_strokes, F). Strokes with no
    valid node come back as zeros (only reachable for padded slots).
    """
    b, n, f = h.shape
    values = h
    if mask is not None:
        values = h.masked_fill(~mask[:, :, None], float("-inf"))
    out = torch.full((b * n_strokes, f), float("-inf"), dtype=h.dtype, device=h.device)
    flat_idx = (stroke_ids + torch.arange(b, device=h.device)[:, None] * n_strokes).reshape(-1)
    out = out.scatter_reduce(
        0, flat_idx[:, None].expand(-1, f), values.reshape(-1, f), "amax", include_self=True
    )
    out = torch.where(torch.isinf(out), torch.zeros_like(out), out)
    return out.view(b, n_strokes, f)


def stroke_mean_pool(
    p: torch.Tensor, stroke_ids: torch.Tensor, n_strokes: int, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Per-stroke mean of node rows. p (B, N, C) -> (B, n_strokes, C)."""
    b, n, c = p.shape
    values = p if mask is None else p * mask[:, :, None].to(p.dtype)
    flat_idx = (stroke_ids + torch.arange(b, device=p.device)[:, None] * n_strokes).reshape(-1)
    sums = torch.zeros(b * n_strokes, c, dtype=p.dtype, device=p.device)
    sums = sums.index_add(0, flat_idx, values.reshape(-1, c))
    ones = torch.ones(b, n, dtype=p.dtype, device=p.device)
    if mask is not None:
        ones = ones * mask.to(p.dtype)
    counts = torch.zeros(b * n_strokes, dtype=p.dtype, device=p.device)
    counts = counts.index_add(0, flat_idx, ones.reshape(-1))
    sums = sums / counts.clamp_min(1.0)[:, None]
    return sums.view(b, n_strokes, c)


class StrokePool(nn.Module):
    """MLP + per-stroke max pooling, pooled vector concatenated per node."""

    def __init__(self, dim: int, hidden: int = 128, mlp: nn.Module | None = None):
        super().__init__()
        self.mlp = mlp if mlp is not None else nn.Sequential(
            nn.Linear(dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, dim)
        )

    def forward(
        self,
        f_g: torch.Tensor,
        stroke_ids: torch.Tensor,
        n_strokes: int | None = None,
        mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        squeeze = f_g.dim() == 2
        if squeeze:
            f_g = f_g.unsqueeze(0)
            stroke_ids = stroke_ids.unsqueeze(0) if torch.is_tensor(stroke_ids) else torch.as_tensor(stroke_ids)[None]
        stroke_ids = torch.as_tensor(stroke_ids, device=f_g.device, dtype=torch.long)
        if n_strokes is None:
            n_strokes = int(stroke_ids.max().item()) + 1
        h = self.mlp(f_g)
        f_s = stroke_max_pool(h, stroke_ids, n_strokes, mask)
        per_node = torch.gather(
            f_s, 1, stroke_ids[:, :, None].expand(-1, -1, f_s.shape[-1])
        )
        f_sg = torch.cat([per_node, f_g], dim=-1)
        if squeeze:
            return f_s.squeeze(0), f_sg.squeeze(0)
        return f_s, f_sg


def topk_by_probability(p: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries, ties resolved to the lower index."""
    order = torch.argsort(-p, dim=-1, stable=True)
    return order[..., :k]


def rsm_gate(
    p_r: torch.Tensor,
    p_s: torch.Tensor,
    km: KnowledgeMatrix | torch.Tensor,
    topk: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Prior vector from the top-k predicted categories, applied to points.

    gamma[c] = max over the selected categories' prior rows; each point row
    of p_s is multiplied elementwise by gamma and renormalized to sum 1.
    """
    matrix = km.matrix if isinstance(km, KnowledgeMatrix) else km
    m = torch.as_tensor(matrix, dtype=p_s.dtype, device=p_s.device)
    idx = topk_by_probability(p_r, topk)
    gamma = m[idx].max(dim=-2).values  # (..., C_S)
    scaled = p_s * gamma.unsqueeze(-2) if p_s.dim() > gamma.dim() else p_s * gamma
    p_final = scaled / scaled.sum(dim=-1, keepdim=True)
    return gamma, p_final


class CosineHead(nn.Module):
    """Scaled cosine-similarity classifier with reserved virtual slots.

    Rows [0, n_known) are prototypes of concrete classes; rows
    [n_known, n_known + n_virtual) are virtual prototypes reserved for
    classes that have not arrived yet.
    """

    def __init__(self, dim: int, n_known: int, n_virtual: int = 0, scale: float = 16.0):
        super().__init__()
        self.n_known = n_known
        self.n_virtual = n_virtual
        self.scale = scale
        self.weight = nn.Parameter(torch.empty(n_known + n_virtual, dim))
        nn.init.normal_(self.weight, std=dim**-0.5)

    @property
    def out_features(self) -> int:
        return self.n_known

    def forward(self, x: torch.Tensor, include_virtual: bool = False) -> torch.Tensor:
        w = F.normalize(self.weight, dim=1)
        z = F.normalize(x, dim=-1)
        logits = self.scale * (z @ w.t())
        return logits if include_virtual else logits[..., : self.n_known]

    @torch.no_grad()
    def extend(self, prototypes: torch.Tensor) -> None:
        """Append new class prototypes, consuming virtual slots."""
        m = prototypes.shape[0]
        if m > self.n_virtual:
            raise ConfigError(f"no free virtual slots for {m} new classes")
        protos = F.normalize(prototypes.to(self.weight.dtype), dim=1)
        w = self.weight.data
        new_w = torch.cat([w[: self.n_known], protos, w[self.n_known + m :]], dim=0)
        self.weight = nn.Parameter(new_w)
        self.n_known += m
        self.n_virtual -= m


def _make_head(cfg: ModelConfig, dim: int, n_classes: int, n_virtual: int) -> nn.Module:
    if cfg.head == "cosine":
        return CosineHead(dim, n_classes, n_virtual, scale=cfg.cosine_scale)
    return nn.Linear(dim, n_classes)


class TwoStreamNet(nn.Module):
    """Category recognition + per-point component segmentation."""

    def __init__(self, cfg: ModelConfig, km: KnowledgeMatrix):
        super().__init__()
        if km.n_categories < cfg.n_categories or km.n_components < cfg.n_components:
            raise ConfigError("knowledge matrix smaller than configured class counts")
        self.cfg = cfg
        self.knowledge = km
        self.register_buffer(
            "km_matrix", torch.as_tensor(km.matrix, dtype=torch.get_default_dtype())
        )
        if cfg.cnn_backbone == "resnet18_equiv":
            self.cnn = ResNet18Equivalent(cfg.sketch_feature_dim)
        else:
            self.cnn = SmallCNN(cfg.sketch_feature_dim, cfg.cnn_channels)
        blocks = []
        in_dim = 2
        for _ in range(cfg.gnn_blocks):
            blocks.append(EdgeConvBlock(in_dim, cfg.per_block_dim))
            in_dim = cfg.per_block_dim
        self.gnn = nn.ModuleList(blocks)
        self.gnn_mix_stage = 2
        self.spool = StrokePool(cfg.sketch_feature_dim, cfg.spool_hidden)
        self.rec_head = _make_head(cfg, cfg.sketch_feature_dim, cfg.n_categories, cfg.virtual_categories)
        self.seg_head = _make_head(cfg, cfg.node_feature_dim, cfg.n_components, cfg.virtual_components)

    # ---- stream pieces (exposed for mixup and adaptation) ----

    def gnn_front(self, coords: torch.Tensor, mask: torch.Tensor | None, upto: int | None = None) -> list[torch.Tensor]:
        upto = self.gnn_mix_stage if upto is None else upto
        outs: list[torch.Tensor] = []
        x = coords
        for block, d in zip(self.gnn[:upto], self.cfg.dilations[:upto]):
            nbr = dilated_knn_torch(x, self.cfg.knn_k, d, mask)
            x = block(x, nbr)
            outs.append(x)
        return outs

    def gnn_back(self, outs: list[torch.Tensor], mask: torch.Tensor | None) -> torch.Tensor:
        start = len(outs)
        x = outs[-1]
        outs = list(outs)
        for block, d in zip(self.gnn[start:], self.cfg.dilations[start:]):
            nbr = dilated_knn_torch(x, self.cfg.knn_k, d, mask)
            x = block(x, nbr)
            outs.append(x)
        return torch.cat(outs, dim=-1)

    def node_features(self, coords: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        return self.gnn_back(self.gnn_front(coords, mask, upto=self.gnn_mix_stage), mask)

    def fuse(
        self,
        f_c: torch.Tensor,
        f_g: torch.Tensor,
        stroke_ids: torch.Tensor,
        n_strokes: int,
        mask: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        f_s, f_sg = self.spool(f_g, stroke_ids, n_strokes, mask)
        if self.cfg.use_image_feature:
            f_csg = torch.cat([f_c[:, None, :].expand(-1, f_g.shape[1], -1), f_sg], dim=-1)
        else:
            f_csg = f_sg
        return f_s, f_sg, f_csg

    # ---- full forward ----

    def forward_batch(
        self,
        coords: torch.Tensor,
        stroke_ids: torch.Tensor,
        images: torch.Tensor,
        n_strokes: int | None = None,
        mask: torch.Tensor | None = None,
        apply_gate: bool | None = None,
    ) -> dict[str, torch.Tensor]:
        cfg = self.cfg
        if coords.dim() != 3 or coords.shape[-1] != 2:
            raise ConfigError(f"coords must be (B, N, 2), got {tuple(coords.shape)}")
        if images.dim() != 4 or images.shape[1] != 3:
            raise ConfigError(f"images must be (B, 3, H, W), got {tuple(images.shape)}")
        if images.shape[0] != coords.shape[0]:
            raise ConfigError("batch size mismatch between coords and images")
        if cfg.validate and not (torch.isfinite(coords).all() and torch.isfinite(images).all()):
            raise NumericError("non-finite values in model inputs")
        if n_strokes is None:
            n_strokes = int(stroke_ids.max().item()) + 1

        f_c = self.cnn(images)
        f_g = self.node_features(coords, mask)
        f_s, f_sg, f_csg = self.fuse(f_c, f_g, stroke_ids, n_strokes, mask)

        logits_r = self.rec_head(f_c)
        logits_s = self.seg_head(f_csg)
        p_r = F.softmax(logits_r, dim=-1)
        p_s = F.softmax(logits_s, dim=-1)

        gate_on = cfg.use_gate if apply_gate is None else apply_gate
        with torch.no_grad():
            p_r_d, p_s_d = p_r.detach(), p_s.detach()
            gamma = torch.ones_like(p_s_d[:, 0, :])
            if gate_on:
                # class-incremental heads may expose fewer classes than the
                # knowledge matrix covers; align on the known prefix
                km_t = self.km_matrix[:, : p_s_d.shape[-1]]
                g, _ = rsm_gate(p_r_d, p_s_d, km_t, cfg.topk)
                confident = p_r_d.max(dim=-1).values > cfg.rec_confidence_threshold
                gamma = torch.where(confident[:, None], g, gamma)
            scaled = p_s_d * gamma[:, None, :]
            p_s_final = scaled / scaled.sum(dim=-1, keepdim=True)

        if cfg.validate and not (torch.isfinite(p_r).all() and torch.isfinite(p_s).all()):
            raise NumericError("non-finite activations in forward pass")

        return {
            "f_c": f_c,
            "f_g": f_g,
            "f_s": f_s,
            "f_sg": f_sg,
            "f_csg": f_csg,
            "logits_r": logits_r,
            "p_r": p_r,
            "logits_s": logits_s,
            "p_s": p_s,
            "p_s_final": p_s_final,
            "gamma": gamma,
        }

    def infer_single(
        self,
        rs: ResampledSketch,
        image: np.ndarray,
        apply_gate: bool | None = None,
    ) -> ForwardOutput:
        """Run one resampled sketch + raster through the network."""
        dtype = next(self.parameters()).dtype
        coords = torch.as_tensor(rs.points, dtype=dtype)[None]
        stroke_ids = torch.as_tensor(rs.stroke_of_point, dtype=torch.long)[None]
        img = torch.as_tensor(image, dtype=dtype)[None]
        out = self.forward_batch(coords, stroke_ids, img, apply_gate=apply_gate)
        gate_fired = not torch.equal(out["gamma"][0], torch.ones_like(out["gamma"][0]))
        return ForwardOutput(
            f_c=out["f_c"][0],
            f_g=out["f_g"][0],
            f_s=out["f_s"][0],
            f_sg=out["f_sg"][0],
            f_csg=out["f_csg"][0],
            logits_r=out["logits_r"][0],
            p_r=out["p_r"][0],
            logits_s=out["logits_s"][0],
            p_s=out["p_s"][0],
            p_s_final=out["p_s_final"][0],
            gamma=out["gamma"][0] if gate_fired else None,
        )


def mask_true_logit(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Zero exactly the true-class logit of every row, leave the rest as is."""
    out = logits.clone()
    out.scatter_(-1, y.unsqueeze(-1), 0.0)
    return out
