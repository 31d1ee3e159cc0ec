"""Few-shot conditional adversarial adaptation to a new drawing style.

Both streams get a binary domain discriminator fed with the multilinear
map of (feature, predicted distribution): the sketch feature with the
category distribution, and subsampled per-point fused features with the
component distribution. The feature extractor sees the discriminator
loss through a gradient-reversal layer, so one optimizer minimizes
task loss on both labeled domains while pushing the discriminators
toward confusion. Predictions are detached inside the conditioning so
the adversarial signal flows through features only.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import EncodedDataset
from .errors import ConfigError, NumericError, ValidationError
from .geometry import Sketch
from .knowledge import KnowledgeMatrix
from .losses import LossConfig
from .model import TwoStreamNet
from .train import TrainConfig, encode_for


@dataclass
class DAConfig:
    lambda_adv: float = 1.0
    shots_per_class_target: int = 5
    shots_per_class_source: int = 5
    steps: int = 200
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    warmup_fraction: float = 0.1
    subsample_points: int = 64
    disc_hidden: int = 256
    lambda_rec: float = 150.0
    lambda_kld: float = 0.0

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("steps, lr and batch_size must be positive")
        if self.shots_per_class_target not in (1, 2, 5):
            raise ConfigError("shots_per_class_target must be 1, 2 or 5")
        if self.lambda_adv < 0:
            raise ConfigError("lambda_adv must be non-negative")


def multilinear_map(f: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Flattened outer product, f-major: out[i*|g|+j] = f[i]*g[j]."""
    if f.dim() == 1:
        return torch.outer(f, g).reshape(-1)
    return torch.einsum("bf,bc->bfc", f, g).flatten(1)


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, coeff):
        ctx.coeff = coeff
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.coeff * grad, None


def grad_reverse(x: torch.Tensor, coeff: float = 1.0) -> torch.Tensor:
    return _GradReverse.apply(x, coeff)


class DomainDiscriminator(nn.Module):
    def __init__(self, in_dim: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


@dataclass
class AdaptResult:
    model: TwoStreamNet
    history: list[dict] = field(default_factory=list)
    domain_acc_rec: float = 1.0
    domain_acc_seg: float = 1.0
    adapt_time_s: float = 0.0
    # kept so callers can probe domain confusion on held-out data; the
    # accuracies above are measured on the adaptation shots themselves
    disc_rec: DomainDiscriminator | None = None
    disc_seg: DomainDiscriminator | None = None


def sample_shots(sketches: list[Sketch], per_class: int, seed: int) -> list[Sketch]:
    """Pick per_class examples of every category (without replacement)."""
    by_cat: dict[int, list[Sketch]] = {}
    for sk in sketches:
        if sk.category is None:
            raise ValidationError("shot sampling needs category labels")
        by_cat.setdefault(sk.category, []).append(sk)
    rng = np.random.default_rng(seed)
    out: list[Sketch] = []
    for cat in sorted(by_cat):
        pool = by_cat[cat]
        if len(pool) < per_class:
            raise ValidationError(f"category {cat} has only {len(pool)} samples, need {per_class}")
        idx = rng.choice(len(pool), size=per_class, replace=False)
        out.extend(pool[i] for i in sorted(idx))
    return out


def _task_loss(
    model: TwoStreamNet,
    out: dict[str, torch.Tensor],
    ds: EncodedDataset,
    idx: torch.Tensor,
    loss_cfg: LossConfig,
) -> torch.Tensor:
    """Like the training objective but tolerant of missing point labels."""
    l_rec = F.cross_entropy(out["logits_r"], ds.y_category[idx])
    logits_s = out["logits_s"]
    b, n, c = logits_s.shape
    y = ds.y_component[idx].reshape(b * n)
    valid = y >= 0
    l_seg = logits_s.new_zeros(())
    if bool(valid.any()):
        per_point = F.cross_entropy(logits_s.reshape(b * n, c)[valid], y[valid])
        l_seg = per_point
    return l_seg + loss_cfg.lambda_rec * l_rec


def _conditioned_inputs(
    out: dict[str, torch.Tensor], point_idx: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(rec conditioning, seg conditioning) for a batch; predictions detached."""
    rec = multilinear_map(out["f_c"], out["p_r"].detach())
    b = out["f_csg"].shape[0]
    rows = torch.arange(b)[:, None]
    f_pts = out["f_csg"][rows, point_idx]  # (B, P, F)
    p_pts = out["p_s"].detach()[rows, point_idx]  # (B, P, C)
    seg = torch.einsum("bpf,bpc->bpfc", f_pts, p_pts).flatten(0, 1).flatten(1)
    return rec, seg


def adapt(
    model: TwoStreamNet,
    source: list[Sketch] | EncodedDataset,
    target: list[Sketch] | EncodedDataset,
    train_cfg: TrainConfig,
    da_cfg: DAConfig,
) -> AdaptResult:
    """Return an adapted copy of the model; the input model is untouched."""
    if isinstance(target, list) and not target:
        raise ConfigError("adaptation needs a non-empty target set")
    src = source if isinstance(source, EncodedDataset) else encode_for(train_cfg, source)
    tgt = target if isinstance(target, EncodedDataset) else encode_for(train_cfg, target, require_labels=False)
    if len(tgt) == 0:
        raise ConfigError("adaptation needs a non-empty target set")
    if bool((tgt.y_category < 0).any()):
        raise ValidationError("target sketches must carry category labels")

    adapted = copy.deepcopy(model)
    adapted.train()
    cfg = adapted.cfg
    disc_rec = DomainDiscriminator(cfg.sketch_feature_dim * cfg.n_categories, da_cfg.disc_hidden)
    disc_seg = DomainDiscriminator(cfg.node_feature_dim * cfg.n_components, da_cfg.disc_hidden)
    torch.manual_seed(da_cfg.seed)
    for d in (disc_rec, disc_seg):
        for p in d.parameters():
            if p.dim() > 1:
                nn.init.xavier_uniform_(p)

    params = list(adapted.parameters()) + list(disc_rec.parameters()) + list(disc_seg.parameters())
    opt = torch.optim.Adam(params, lr=da_cfg.lr)
    loss_cfg = LossConfig(lambda_rec=da_cfg.lambda_rec, lambda_kld=da_cfg.lambda_kld)
    gen = torch.Generator().manual_seed(da_cfg.seed)
    warmup_steps = max(1, int(da_cfg.warmup_fraction * da_cfg.steps))
    max_strokes = int(max(src.n_strokes.max(), tgt.n_strokes.max()))
    n_pts = min(da_cfg.subsample_points, src.n_points)

    history: list[dict] = []
    t0 = time.perf_counter()
    for step in range(da_cfg.steps):
        lam = da_cfg.lambda_adv * min(1.0, (step + 1) / warmup_steps)
        si = torch.randint(len(src), (da_cfg.batch_size,), generator=gen)
        ti = torch.randint(len(tgt), (min(da_cfg.batch_size, len(tgt)),), generator=gen)
        out_s = adapted.forward_batch(
            src.coords[si], src.stroke_ids[si], src.images[si], n_strokes=max_strokes, apply_gate=False
        )
        out_t = adapted.forward_batch(
            tgt.coords[ti], tgt.stroke_ids[ti], tgt.images[ti], n_strokes=max_strokes, apply_gate=False
        )
        loss = _task_loss(adapted, out_s, src, si, loss_cfg) + _task_loss(adapted, out_t, tgt, ti, loss_cfg)

        if da_cfg.lambda_adv > 0:
            pt_s = torch.randint(src.n_points, (len(si), n_pts), generator=gen)
            pt_t = torch.randint(tgt.n_points, (len(ti), n_pts), generator=gen)
            rec_s, seg_s = _conditioned_inputs(out_s, pt_s)
            rec_t, seg_t = _conditioned_inputs(out_t, pt_t)
            rec_in = grad_reverse(torch.cat([rec_s, rec_t]), lam)
            seg_in = grad_reverse(torch.cat([seg_s, seg_t]), lam)
            dom_rec = torch.cat([torch.ones(len(rec_s)), torch.zeros(len(rec_t))])
            dom_seg = torch.cat([torch.ones(len(seg_s)), torch.zeros(len(seg_t))])
            l_dom = F.binary_cross_entropy_with_logits(disc_rec(rec_in), dom_rec)
            l_dom = l_dom + F.binary_cross_entropy_with_logits(disc_seg(seg_in), dom_seg)
            loss = loss + l_dom
        else:
            l_dom = loss.new_zeros(())

        if not torch.isfinite(loss):
            raise NumericError(f"adaptation diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 20 == 0 or step == da_cfg.steps - 1:
            history.append(
                {"step": step, "loss": float(loss.detach()), "domain": float(l_dom.detach()), "lambda": lam}
            )

    acc_rec, acc_seg = domain_accuracy(adapted, disc_rec, disc_seg, src, tgt, da_cfg)
    adapted.eval()
    return AdaptResult(
        model=adapted,
        history=history,
        domain_acc_rec=acc_rec,
        domain_acc_seg=acc_seg,
        adapt_time_s=time.perf_counter() - t0,
        disc_rec=disc_rec,
        disc_seg=disc_seg,
    )


@torch.no_grad()
def domain_accuracy(
    model: TwoStreamNet,
    disc_rec: DomainDiscriminator,
    disc_seg: DomainDiscriminator,
    src: EncodedDataset,
    tgt: EncodedDataset,
    da_cfg: DAConfig,
) -> tuple[float, float]:
    """How well the discriminators still separate the domains (0.5 = confused)."""
    model.eval()
    gen = torch.Generator().manual_seed(da_cfg.seed + 1)
    n_pts = min(da_cfg.subsample_points, src.n_points)
    scores = {"rec": [], "seg": []}
    labels = {"rec": [], "seg": []}
    max_strokes = int(max(src.n_strokes.max(), tgt.n_strokes.max()))
    for ds, is_source in ((src, 1.0), (tgt, 0.0)):
        for start in range(0, len(ds), 32):
            idx = torch.arange(start, min(start + 32, len(ds)))
            out = model.forward_batch(
                ds.coords[idx], ds.stroke_ids[idx], ds.images[idx],
                n_strokes=max_strokes, apply_gate=False,
            )
            pts = torch.randint(ds.n_points, (len(idx), n_pts), generator=gen)
            rec_in, seg_in = _conditioned_inputs(out, pts)
            scores["rec"].append(disc_rec(rec_in))
            scores["seg"].append(disc_seg(seg_in))
            labels["rec"].append(torch.full((len(rec_in),), is_source))
            labels["seg"].append(torch.full((len(seg_in),), is_source))
    accs = []
    for key in ("rec", "seg"):
        s = torch.cat(scores[key])
        y = torch.cat(labels[key])
        accs.append(float(((s > 0).float() == y).float().mean()))
    return accs[0], accs[1]
