"""Training objective: per-point segmentation CE + weighted category CE +
an optional KL term that couples the two prediction heads.

The KL term compares two distributions over components:
* from the category head: p_r mapped through the knowledge prior and
  renormalized;
* from the segmentation head: per-stroke mean of point probabilities,
  max over strokes per component, renormalized.

Both sides are epsilon-smoothed before the log, and the final value is
clamped at zero so float cancellation can't produce a tiny negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NumericError
from .knowledge import KnowledgeMatrix
from .model import stroke_mean_pool


@dataclass
class LossConfig:
    lambda_rec: float = 150.0
    lambda_kld: float = 1.0
    eps: float = 1e-8


def _smooth(p: torch.Tensor, eps: float) -> torch.Tensor:
    q = p + eps
    return q / q.sum(dim=-1, keepdim=True)


def kld_loss(
    p_r: torch.Tensor,
    p_s: torch.Tensor,
    stroke_ids: torch.Tensor,
    km: KnowledgeMatrix | torch.Tensor,
    n_strokes: int | None = None,
    mask: torch.Tensor | None = None,
    eps: float = 1e-8,
) -> torch.Tensor:
    """KL(category-implied components || segmentation-pooled components).

    p_r (B, C_R), p_s (B, N, C_S), stroke_ids (B, N). Returns the batch
    mean, clamped at zero.
    """
    matrix = km.matrix if isinstance(km, KnowledgeMatrix) else km
    m = torch.as_tensor(matrix, dtype=p_s.dtype, device=p_s.device)
    if n_strokes is None:
        n_strokes = int(stroke_ids.max().item()) + 1

    implied = p_r @ m  # (B, C_S)
    implied = implied / implied.sum(dim=-1, keepdim=True)

    per_stroke = stroke_mean_pool(p_s, stroke_ids, n_strokes, mask)  # (B, S, C_S)
    pooled = per_stroke.max(dim=1).values
    pooled = pooled / pooled.sum(dim=-1, keepdim=True)

    p = _smooth(implied, eps)
    q = _smooth(pooled, eps)
    kl = (p * (p.log() - q.log())).sum(dim=-1)
    return kl.mean().clamp_min(0.0)


def total_loss(
    out: dict[str, torch.Tensor],
    y_category: torch.Tensor,
    y_component: torch.Tensor,
    km: KnowledgeMatrix | torch.Tensor,
    cfg: LossConfig,
    stroke_ids: torch.Tensor,
    n_strokes: int | None = None,
    mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Combined objective; the gate never feeds this (p_s is pre-gate).

    Returns (scalar loss, float parts for logging).
    """
    logits_s = out["logits_s"]
    b, n, c_s = logits_s.shape
    flat_logits = logits_s.reshape(b * n, c_s)
    flat_y = y_component.reshape(b * n)
    if mask is None:
        l_seg = F.cross_entropy(flat_logits, flat_y)
    else:
        per_point = F.cross_entropy(flat_logits, flat_y.clamp_min(0), reduction="none")
        w = mask.reshape(b * n).to(per_point.dtype)
        l_seg = (per_point * w).sum() / w.sum()

    l_rec = F.cross_entropy(out["logits_r"], y_category)

    l_kl = logits_s.new_zeros(())
    if cfg.lambda_kld != 0.0:
        l_kl = kld_loss(out["p_r"], out["p_s"], stroke_ids, km, n_strokes, mask, cfg.eps)

    loss = l_seg + cfg.lambda_rec * l_rec + cfg.lambda_kld * l_kl
    if not torch.isfinite(loss):
        raise NumericError("non-finite training loss")
    return loss, {
        "loss": float(loss.detach()),
        "seg": float(l_seg.detach()),
        "rec": float(l_rec.detach()),
        "kld": float(l_kl.detach()),
    }
