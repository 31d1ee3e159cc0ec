"""Stroke graph construction and dilated k-NN neighborhoods.

The initial graph connects temporally adjacent points within each stroke.
Later layers of the segmentation stream rebuild neighborhoods in feature
space: take the k*d nearest nodes (excluding self), keep every d-th.

Tie-breaking and padding rules (all deterministic):
* equal distances order by lower node index;
* when fewer than k*d candidates exist, the candidate list is clamped to
  N-1 entries and the selected neighbors are padded by repeating the last;
* a single-node graph falls back to self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericError
from .resample import ResampledSketch


@dataclass
class StrokeGraph:
    """nodes: (N, 2); edges: undirected pairs (i, j) with i < j, one entry
    per pair (adjacency accessors expose both directions)."""

    nodes: np.ndarray
    edges: list[tuple[int, int]]
    stroke_of_node: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj


@dataclass
class NeighborIndex:
    k: int
    dilation: int
    neighbors: np.ndarray  # (N, k) node ids


def build_graph(rs: ResampledSketch) -> StrokeGraph:
    """Chain temporally adjacent points of each stroke."""
    sid = rs.stroke_of_point
    edges = [
        (i, i + 1)
        for i in range(len(sid) - 1)
        if sid[i] == sid[i + 1]
    ]
    return StrokeGraph(nodes=rs.points.copy(), edges=edges, stroke_of_node=sid.copy())


def dilated_knn(features: np.ndarray, k: int, d: int) -> NeighborIndex:
    """Dilated k-NN by Euclidean distance, per the module contract."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if not np.isfinite(feats).all():
        raise NumericError("non-finite feature values in neighbor search")
    n = feats.shape[0]
    if n == 1:
        return NeighborIndex(k, d, np.zeros((1, k), dtype=np.int64))
    dist = np.sqrt(((feats[:, None, :] - feats[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    # Stable sort keeps the lower-index-wins tie rule.
    order = np.argsort(dist, axis=1, kind="stable")[:, : n - 1]
    cand = order[:, : min(k * d, n - 1)]
    picked = cand[:, ::d][:, :k]
    if picked.shape[1] < k:
        pad = np.repeat(picked[:, -1:], k - picked.shape[1], axis=1)
        picked = np.concatenate([picked, pad], axis=1)
    return NeighborIndex(k, d, picked.astype(np.int64))


def dilated_knn_torch(features: torch.Tensor, k: int, d: int, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Batched dilated k-NN: features (B, N, F) -> neighbor ids (B, N, k).

    Matches `dilated_knn` on each batch element (same ordering and padding
    rules). `mask` (B, N) marks valid nodes; padded nodes neighbor
    themselves and are never selected by valid nodes.
    """
    if not torch.isfinite(features).all():
        raise NumericError("non-finite feature values in neighbor search")
    b, n, _ = features.shape
    if n == 1:
        return torch.zeros(b, n, k, dtype=torch.long, device=features.device)
    dist = torch.cdist(features, features)
    idx = torch.arange(n, device=features.device)
    dist[:, idx, idx] = float("inf")
    if mask is not None:
        dist.masked_fill_(~mask[:, None, :], float("inf"))
    take = min(k * d, n - 1)
    # topk is not guaranteed stable; stable argsort enforces the
    # lower-index-wins tie rule deterministically.
    order = torch.argsort(dist, dim=-1, stable=True)[..., :take]
    picked = order[..., ::d][..., :k]
    if picked.shape[-1] < k:
        pad = picked[..., -1:].expand(b, n, k - picked.shape[-1])
        picked = torch.cat([picked, pad], dim=-1)
    if mask is not None:
        own = idx[None, :, None].expand(b, n, k)
        picked = torch.where(mask[:, :, None], picked, own)
    return picked.contiguous()
