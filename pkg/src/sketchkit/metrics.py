"""Evaluation metrics.

* acc_at_1: fraction of sketches whose top category prediction is right.
* p_metric: fraction of points whose component prediction is right.
* c_metric: fraction of strokes where strictly more than 75% of the
  stroke's points are right. 3 of 4 points is exactly 75% and does not
  count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

STROKE_CORRECT_FRACTION = 0.75


def acc_at_1(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("acc_at_1 needs equal-length non-empty label arrays")
    return float(np.mean(pred == true))


def p_metric(pred_points: list[np.ndarray], true_points: list[np.ndarray]) -> float:
    correct = 0
    total = 0
    for p, t in zip(pred_points, true_points, strict=True):
        p = np.asarray(p)
        t = np.asarray(t)
        if p.shape != t.shape:
            raise ValueError("per-sketch point label arrays must align")
        correct += int(np.sum(p == t))
        total += p.size
    if total == 0:
        raise ValueError("p_metric needs at least one point")
    return correct / total


def c_metric(
    pred_points: list[np.ndarray],
    true_points: list[np.ndarray],
    stroke_ids: list[np.ndarray],
) -> float:
    ok = 0
    total = 0
    for p, t, s in zip(pred_points, true_points, stroke_ids, strict=True):
        p, t, s = np.asarray(p), np.asarray(t), np.asarray(s)
        for stroke in np.unique(s):
            sel = s == stroke
            frac = np.mean(p[sel] == t[sel])
            ok += int(frac > STROKE_CORRECT_FRACTION)
            total += 1
    if total == 0:
        raise ValueError("c_metric needs at least one stroke")
    return ok / total


@dataclass
class MetricReport:
    acc1: float
    p_metric: float
    c_metric: float
    n_sketches: int
    n_points: int
    n_strokes: int
    per_category_acc: dict[int, float] = field(default_factory=dict)
    per_component_acc: dict[int, float] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc1": self.acc1,
            "p_metric": self.p_metric,
            "c_metric": self.c_metric,
            "n_sketches": self.n_sketches,
            "n_points": self.n_points,
            "n_strokes": self.n_strokes,
            "per_category_acc": {str(k): v for k, v in self.per_category_acc.items()},
            "per_component_acc": {str(k): v for k, v in self.per_component_acc.items()},
            "extra": dict(self.extra),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_report(
    pred_cat: np.ndarray,
    true_cat: np.ndarray,
    pred_points: list[np.ndarray],
    true_points: list[np.ndarray],
    stroke_ids: list[np.ndarray],
) -> MetricReport:
    pred_cat = np.asarray(pred_cat)
    true_cat = np.asarray(true_cat)
    per_cat: dict[int, float] = {}
    for c in np.unique(true_cat):
        sel = true_cat == c
        per_cat[int(c)] = float(np.mean(pred_cat[sel] == c))
    flat_p = np.concatenate([np.asarray(p) for p in pred_points])
    flat_t = np.concatenate([np.asarray(t) for t in true_points])
    per_comp: dict[int, float] = {}
    for c in np.unique(flat_t):
        sel = flat_t == c
        per_comp[int(c)] = float(np.mean(flat_p[sel] == c))
    return MetricReport(
        acc1=acc_at_1(pred_cat, true_cat),
        p_metric=p_metric(pred_points, true_points),
        c_metric=c_metric(pred_points, true_points, stroke_ids),
        n_sketches=len(pred_cat),
        n_points=int(flat_t.size),
        n_strokes=int(sum(len(np.unique(np.asarray(s))) for s in stroke_ids)),
        per_category_acc=per_cat,
        per_component_acc=per_comp,
    )
