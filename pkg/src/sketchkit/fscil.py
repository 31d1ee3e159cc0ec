"""Forward-compatible few-shot class-incremental learning.

Base training reserves virtual prototype slots in both cosine heads for
classes that have not arrived yet and trains them with pseudo-labels
(highest virtual logit) plus manifold-mixup virtual instances fused at
the second CNN / graph block. After base training both heads are
re-anchored to class-mean embeddings, so the discriminatively trained
rows and the few-shot rows added later live in the same geometry.
Incremental sessions do no gradient work: each new class gets the
normalized mean embedding of its five shots as a prototype, consuming
one virtual slot.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import EncodedDataset, iterate_batches
from .errors import ConfigError, PlanError, ValidationError
from .geometry import Sketch
from .knowledge import KnowledgeMatrix
from .losses import kld_loss
from .metrics import MetricReport
from .model import CosineHead, TwoStreamNet, mask_true_logit
from .train import TrainConfig, TrainResult, encode_for, evaluate, train

PrototypeBank = CosineHead


@dataclass
class SessionStep:
    new_categories: list[int]
    new_components: list[int] = field(default_factory=list)
    shots: int = 5


@dataclass
class SessionPlan:
    base_categories: list[int]
    base_components: list[int]
    sessions: list[SessionStep] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        # prototypes are rows indexed by class id, so ids must be dense and
        # arrive in order: base gets [0, B), session t the next block
        for kind, base, steps in (
            ("category", self.base_categories, [s.new_categories for s in self.sessions]),
            ("component", self.base_components, [s.new_components for s in self.sessions]),
        ):
            seen: list[int] = []
            for chunk in [base, *steps]:
                if len(set(chunk)) != len(chunk):
                    raise PlanError(f"duplicate {kind} ids within one session")
                if set(chunk) & set(seen):
                    raise PlanError(f"{kind} ids repeat across sessions")
                seen.extend(chunk)
            if sorted(seen) != list(range(len(seen))):
                raise PlanError(f"{kind} ids must form a dense 0..{len(seen) - 1} range")
        if sorted(self.base_categories) != self.base_categories or any(
            sorted(s.new_categories) != s.new_categories for s in self.sessions
        ):
            raise PlanError("class ids must be listed in increasing order")
        for s in self.sessions:
            if s.shots <= 0:
                raise PlanError("shots per class must be positive")
            if not s.new_categories and not s.new_components:
                raise PlanError("a session must introduce something")

    @property
    def total_new_categories(self) -> int:
        return sum(len(s.new_categories) for s in self.sessions)

    @property
    def total_new_components(self) -> int:
        return sum(len(s.new_components) for s in self.sessions)

    def to_dict(self) -> dict:
        return {
            "base_categories": list(self.base_categories),
            "base_components": list(self.base_components),
            "sessions": [asdict(s) for s in self.sessions],
        }


def save_plan(plan: SessionPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=1))


def load_plan(path: str | Path) -> SessionPlan:
    try:
        raw = json.loads(Path(path).read_text())
        return SessionPlan(
            base_categories=list(raw["base_categories"]),
            base_components=list(raw["base_components"]),
            sessions=[SessionStep(**s) for s in raw["sessions"]],
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise PlanError(f"cannot read session plan {path}: {e}") from e


@dataclass
class FSCILConfig:
    gamma: float = 0.01
    mixup_alpha: float = 2.0
    mixup_points: int = 512  # cap on per-batch virtual point instances
    seed: int = 0


def fact_loss(embedding: torch.Tensor, y: torch.Tensor, bank: CosineHead, gamma: float) -> torch.Tensor:
    """Cross-entropy over [known, virtual] logits plus the forward term
    that pushes each sample toward its best-matching virtual class."""
    logits = bank(embedding, include_virtual=True)
    base = F.cross_entropy(logits, y)
    if gamma == 0.0:
        return base
    if bank.n_virtual == 0:
        raise ConfigError("fact loss with gamma > 0 needs virtual prototypes")
    with torch.no_grad():
        y_hat = logits[:, bank.n_known :].argmax(dim=-1) + bank.n_known
    return base + gamma * F.cross_entropy(mask_true_logit(logits, y), y_hat)


def fact_mixup_loss(z: torch.Tensor, bank: CosineHead, gamma: float) -> torch.Tensor:
    """Loss on virtual instances: pseudo-label them with the best virtual
    slot, and (masked) with the best known class as a secondary target."""
    if bank.n_virtual == 0:
        raise ConfigError("mixup virtual loss needs virtual prototypes")
    logits = bank(z, include_virtual=True)
    with torch.no_grad():
        y_virtual = logits[:, bank.n_known :].argmax(dim=-1) + bank.n_known
        y_known = logits[:, : bank.n_known].argmax(dim=-1)
    loss = F.cross_entropy(logits, y_virtual)
    if gamma != 0.0:
        loss = loss + gamma * F.cross_entropy(mask_true_logit(logits, y_virtual), y_known)
    return loss


def mixup_virtual(h1: torch.Tensor, h2: torch.Tensor, lam: float) -> torch.Tensor:
    return lam * h1 + (1.0 - lam) * h2


def class_mean_prototypes(
    embeddings: torch.Tensor, labels: torch.Tensor, class_ids: list[int]
) -> torch.Tensor:
    protos = []
    for cid in class_ids:
        sel = labels == cid
        if not bool(sel.any()):
            raise ValidationError(f"no shots carry class {cid}")
        protos.append(F.normalize(embeddings[sel].mean(dim=0), dim=0))
    return torch.stack(protos)


def extend_bank(bank: CosineHead, embeddings: torch.Tensor, labels: torch.Tensor, new_ids: list[int]) -> CosineHead:
    if not new_ids:
        return bank
    expected = list(range(bank.n_known, bank.n_known + len(new_ids)))
    if sorted(new_ids) != expected:
        raise PlanError(f"new class ids {new_ids} collide or skip; expected {expected}")
    bank.extend(class_mean_prototypes(embeddings, labels, new_ids))
    return bank


def _filter_by_category(sketches: list[Sketch], allowed: set[int]) -> list[Sketch]:
    return [sk for sk in sketches if sk.category in allowed]


def _pick_shots(sketches: list[Sketch], categories: list[int], shots: int, rng: np.random.Generator) -> list[Sketch]:
    out: list[Sketch] = []
    for cat in categories:
        pool = [sk for sk in sketches if sk.category == cat]
        if len(pool) < shots:
            raise ValidationError(f"category {cat}: {len(pool)} samples, need {shots} shots")
        idx = rng.choice(len(pool), size=shots, replace=False)
        out.extend(pool[i] for i in sorted(idx))
    return out


def train_fscil_base(
    train_sketches: list[Sketch] | EncodedDataset,
    km: KnowledgeMatrix,
    cfg: TrainConfig,
    fcfg: FSCILConfig,
    plan: SessionPlan,
) -> TrainResult:
    """Base-session training; reduces to the plain trainer when the plan
    reserves nothing and gamma is zero."""
    n_vcat = plan.total_new_categories
    n_vcomp = plan.total_new_components
    if fcfg.gamma == 0.0 and n_vcat == 0 and n_vcomp == 0:
        return train(train_sketches, km, cfg)
    if fcfg.gamma > 0.0 and n_vcat == 0 and n_vcomp == 0:
        raise ConfigError("gamma > 0 needs at least one virtual prototype slot")
    if cfg.head != "cosine":
        raise ConfigError("virtual prototypes need the cosine head")

    torch.manual_seed(cfg.seed)
    ds = train_sketches if isinstance(train_sketches, EncodedDataset) else encode_for(cfg, train_sketches)
    model_cfg = cfg.model_config(
        len(plan.base_categories),
        len(plan.base_components),
        virtual_categories=n_vcat,
        virtual_components=n_vcomp,
    )
    model = TwoStreamNet(model_cfg, km)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    mix_rng = np.random.default_rng(fcfg.seed + 1)
    max_strokes = int(ds.n_strokes.max())
    history: list[dict] = []

    model.train()
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        n_batches = 0
        for idx in iterate_batches(len(ds), cfg.batch_size, gen):
            coords, sid, imgs = ds.coords[idx], ds.stroke_ids[idx], ds.images[idx]
            y_cat, y_comp = ds.y_category[idx], ds.y_component[idx]
            out = model.forward_batch(coords, sid, imgs, n_strokes=max_strokes, apply_gate=False)
            b, n, _ = out["p_s"].shape

            l_rec = fact_loss(out["f_c"], y_cat, model.rec_head, fcfg.gamma)
            l_seg = fact_loss(
                out["f_csg"].reshape(b * n, -1), y_comp.reshape(b * n), model.seg_head, fcfg.gamma
            )
            l_kl = out["p_s"].new_zeros(())
            if cfg.lambda_kld != 0.0:
                km_t = model.km_matrix[: model.rec_head.n_known, : model.seg_head.n_known]
                l_kl = kld_loss(out["p_r"], out["p_s"], sid, km_t, n_strokes=max_strokes)

            l_f_rec = out["p_s"].new_zeros(())
            l_f_seg = out["p_s"].new_zeros(())
            if b > 1:
                perm = torch.randperm(b, generator=gen)
                lam = torch.as_tensor(
                    mix_rng.beta(fcfg.mixup_alpha, fcfg.mixup_alpha, size=b), dtype=coords.dtype
                )
                mid = model.cnn.front(imgs)
                mid_mix = lam[:, None, None, None] * mid + (1 - lam)[:, None, None, None] * mid[perm]
                f_c_mix = model.cnn.back(mid_mix)
                outs = model.gnn_front(coords, None)
                outs_mix = [lam[:, None, None] * o + (1 - lam)[:, None, None] * o[perm] for o in outs]
                f_g_mix = model.gnn_back(outs_mix, None)
                # the chimera keeps the first parent's stroke structure
                _, _, f_csg_mix = model.fuse(f_c_mix, f_g_mix, sid, max_strokes, None)

                if n_vcat > 0:
                    cat_pairs = y_cat != y_cat[perm]
                    if bool(cat_pairs.any()):
                        l_f_rec = fact_mixup_loss(f_c_mix[cat_pairs], model.rec_head, fcfg.gamma)
                if n_vcomp > 0:
                    comp_pairs = (y_comp != y_comp[perm]).reshape(b * n)
                    if bool(comp_pairs.any()):
                        flat = f_csg_mix.reshape(b * n, -1)[comp_pairs]
                        if flat.shape[0] > fcfg.mixup_points:
                            keep = torch.randperm(flat.shape[0], generator=gen)[: fcfg.mixup_points]
                            flat = flat[keep]
                        l_f_seg = fact_mixup_loss(flat, model.seg_head, fcfg.gamma)

            loss = (l_seg + l_f_seg) + cfg.lambda_rec * (l_rec + l_f_rec) + cfg.lambda_kld * l_kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts = {
                "loss": float(loss.detach()), "rec": float(l_rec.detach()),
                "seg": float(l_seg.detach()), "kld": float(l_kl.detach()),
                "virt_rec": float(l_f_rec.detach()), "virt_seg": float(l_f_seg.detach()),
            }
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        history.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
    _reanchor_known(model, ds, cfg)
    return TrainResult(model=model, config=cfg, history=history)


@torch.no_grad()
def _reanchor_known(model: TwoStreamNet, ds: EncodedDataset, cfg: TrainConfig) -> None:
    """Replace the trained base prototypes with class-mean embeddings.

    Incremental rows are means of a handful of shots; leaving the base
    rows where gradient descent put them mixes two geometries, and the
    class-mean rows win nearly every cosine comparison, wiping out base
    accuracy after the first extension.
    """
    assert isinstance(model.rec_head, CosineHead) and isinstance(model.seg_head, CosineHead)
    model.eval()
    max_strokes = int(ds.n_strokes.max())
    f_c_all, f_pt_all = [], []
    for lo in range(0, len(ds), cfg.batch_size):
        sl = slice(lo, lo + cfg.batch_size)
        out = model.forward_batch(
            ds.coords[sl], ds.stroke_ids[sl], ds.images[sl], n_strokes=max_strokes, apply_gate=False
        )
        f_c_all.append(out["f_c"])
        f_pt_all.append(out["f_csg"].reshape(-1, out["f_csg"].shape[-1]))
    f_c, f_pts = torch.cat(f_c_all), torch.cat(f_pt_all)
    model.rec_head.weight.data[: model.rec_head.n_known] = class_mean_prototypes(
        f_c, ds.y_category, list(range(model.rec_head.n_known))
    )
    model.seg_head.weight.data[: model.seg_head.n_known] = class_mean_prototypes(
        f_pts, ds.y_component.reshape(-1), list(range(model.seg_head.n_known))
    )


@torch.no_grad()
def _shot_embeddings(model: TwoStreamNet, ds: EncodedDataset) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    model.eval()
    max_strokes = int(ds.n_strokes.max())
    out = model.forward_batch(ds.coords, ds.stroke_ids, ds.images, n_strokes=max_strokes, apply_gate=False)
    f_c = out["f_c"]
    b, n, fdim = out["f_csg"].shape
    return f_c, ds.y_category, out["f_csg"].reshape(b * n, fdim), ds.y_component.reshape(b * n)


def extend_session(
    model: TwoStreamNet,
    shots: list[Sketch] | EncodedDataset,
    step: SessionStep,
    cfg: TrainConfig,
) -> TwoStreamNet:
    """Grow both heads from few-shot data; no gradient updates happen."""
    if not isinstance(model.rec_head, CosineHead) or not isinstance(model.seg_head, CosineHead):
        raise ConfigError("incremental sessions need cosine heads")
    if not step.new_categories and not step.new_components:
        return model
    ds = shots if isinstance(shots, EncodedDataset) else encode_for(cfg, shots)
    f_c, y_cat, f_pts, y_pts = _shot_embeddings(model, ds)
    extend_bank(model.rec_head, f_c, y_cat, step.new_categories)
    extend_bank(model.seg_head, f_pts, y_pts, step.new_components)
    return model


@dataclass
class SessionReport:
    session: int
    categories_seen: int
    components_seen: int
    report: MetricReport

    def to_dict(self) -> dict:
        return {
            "session": self.session,
            "categories_seen": self.categories_seen,
            "components_seen": self.components_seen,
            **self.report.to_dict(),
        }


def run_sessions(
    plan: SessionPlan,
    train_sketches: list[Sketch],
    test_sketches: list[Sketch],
    km: KnowledgeMatrix,
    cfg: TrainConfig,
    fcfg: FSCILConfig,
    base_model: TwoStreamNet | None = None,
) -> tuple[list[SessionReport], TwoStreamNet]:
    """Base training plus every incremental step, evaluating after each."""
    seen_cats = set(plan.base_categories)
    base_train = _filter_by_category(train_sketches, seen_cats)
    if base_model is None:
        result = train_fscil_base(base_train, km, cfg, fcfg, plan)
        model = result.model
    else:
        model = copy.deepcopy(base_model)

    rng = np.random.default_rng(fcfg.seed)
    reports: list[SessionReport] = []

    def snapshot(session: int) -> None:
        eval_set = _filter_by_category(test_sketches, seen_cats)
        if not eval_set:
            raise ValidationError(f"no test data for session {session}")
        report, _, _ = evaluate(model, eval_set, cfg)
        reports.append(
            SessionReport(
                session=session,
                categories_seen=model.rec_head.n_known if isinstance(model.rec_head, CosineHead) else model.cfg.n_categories,
                components_seen=model.seg_head.n_known if isinstance(model.seg_head, CosineHead) else model.cfg.n_components,
                report=report,
            )
        )

    snapshot(0)
    for t, step in enumerate(plan.sessions, start=1):
        shots = _pick_shots(train_sketches, step.new_categories, step.shots, rng)
        extend_session(model, shots, step, cfg)
        seen_cats.update(step.new_categories)
        snapshot(t)
    return reports, model
