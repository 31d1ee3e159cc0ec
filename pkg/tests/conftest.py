"""Shared fixtures.

The expensive experiment fixtures (ablation sweep, incremental-session
run) are session-scoped so the acceptance gates and the module tests
that inspect the same runs pay for them once.
"""

from types import SimpleNamespace
from time import perf_counter

import pytest
import torch
from hypothesis import settings as hyp_settings

from sketchkit.adapt import DAConfig, adapt, sample_shots
from sketchkit.data import stratified_split
from sketchkit.fscil import FSCILConfig, SessionPlan, SessionStep, run_sessions, train_fscil_base
from sketchkit.synth import default_spec, generate_synthetic_corpus, knowledge_for_spec
from sketchkit.train import TrainConfig, evaluate, train

# Experiment numbers in the heavy tests were frozen at this thread count;
# reductions reorder float sums across thread counts, so pin it.
torch.set_num_threads(2)

hyp_settings.register_profile("det", deadline=None, derandomize=True)
hyp_settings.load_profile("det")

STYLES = ["s0", "s1", "s2"]


@pytest.fixture(scope="session")
def tiny_setup():
    """A small trained model for plumbing tests (checkpoints, serving, CLI)."""
    spec = default_spec()
    km = knowledge_for_spec(spec)
    sketches = generate_synthetic_corpus(spec, seed=11, samples_per_category=6, style_ids=["s0"])
    cfg = TrainConfig(seed=11, epochs=3)
    result = train(sketches, km, cfg)
    return SimpleNamespace(
        spec=spec, km=km, sketches=sketches, cfg=cfg, model=result.model, history=result.history
    )


@pytest.fixture(scope="session")
def ablation_runs():
    """Five-seed sweep of the three model variants on the stock corpus.

    Per seed: a feature-fusion-only model (coupling loss off), the same
    plus the coupling loss, and the latter evaluated with the category
    gate. Keeps the seed-0 artifacts for the recognition-split analysis.
    """
    spec = default_spec()
    km = knowledge_for_spec(spec)
    rows = []
    seed0 = None
    t0 = perf_counter()
    for seed in range(5):
        corpus = generate_synthetic_corpus(spec, seed=seed, samples_per_category=30, style_ids=STYLES)
        tr, te, _ = stratified_split(corpus, test_fraction=1 / 3, seed=seed)
        per = {}
        for name, kld in (("cfa", 0.0), ("kld", 1.0)):
            cfg = TrainConfig(seed=seed, lambda_kld=kld, use_gate=False)
            res = train(tr, km, cfg)
            rep, _, _ = evaluate(res.model, te, cfg, apply_gate=False)
            per[name] = rep
            if name == "kld":
                per["rsm"], _, _ = evaluate(res.model, te, cfg, apply_gate=True)
                if seed == 0:
                    seed0 = SimpleNamespace(model=res.model, cfg=cfg, test=te)
        rows.append(per)
    return SimpleNamespace(rows=rows, seed0=seed0, km=km, elapsed_s=perf_counter() - t0)


@pytest.fixture(scope="session")
def da_sweep():
    """Five-seed few-shot adaptation sweep onto the shifted style.

    Per seed: train on the stock styles, score the shifted test set cold,
    then adapt with 1, 2 and 5 target shots per category and score again.
    Seed 0 keeps the base model, a parameter snapshot taken before any
    adaptation, and the 5-shot result for the purity and confusion tests.
    """
    spec = default_spec()
    km = knowledge_for_spec(spec)
    acc = {0: [], 1: [], 2: [], 5: []}
    seed0 = None
    t0 = perf_counter()
    for seed in range(5):
        src = generate_synthetic_corpus(spec, seed=seed, samples_per_category=20, style_ids=STYLES)
        pool = generate_synthetic_corpus(
            spec, seed=seed + 100, samples_per_category=10, style_ids=["shifted"]
        )
        test = generate_synthetic_corpus(
            spec, seed=seed + 200, samples_per_category=10, style_ids=["shifted"]
        )
        cfg = TrainConfig(seed=seed)
        base = train(src, km, cfg)
        rep0, _, _ = evaluate(base.model, test, cfg, apply_gate=False)
        acc[0].append(rep0.acc1)
        snapshot = [p.detach().clone() for p in base.model.parameters()] if seed == 0 else None
        for shots in (1, 2, 5):
            dcfg = DAConfig(shots_per_class_target=shots, steps=120, seed=seed)
            res = adapt(
                base.model,
                sample_shots(src, dcfg.shots_per_class_source, seed),
                sample_shots(pool, shots, seed),
                cfg,
                dcfg,
            )
            rep, _, _ = evaluate(res.model, test, cfg, apply_gate=False)
            acc[shots].append(rep.acc1)
            if seed == 0 and shots == 5:
                seed0 = SimpleNamespace(
                    base_model=base.model,
                    snapshot=snapshot,
                    result=res,
                    dcfg=dcfg,
                    cfg=cfg,
                    pre=rep0.acc1,
                    post=rep.acc1,
                )
    means = {k: sum(v) / len(v) for k, v in acc.items()}
    return SimpleNamespace(acc=acc, means=means, seed0=seed0, km=km, elapsed_s=perf_counter() - t0)


@pytest.fixture(scope="session")
def fscil_run():
    """Base training plus two five-shot extension sessions on the extended
    corpus (4 new categories, 2 new components)."""
    spec = default_spec(extended=True)
    km = knowledge_for_spec(spec)
    corpus = generate_synthetic_corpus(spec, seed=0, samples_per_category=30, style_ids=STYLES)
    tr, te, _ = stratified_split(corpus, test_fraction=1 / 3, seed=0)
    plan = SessionPlan(
        base_categories=list(range(12)),
        base_components=list(range(6)),
        sessions=[
            SessionStep(new_categories=[12, 13], new_components=[6], shots=5),
            SessionStep(new_categories=[14, 15], new_components=[7], shots=5),
        ],
    )
    cfg = TrainConfig(seed=0, head="cosine")
    fcfg = FSCILConfig(seed=0)
    base_train = [sk for sk in tr if sk.category in set(plan.base_categories)]
    t0 = perf_counter()
    base = train_fscil_base(base_train, km, cfg, fcfg, plan)
    reports, final_model = run_sessions(plan, tr, te, km, cfg, fcfg, base_model=base.model)
    return SimpleNamespace(
        plan=plan,
        reports=reports,
        base_model=base.model,
        final_model=final_model,
        elapsed_s=perf_counter() - t0,
    )
