"""Command-line entry points.

Exit codes: 0 success, 2 validation/config/data errors, 3 numeric
failures (divergence, non-finite values).
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict
from pathlib import Path

import click

from .adapt import DAConfig, adapt as run_adapt, sample_shots
from .checkpoint import load_checkpoint, save_checkpoint
from .data import stratified_split
from .errors import NumericError, ValidationError
from .geometry import load_sketches, save_sketches
from .knowledge import load_knowledge, save_knowledge
from .spg import import_spg
from .synth import default_spec, generate_synthetic_corpus, knowledge_for_spec, load_spec, save_spec
from .train import TrainConfig, config_for_profile, evaluate, train


@click.group()
def cli() -> None:
    """Sketch recognition + segmentation toolkit."""


def _echo_json(obj: dict, path: str | None = None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path:
        Path(path).write_text(text)
    click.echo(text)


def _load_train_config(profile: str, config_file: str | None, overrides: dict) -> TrainConfig:
    base: dict = {}
    if config_file:
        try:
            base = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read config {config_file}: {e}") from e
        profile = base.pop("profile", profile)
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return config_for_profile(profile, **base)
    except TypeError as e:
        raise ValidationError(f"bad config field: {e}") from e


def _mapping_from_sketches(sketches) -> dict[int, set[int]]:
    mapping: dict[int, set[int]] = {}
    for sk in sketches:
        if sk.category is None:
            raise ValidationError("cannot derive knowledge from unlabeled sketches")
        comps = {s.semantic_label for s in sk.strokes if s.semantic_label is not None}
        mapping.setdefault(sk.category, set()).update(comps)
    return mapping


@cli.command()
@click.option("--spec", "spec_file", type=click.Path(exists=True), help="synthesis spec JSON")
@click.option("--extended", is_flag=True, help="use the extended stock spec (extra classes)")
@click.option("--out", required=True, type=click.Path(), help="corpus NDJSON to write")
@click.option("--seed", default=0, show_default=True)
@click.option("--per-category", type=int, default=None, help="override spec sample count")
@click.option("--styles", default=None, help="comma-separated style ids")
@click.option("--knowledge", "knowledge_out", type=click.Path(), help="also write the knowledge NDJSON")
@click.option("--save-spec", "spec_out", type=click.Path(), help="write the effective spec JSON")
def synth(spec_file, extended, out, seed, per_category, styles, knowledge_out, spec_out):
    """Generate a labeled synthetic corpus."""
    spec = load_spec(spec_file) if spec_file else default_spec(extended=extended)
    style_ids = styles.split(",") if styles else None
    sketches = generate_synthetic_corpus(spec, seed, per_category, style_ids)
    n = save_sketches(out, sketches)
    if knowledge_out:
        save_knowledge(knowledge_for_spec(spec), knowledge_out)
    if spec_out:
        save_spec(spec, spec_out)
    click.echo(f"wrote {n} sketches to {out}")


@cli.command(name="train")
@click.option("--data", required=True, type=click.Path(exists=True), help="labeled corpus NDJSON")
@click.option("--knowledge", "knowledge_file", type=click.Path(exists=True), help="knowledge NDJSON (derived from data when omitted)")
@click.option("--out", required=True, type=click.Path(), help="checkpoint path")
@click.option("--profile", default="desk", show_default=True, type=click.Choice(["desk", "full"]))
@click.option("--config", "config_file", type=click.Path(exists=True), help="JSON with TrainConfig fields")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch", "batch_size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--cfa/--no-cfa", default=True, show_default=True, help="concat image feature onto nodes")
@click.option("--rsm/--no-rsm", default=True, show_default=True, help="recognition-gated segmentation at eval")
@click.option("--kld/--no-kld", default=True, show_default=True, help="prediction-coupling KL loss term")
@click.option("--test-fraction", default=0.2, show_default=True)
@click.option("--report", "report_out", type=click.Path(), help="write the eval report JSON here")
def train_cmd(data, knowledge_file, out, profile, config_file, seed, epochs, batch_size, lr,
              cfa, rsm, kld, test_fraction, report_out):
    """Train a model and evaluate it on a held-out split."""
    overrides = {
        "seed": seed, "epochs": epochs, "batch_size": batch_size, "lr": lr,
        "use_image_feature": cfa, "use_gate": rsm, "lambda_kld": 1.0 if kld else 0.0,
    }
    cfg = _load_train_config(profile, config_file, overrides)
    sketches = load_sketches(data)
    if knowledge_file:
        km = load_knowledge(knowledge_file, gamma_r=cfg.gamma_r)
    else:
        from .knowledge import build_knowledge_matrix

        km = build_knowledge_matrix(_mapping_from_sketches(sketches), gamma_r=cfg.gamma_r)
    train_set, test_set, manifest = stratified_split(sketches, test_fraction, cfg.seed)
    result = train(train_set, km, cfg, eval_sketches=test_set)
    save_checkpoint(out, result.model, extra={"train_config": asdict(cfg), "split_manifest": manifest})
    report = {
        "profile": cfg.profile,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "train_time_s": round(result.train_time_s, 3),
        "split_manifest": manifest,
        "metrics": result.eval_report.to_dict() if result.eval_report else None,
        "checkpoint": str(out),
    }
    _echo_json(report, report_out)


@cli.command(name="eval")
@click.option("--model", "model_file", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--gate/--no-gate", default=None, help="override the checkpoint's gate setting")
@click.option("--report", "report_out", type=click.Path())
def eval_cmd(model_file, data, gate, report_out):
    """Evaluate a checkpoint on a labeled corpus."""
    model, meta = load_checkpoint(model_file)
    cfg = TrainConfig(**meta["extra"]["train_config"]) if meta["extra"].get("train_config") else TrainConfig()
    sketches = load_sketches(data)
    report, _, _ = evaluate(model, sketches, cfg, apply_gate=gate)
    _echo_json({"model": str(model_file), "metrics": report.to_dict()}, report_out)


@cli.command(name="adapt")
@click.option("--model", "model_file", required=True, type=click.Path(exists=True))
@click.option("--source", required=True, type=click.Path(exists=True), help="source-domain corpus")
@click.option("--target", required=True, type=click.Path(exists=True), help="target-user corpus")
@click.option("--out", required=True, type=click.Path(), help="adapted checkpoint path")
@click.option("--shots", default="5", show_default=True, type=click.Choice(["1", "2", "5"]))
@click.option("--steps", default=200, show_default=True, type=int)
@click.option("--lambda-adv", default=1.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--eval-data", type=click.Path(exists=True), help="held-out target data to score pre/post")
@click.option("--report", "report_out", type=click.Path())
def adapt_cmd(model_file, source, target, out, shots, steps, lambda_adv, seed, eval_data, report_out):
    """Adapt a trained model to a new user's labeled shots."""
    model, meta = load_checkpoint(model_file)
    cfg = TrainConfig(**meta["extra"]["train_config"]) if meta["extra"].get("train_config") else TrainConfig()
    da_cfg = DAConfig(
        lambda_adv=lambda_adv, shots_per_class_target=int(shots), steps=steps, seed=seed
    )
    source_sketches = load_sketches(source)
    target_sketches = load_sketches(target)
    src = sample_shots(source_sketches, da_cfg.shots_per_class_source, seed)
    tgt = sample_shots(target_sketches, da_cfg.shots_per_class_target, seed)
    report: dict = {"shots": int(shots), "steps": steps}
    held_out = load_sketches(eval_data) if eval_data else None
    if held_out:
        pre, _, _ = evaluate(model, held_out, cfg)
        report["pre_adapt"] = pre.to_dict()
    result = run_adapt(model, src, tgt, cfg, da_cfg)
    save_checkpoint(out, result.model, extra={"train_config": asdict(cfg), "adapted_from": str(model_file)})
    report.update(
        {
            "adapt_time_s": round(result.adapt_time_s, 3),
            "domain_acc_rec": result.domain_acc_rec,
            "domain_acc_seg": result.domain_acc_seg,
            "checkpoint": str(out),
        }
    )
    if held_out:
        post, _, _ = evaluate(result.model, held_out, cfg)
        report["post_adapt"] = post.to_dict()
    _echo_json(report, report_out)


@cli.command(name="cil")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--test-data", type=click.Path(exists=True), help="separate eval corpus (defaults to a split)")
@click.option("--knowledge", "knowledge_file", required=True, type=click.Path(exists=True))
@click.option("--plan", "plan_file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="final checkpoint path")
@click.option("--profile", default="desk", show_default=True, type=click.Choice(["desk", "full"]))
@click.option("--gamma", default=0.01, show_default=True, type=float)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--report", "report_out", type=click.Path())
def cil_cmd(data, test_data, knowledge_file, plan_file, out, profile, gamma, seed, epochs, report_out):
    """Run a class-incremental session plan."""
    from .fscil import FSCILConfig, load_plan, run_sessions

    overrides = {"seed": seed, "epochs": epochs, "head": "cosine"}
    cfg = _load_train_config(profile, None, overrides)
    km = load_knowledge(knowledge_file, gamma_r=cfg.gamma_r)
    sketches = load_sketches(data)
    if test_data:
        train_set, test_set = sketches, load_sketches(test_data)
    else:
        train_set, test_set, _ = stratified_split(sketches, 0.25, cfg.seed)
    plan = load_plan(plan_file)
    fcfg = FSCILConfig(gamma=gamma, seed=cfg.seed)
    reports, model = run_sessions(plan, train_set, test_set, km, cfg, fcfg)
    save_checkpoint(out, model, extra={"train_config": asdict(cfg), "plan": plan.to_dict()})
    _echo_json({"sessions": [r.to_dict() for r in reports], "checkpoint": str(out)}, report_out)


@cli.command(name="import-spg")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True), help=".ndjson file or directory")
@click.option("--out", required=True, type=click.Path(), help="canonical corpus NDJSON")
@click.option("--categories", default=None, help="comma-separated category names to keep (order fixes ids)")
@click.option("--knowledge", "knowledge_out", type=click.Path(), help="derive and write knowledge NDJSON")
def import_spg_cmd(in_path, out, categories, knowledge_out):
    """Convert part-labeled quickdraw-style NDJSON to the canonical format."""
    cats = categories.split(",") if categories else None
    result = import_spg(in_path, categories=cats)
    n = save_sketches(out, result.sketches)
    if knowledge_out:
        mapping = _mapping_from_sketches(result.sketches)
        names = {i: name for i, name in enumerate(result.categories)}
        save_knowledge(mapping, knowledge_out, category_names=names)
    click.echo(
        f"imported {n} sketches, {len(result.categories)} categories, "
        f"{len(result.components)} components (skipped {result.skipped})"
    )


@cli.command()
@click.option("--model", "model_file", type=click.Path(), default=None, envvar="SKETCHKIT_MODEL")
@click.option("--store", type=click.Path(), default="serve_store", envvar="SKETCHKIT_STORE")
@click.option("--source-pool", type=click.Path(), default=None, envvar="SKETCHKIT_SOURCE_POOL")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, envvar="SKETCHKIT_PORT", type=int)
@click.option("--inline-jobs", is_flag=True, help="run adaptation jobs synchronously")
def serve(model_file, store, source_pool, host, port, inline_jobs):
    """Start the HTTP recommendation service."""
    import uvicorn

    from .server import create_app

    app = create_app(model_file, store, source_pool, inline_jobs=inline_jobs)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None):
    try:
        return cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except click.Abort:
        sys.exit(1)
    except NumericError as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(3)
    except (ValidationError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
