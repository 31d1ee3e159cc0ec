"""Self-describing model archives.

A checkpoint is a zip holding one .npy file per parameter/buffer under
arrays/, plus meta.json with the model config, the knowledge mapping,
and classifier head sizes. Loading rebuilds the module from meta alone,
so an archive is portable across processes and does not pickle code.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError
from .knowledge import KnowledgeMatrix, build_knowledge_matrix
from .model import CosineHead, ModelConfig, TwoStreamNet

FORMAT_VERSION = 1
KIND = "sketch-recseg-model"


def _head_meta(head) -> dict:
    if isinstance(head, CosineHead):
        return {"kind": "cosine", "n_known": head.n_known, "n_virtual": head.n_virtual}
    return {"kind": "linear"}


def save_checkpoint(path: str | Path, model: TwoStreamNet, extra: dict | None = None) -> None:
    km = model.knowledge
    meta = {
        "kind": KIND,
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "knowledge": {
            "mapping": {str(k): sorted(v) for k, v in km.mapping().items()},
            "gamma_r": km.gamma_r,
            "n_categories": km.n_categories,
            "n_components": km.n_components,
            "category_names": {str(k): v for k, v in km.category_names.items()},
            "component_names": {str(k): v for k, v in km.component_names.items()},
        },
        "heads": {"rec": _head_meta(model.rec_head), "seg": _head_meta(model.seg_head)},
        "extra": extra or {},
    }
    state = model.state_dict()
    meta["arrays"] = sorted(state.keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=1, sort_keys=True))
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(f"arrays/{name}.npy", buf.getvalue())


def read_meta(path: str | Path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as e:
        raise ValidationError(f"not a model archive: {path} ({e})") from e
    if meta.get("kind") != KIND:
        raise ValidationError(f"archive kind {meta.get('kind')!r} is not {KIND!r}")
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported archive version {meta.get('format_version')!r}")
    return meta


def _knowledge_from_meta(meta: dict) -> KnowledgeMatrix:
    know = meta["knowledge"]
    mapping = {int(k): list(v) for k, v in know["mapping"].items()}
    return build_knowledge_matrix(
        mapping,
        gamma_r=know["gamma_r"],
        n_categories=know["n_categories"],
        n_components=know["n_components"],
        category_names={int(k): v for k, v in (know.get("category_names") or {}).items()},
        component_names={int(k): v for k, v in (know.get("component_names") or {}).items()},
    )


def load_checkpoint(path: str | Path) -> tuple[TwoStreamNet, dict]:
    meta = read_meta(path)
    raw_cfg = dict(meta["model_config"])
    for key in ("dilations", "cnn_channels"):
        raw_cfg[key] = tuple(raw_cfg[key])
    cfg = ModelConfig(**raw_cfg)
    km = _knowledge_from_meta(meta)
    model = TwoStreamNet(cfg, km)
    for stream, attr in (("rec", "rec_head"), ("seg", "seg_head")):
        info = meta["heads"][stream]
        if info["kind"] == "cosine":
            head: CosineHead = getattr(model, attr)
            head.n_known = info["n_known"]
            head.n_virtual = info["n_virtual"]
            dim = head.weight.shape[1]
            head.weight = torch.nn.Parameter(torch.empty(info["n_known"] + info["n_virtual"], dim))
    state: dict[str, torch.Tensor] = {}
    with zipfile.ZipFile(path) as zf:
        for name in meta["arrays"]:
            arr = np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")))
            state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model, meta
