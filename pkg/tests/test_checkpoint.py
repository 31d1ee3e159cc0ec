import json
import zipfile

import pytest
import torch

from sketchkit.checkpoint import load_checkpoint, read_meta, save_checkpoint
from sketchkit.errors import ValidationError
from sketchkit.knowledge import build_knowledge_matrix
from sketchkit.model import CosineHead, ModelConfig, TwoStreamNet


def small_model(head="linear", n_virtual=0):
    torch.manual_seed(4)
    km = build_knowledge_matrix(
        {0: [0, 1], 1: [1, 2], 2: [2, 3]}, gamma_r=0.9, category_names={0: "a"}
    )
    cfg = ModelConfig(
        n_categories=3,
        n_components=4,
        sketch_feature_dim=8,
        gnn_blocks=2,
        per_block_dim=4,
        dilations=(1, 2),
        knn_k=3,
        cnn_channels=(4, 8),
        spool_hidden=8,
        topk=2,
        head=head,
        virtual_categories=n_virtual,
        virtual_components=n_virtual,
    )
    return TwoStreamNet(cfg, km)


def _inputs():
    g = torch.Generator().manual_seed(1)
    return torch.rand(2, 10, 2, generator=g), torch.arange(10).repeat(2, 1) // 5, torch.rand(2, 3, 16, 16, generator=g)


def test_round_trip_preserves_outputs(tmp_path):
    model = small_model()
    model.eval()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, extra={"note": "x"})
    back, meta = load_checkpoint(path)
    assert meta["extra"] == {"note": "x"}
    assert meta["knowledge"]["category_names"]["0"] == "a"
    coords, sid, imgs = _inputs()
    a = model.forward_batch(coords, sid, imgs)
    b = back.forward_batch(coords, sid, imgs)
    assert torch.equal(a["p_r"], b["p_r"])
    assert torch.equal(a["p_s_final"], b["p_s_final"])


def test_round_trip_after_head_extension(tmp_path):
    model = small_model(head="cosine", n_virtual=2)
    model.rec_head.extend(torch.randn(1, 8))
    model.seg_head.extend(torch.randn(1, model.cfg.node_feature_dim))
    model.eval()
    path = tmp_path / "extended.ckpt"
    save_checkpoint(path, model)
    back, meta = load_checkpoint(path)
    assert isinstance(back.rec_head, CosineHead)
    assert back.rec_head.n_known == 4 and back.rec_head.n_virtual == 1
    assert torch.equal(back.rec_head.weight, model.rec_head.weight)
    coords, sid, imgs = _inputs()
    a = model.forward_batch(coords, sid, imgs, apply_gate=False)
    b = back.forward_batch(coords, sid, imgs, apply_gate=False)
    assert torch.equal(a["p_s"], b["p_s"])


def test_meta_is_self_describing(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    meta = read_meta(path)
    assert meta["kind"] == "sketch-recseg-model"
    assert meta["format_version"] == 1
    assert meta["model_config"]["n_categories"] == 3
    assert meta["knowledge"]["mapping"]["1"] == [1, 2]
    # arrays listing matches the zip contents
    with zipfile.ZipFile(path) as zf:
        stored = {n for n in zf.namelist() if n.startswith("arrays/")}
    assert stored == {f"arrays/{n}.npy" for n in meta["arrays"]}


def test_rejects_foreign_files(tmp_path):
    plain = tmp_path / "not_a_zip.ckpt"
    plain.write_text("hello")
    with pytest.raises(ValidationError):
        read_meta(plain)

    wrong_kind = tmp_path / "wrong.ckpt"
    with zipfile.ZipFile(wrong_kind, "w") as zf:
        zf.writestr("meta.json", json.dumps({"kind": "other", "format_version": 1}))
    with pytest.raises(ValidationError):
        read_meta(wrong_kind)

    wrong_version = tmp_path / "old.ckpt"
    with zipfile.ZipFile(wrong_version, "w") as zf:
        zf.writestr("meta.json", json.dumps({"kind": "sketch-recseg-model", "format_version": 99}))
    with pytest.raises(ValidationError):
        read_meta(wrong_version)


def test_no_pickle_inside(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model())
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            assert name == "meta.json" or name.endswith(".npy")
        for name in zf.namelist():
            if name.endswith(".npy"):
                # npy v1 headers for plain arrays; no pickled objects
                assert zf.read(name)[:6] == b"\x93NUMPY"
