import numpy as np
import pytest
import torch

from sketchkit.data import (
    corpus_digest,
    encode_dataset,
    iterate_batches,
    stratified_split,
)
from sketchkit.errors import LabelError, ValidationError
from sketchkit.geometry import Point, Sketch, Stroke
from sketchkit.raster import RenderConfig
from sketchkit.synth import default_spec, generate_synthetic_corpus

RENDER = RenderConfig(height=24, width=24, line_width=2.0)


def _sk(cat=0, labels=(1, 2)):
    return Sketch(
        [
            Stroke([Point(0, 0), Point(1, 0.5)], semantic_label=labels[0]),
            Stroke([Point(0.5, 1), Point(1, 1), Point(0, 0.2)], semantic_label=labels[1]),
        ],
        category=cat,
    )


def test_encode_shapes_and_labels():
    ds = encode_dataset([_sk(0), _sk(3, labels=(0, 0))], n_points=10, render=RENDER)
    assert len(ds) == 2 and ds.n_points == 10
    assert ds.coords.shape == (2, 10, 2) and ds.coords.dtype == torch.float32
    assert ds.images.shape == (2, 3, 24, 24)
    assert ds.y_category.tolist() == [0, 3]
    assert ds.n_strokes.tolist() == [2, 2]
    # labels follow stroke membership
    for i in range(2):
        sid = ds.stroke_ids[i]
        comp = ds.y_component[i]
        for j in range(2):
            vals = comp[sid == j]
            assert (vals == vals[0]).all()


def test_encode_coordinates_are_normalized():
    big = Sketch([Stroke([Point(100, 50), Point(300, 250)], semantic_label=0)], category=0)
    ds = encode_dataset([big], n_points=6, render=RENDER)
    assert ds.coords.min() >= 0.0 and ds.coords.max() <= 1.0


def test_encode_label_requirements():
    unlabeled = Sketch([Stroke([Point(0, 0), Point(1, 1)])])
    with pytest.raises(LabelError):
        encode_dataset([unlabeled], n_points=4, render=RENDER)
    ds = encode_dataset([unlabeled], n_points=4, render=RENDER, require_labels=False)
    assert ds.y_category.tolist() == [-1]
    assert (ds.y_component == -1).all()
    with pytest.raises(ValidationError):
        encode_dataset([], n_points=4, render=RENDER)


def test_subset_preserves_alignment():
    ds = encode_dataset([_sk(0), _sk(1), _sk(2)], n_points=8, render=RENDER)
    sub = ds.subset([2, 0])
    assert sub.y_category.tolist() == [2, 0]
    assert torch.equal(sub.coords[0], ds.coords[2])
    assert torch.equal(sub.images[1], ds.images[0])


def test_iterate_batches_cover_everything():
    gen = torch.Generator().manual_seed(0)
    seen = torch.cat(list(iterate_batches(10, 3, gen)))
    assert sorted(seen.tolist()) == list(range(10))
    sizes = [len(b) for b in iterate_batches(10, 3, torch.Generator().manual_seed(1))]
    assert sizes == [3, 3, 3, 1]
    ordered = torch.cat(list(iterate_batches(5, 2, shuffle=False)))
    assert ordered.tolist() == [0, 1, 2, 3, 4]


def test_digest_is_order_sensitive_and_stable():
    a, b = _sk(0), _sk(1)
    assert corpus_digest([a, b]) == corpus_digest([a, b])
    assert corpus_digest([a, b]) != corpus_digest([b, a])


def test_stratified_split_properties():
    corpus = generate_synthetic_corpus(default_spec(), seed=0, samples_per_category=6)
    train, test, manifest = stratified_split(corpus, test_fraction=1 / 3, seed=0)
    assert len(train) + len(test) == len(corpus)
    for cat in range(12):
        assert sum(1 for s in test if s.category == cat) == 2
        assert sum(1 for s in train if s.category == cat) == 4
    assert manifest["splits"]["train"]["sha256"] == corpus_digest(train)
    assert manifest["splits"]["test"]["count"] == len(test)
    # no sketch lands on both sides
    train_d = {corpus_digest([s]) for s in train}
    test_d = {corpus_digest([s]) for s in test}
    assert not train_d & test_d


def test_stratified_split_deterministic():
    corpus = generate_synthetic_corpus(default_spec(), seed=1, samples_per_category=4)
    a = stratified_split(corpus, 0.25, seed=9)[2]
    b = stratified_split(corpus, 0.25, seed=9)[2]
    c = stratified_split(corpus, 0.25, seed=10)[2]
    assert a == b
    assert a["splits"]["test"]["sha256"] != c["splits"]["test"]["sha256"]


def test_stratified_split_validation():
    corpus = generate_synthetic_corpus(default_spec(), seed=0, samples_per_category=2)
    with pytest.raises(ValidationError):
        stratified_split(corpus, 0.0, seed=0)
    with pytest.raises(ValidationError):
        stratified_split(corpus, 0.9, seed=0)  # would empty the train side
    unlabeled = [Sketch([Stroke([Point(0, 0), Point(1, 1)])])]
    with pytest.raises(LabelError):
        stratified_split(unlabeled, 0.5, seed=0)