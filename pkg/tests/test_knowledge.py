import numpy as np
import pytest

from sketchkit.errors import KnowledgeError
from sketchkit.knowledge import (
    build_knowledge_matrix,
    load_knowledge,
    load_knowledge_mapping,
    save_knowledge,
)


def test_matrix_entries():
    km = build_knowledge_matrix({0: [0, 2], 1: [1]}, gamma_r=0.9)
    assert km.matrix.shape == (2, 3)
    assert np.allclose(km.matrix[0], [0.9, 0.1, 0.9])
    assert np.allclose(km.matrix[1], [0.1, 0.9, 0.1])


def test_components_of_inverts_construction():
    mapping = {0: [0, 1], 1: [2], 2: [0, 2, 3]}
    km = build_knowledge_matrix(mapping, gamma_r=0.8)
    assert km.mapping() == {k: sorted(v) for k, v in mapping.items()}


def test_gamma_range():
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({0: [0]}, gamma_r=0.5)
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({0: [0]}, gamma_r=1.2)
    km = build_knowledge_matrix({0: [0]}, gamma_r=1.0)
    assert km.matrix[0, 0] == 1.0


def test_explicit_sizes_pad_unlisted_classes():
    km = build_knowledge_matrix({0: [0]}, n_categories=3, n_components=2, gamma_r=0.9)
    assert km.matrix.shape == (3, 2)
    assert np.allclose(km.matrix[2], [0.1, 0.1])


def test_size_and_content_validation():
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({})
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({0: []})
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({0: [5]}, n_components=3)
    with pytest.raises(KnowledgeError):
        build_knowledge_matrix({4: [0]}, n_categories=2)


def test_file_round_trip(tmp_path):
    km = build_knowledge_matrix(
        {0: [0, 3], 1: [1, 2]}, gamma_r=0.85, category_names={0: "box+tick", 1: "other"}
    )
    path = tmp_path / "km.ndjson"
    save_knowledge(km, path)
    mapping, names = load_knowledge_mapping(path)
    assert mapping == {0: [0, 3], 1: [1, 2]}
    assert names == {0: "box+tick", 1: "other"}
    back = load_knowledge(path, gamma_r=0.85)
    assert np.array_equal(back.matrix, km.matrix)


def test_load_rejects_bad_records(tmp_path):
    path = tmp_path / "km.ndjson"
    path.write_text('{"category": 0}\n')
    with pytest.raises(KnowledgeError):
        load_knowledge_mapping(path)
    path.write_text("")
    with pytest.raises(KnowledgeError):
        load_knowledge_mapping(path)
