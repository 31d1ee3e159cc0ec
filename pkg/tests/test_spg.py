"""Importer for part-labeled NDJSON collections."""

import json

import pytest

from sketchkit.errors import ImportError_
from sketchkit.geometry import load_sketches, save_sketches
from sketchkit.spg import import_spg


def write_ndjson(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


RECORDS = [
    {
        "word": "face",
        "key_id": "11",
        "drawing": [[[0, 10, 20], [0, 5, 0]], [[5, 15], [20, 20]]],
        "part_labels": ["outline", "mouth"],
    },
    {
        "word": "cat",
        "key_id": "12",
        "drawing": [[[0, 30], [0, 30]]],
        "part_labels": ["outline"],
    },
    {
        "word": "face",
        "key_id": "13",
        "drawing": [[[1, 2], [3, 4]], [[0, 1], [0, 1]], [[9, 8], [7, 6]]],
        "part_labels": ["eye", "eye", 3],
    },
]


def test_import_builds_sorted_vocabularies(tmp_path):
    f = tmp_path / "mix.ndjson"
    write_ndjson(f, RECORDS)
    res = import_spg(f)
    assert res.categories == ["cat", "face"]
    # int labels are stringified, then everything sorts as text
    assert res.components == ["3", "eye", "mouth", "outline"]
    assert len(res.sketches) == 3
    assert res.skipped == 0
    assert res.stats == {"files": 1, "records": 3}
    face = res.sketches[0]
    assert face.category == 1
    assert face.source_id == "mix.ndjson:11"
    assert [s.semantic_label for s in face.strokes] == [3, 2]
    assert [(p.x, p.y) for p in face.strokes[0].points] == [(0.0, 0.0), (10.0, 5.0), (20.0, 0.0)]


def test_explicit_category_list_narrows_and_orders(tmp_path):
    f = tmp_path / "mix.ndjson"
    write_ndjson(f, RECORDS)
    res = import_spg(f, categories=["face", "dog"])
    assert res.categories == ["face", "dog"]
    assert all(sk.category == 0 for sk in res.sketches)
    assert len(res.sketches) == 2
    assert res.skipped == 1


def test_import_directory_globs_files(tmp_path):
    write_ndjson(tmp_path / "a.ndjson", RECORDS[:1])
    write_ndjson(tmp_path / "b.ndjson", RECORDS[1:])
    res = import_spg(tmp_path)
    assert res.stats["files"] == 2
    assert len(res.sketches) == 3
    with pytest.raises(ImportError_):
        import_spg(tmp_path / "empty_dir_does_not_exist")


def test_import_rejects_malformed_records(tmp_path):
    cases = [
        {"key_id": "1", "drawing": [[[0], [0]]], "part_labels": ["a"]},  # no word
        {"word": "x", "drawing": [], "part_labels": []},
        {"word": "x", "drawing": [[[0], [0]]], "part_labels": ["a", "b"]},
        {"word": "x", "drawing": [[[0, 1], [0]]], "part_labels": ["a"]},
        {"word": "x", "drawing": [[[0], [0]]], "part_labels": [None]},
        {"word": "x", "drawing": [[["a"], ["b"]]], "part_labels": ["a"]},
    ]
    for i, rec in enumerate(cases):
        f = tmp_path / f"bad{i}.ndjson"
        write_ndjson(f, [rec])
        with pytest.raises(ImportError_):
            import_spg(f)
    g = tmp_path / "notjson.ndjson"
    g.write_text("{oops\n")
    with pytest.raises(ImportError_):
        import_spg(g)


def test_import_requires_at_least_one_match(tmp_path):
    f = tmp_path / "mix.ndjson"
    write_ndjson(f, RECORDS)
    with pytest.raises(ImportError_):
        import_spg(f, categories=["horse"])


def test_imported_sketches_round_trip_canonical_format(tmp_path):
    f = tmp_path / "mix.ndjson"
    write_ndjson(f, RECORDS)
    res = import_spg(f)
    out = tmp_path / "canonical.ndjson"
    assert save_sketches(out, res.sketches) == 3
    back = load_sketches(out)
    assert len(back) == 3
    for orig, copy in zip(res.sketches, back):
        assert copy.category == orig.category
        assert copy.source_id == orig.source_id
        assert [s.semantic_label for s in copy.strokes] == [s.semantic_label for s in orig.strokes]
        for s1, s2 in zip(orig.strokes, copy.strokes):
            assert [(p.x, p.y) for p in s1.points] == [(p.x, p.y) for p in s2.points]
