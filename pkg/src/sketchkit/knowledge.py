"""Category-to-component prior: the translation matrix used to let
recognition supervise segmentation.

Entry (i, j) is gamma_r when category i contains component j and
1 - gamma_r otherwise, with gamma_r in (0.5, 1] so contained components are
always favored but never zero out the rest.

Metadata file: newline-delimited JSON, one category per line:

    {"category": 0, "components": [0, 3], "name": "box+tick"}

The optional "name" field is carried for UI legends.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import KnowledgeError


@dataclass
class KnowledgeMatrix:
    matrix: np.ndarray  # (C_R, C_S) float64
    gamma_r: float
    category_names: dict[int, str] = field(default_factory=dict)
    component_names: dict[int, str] = field(default_factory=dict)

    @property
    def n_categories(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_components(self) -> int:
        return int(self.matrix.shape[1])

    def components_of(self, category: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.matrix[category] == self.gamma_r)]

    def mapping(self) -> dict[int, list[int]]:
        return {i: self.components_of(i) for i in range(self.n_categories)}


def build_knowledge_matrix(
    category_components: dict[int, list[int] | set[int]],
    gamma_r: float = 0.9,
    n_categories: int | None = None,
    n_components: int | None = None,
    category_names: dict[int, str] | None = None,
    component_names: dict[int, str] | None = None,
) -> KnowledgeMatrix:
    """Build the prior matrix from a category -> component-set mapping.

    Class counts default to the maxima found in the mapping; pass them
    explicitly when some trailing class has no entry.
    """
    if not category_components:
        raise KnowledgeError("empty category mapping")
    if not (0.5 < gamma_r <= 1.0):
        raise KnowledgeError(f"gamma_r must be in (0.5, 1], got {gamma_r}")
    cats = sorted(category_components)
    c_r = n_categories if n_categories is not None else max(cats) + 1
    comp_max = -1
    for comps in category_components.values():
        if not comps:
            raise KnowledgeError("every category needs at least one component")
        comp_max = max(comp_max, max(comps))
    c_s = n_components if n_components is not None else comp_max + 1
    if comp_max >= c_s:
        raise KnowledgeError(f"component id {comp_max} out of range for C_S={c_s}")
    if max(cats) >= c_r:
        raise KnowledgeError(f"category id {max(cats)} out of range for C_R={c_r}")
    m = np.full((c_r, c_s), 1.0 - gamma_r, dtype=np.float64)
    for cat, comps in category_components.items():
        for j in comps:
            m[cat, j] = gamma_r
    return KnowledgeMatrix(
        matrix=m,
        gamma_r=gamma_r,
        category_names=dict(category_names or {}),
        component_names=dict(component_names or {}),
    )


def save_knowledge(km_or_mapping, path: str | Path, category_names: dict[int, str] | None = None) -> None:
    if isinstance(km_or_mapping, KnowledgeMatrix):
        mapping = km_or_mapping.mapping()
        names = km_or_mapping.category_names
    else:
        mapping = km_or_mapping
        names = category_names or {}
    with open(path, "w", encoding="utf-8") as fh:
        for cat in sorted(mapping):
            rec = {"category": cat, "components": sorted(mapping[cat])}
            if cat in names:
                rec["name"] = names[cat]
            fh.write(json.dumps(rec) + "\n")


def load_knowledge_mapping(path: str | Path) -> tuple[dict[int, list[int]], dict[int, str]]:
    mapping: dict[int, list[int]] = {}
    names: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                cat = int(rec["category"])
                mapping[cat] = [int(c) for c in rec["components"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise KnowledgeError(f"{path}:{lineno}: bad knowledge record") from exc
            if "name" in rec:
                names[cat] = rec["name"]
    if not mapping:
        raise KnowledgeError(f"{path}: no category records")
    return mapping, names


def load_knowledge(path: str | Path, gamma_r: float = 0.9, **kwargs) -> KnowledgeMatrix:
    mapping, names = load_knowledge_mapping(path)
    return build_knowledge_matrix(mapping, gamma_r=gamma_r, category_names=names, **kwargs)
