from __future__ import annotations

import json
import os

import numpy as np
import pytest

from funcfix.corpus import generate_corpus, load_articulations, make_cabinet, write_cabinet
from funcfix.fungraph import validate
from funcfix.meshkit import union_aabb


@pytest.mark.parametrize("seed", range(6))
def test_gt_graph_validates(seed):
    cab = make_cabinet(seed)
    assert validate(cab.gt_graph) == []
    kinds = [e.kind for e in cab.gt_graph.edges]
    assert kinds.count("hinge") == cab.meta["n_doors"]
    assert kinds.count("rail") == cab.meta["n_drawers"]
    assert len(cab.gt_articulations) == cab.meta["n_doors"] + cab.meta["n_drawers"]


def test_parts_fill_the_unit_cube():
    cab = make_cabinet(9)
    box = union_aabb(m.aabb() for m, _, _ in cab.parts)
    assert np.allclose(box.min, 0, atol=1e-12)
    assert max(box.extent) == pytest.approx(1.0)


def test_counts_respected_and_validated():
    cab = make_cabinet(0, n_doors=3, n_drawers=0)
    assert cab.meta["n_doors"] == 3 and cab.meta["n_drawers"] == 0
    with pytest.raises(ValueError):
        make_cabinet(0, n_doors=0, n_drawers=0)
    with pytest.raises(ValueError):
        make_cabinet(0, n_doors=4)


def test_topless_has_no_top_panel():
    cats = lambda cab: {c for _, c, _ in cab.parts}
    assert "top_panel" in cats(make_cabinet(1))
    assert "top_panel" not in cats(make_cabinet(1, top=False))


def test_same_seed_same_cabinet():
    a, b = make_cabinet(11), make_cabinet(11)
    assert a.gt_graph == b.gt_graph
    assert all(np.array_equal(x[0].vertices, y[0].vertices) for x, y in zip(a.parts, b.parts))


def test_write_and_reload(tmp_path):
    cab = make_cabinet(3, offset_axes=True)
    m = write_cabinet(cab, str(tmp_path))
    with open(m) as fh:
        doc = json.load(fh)
    assert doc["normalized"] is True and len(doc["parts"]) == len(cab.parts)
    assert all(os.path.isfile(tmp_path / p["mesh"]) for p in doc["parts"])
    raw = load_articulations(str(tmp_path / "raw_articulations.json"))
    assert [a.child for a in raw] == [a.child for a in cab.raw_articulations]
    gt = load_articulations(str(tmp_path / "gt_articulations.json"))
    assert np.allclose(gt[0].axis.point, cab.gt_articulations[0].axis.point)


def test_raw_axes_only_with_offsets(tmp_path):
    write_cabinet(make_cabinet(3), str(tmp_path))
    assert not (tmp_path / "raw_articulations.json").exists()
    cab = make_cabinet(3, offset_axes=True)
    for raw, gt in zip(cab.raw_articulations, cab.gt_articulations):
        if gt.kind == "revolute":
            assert np.linalg.norm(raw.axis.point[:2] - gt.axis.point[:2]) > 0


def test_generate_corpus_mixed_tops(tmp_path):
    paths = generate_corpus(str(tmp_path), 4, seed=2, top=None)
    tops = []
    for p in paths:
        with open(p) as fh:
            tops.append(json.load(fh)["meta"]["top"])
    assert tops == [True, False, True, False]
