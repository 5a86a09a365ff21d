from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from funcfix.fungraph import (
    CATEGORIES,
    FunctionalGraph,
    GraphSchemaError,
    MotionAttr,
    PartNode,
    border_geometry,
    border_index,
    build_contact_graph,
    deserialize,
    edge_descriptor,
    graphs_equal,
    make_edge,
    motion_axis_world,
    node_from_box,
    serialize,
    validate,
)
from funcfix.meshkit import Aabb, box_mesh


def _node(pid, cat, lo, hi):
    return node_from_box(pid, cat, Aabb(np.asarray(lo, float), np.asarray(hi, float)))


def test_categories_are_the_fourteen_tokens():
    assert set(CATEGORIES) == {"top_panel", "side_panel", "back_panel", "bottom_panel", "face_frame", "shelf",
                               "divider", "bar", "leg", "door", "drawer", "handle", "misc", "unknown"}


# --- contact graph -----------------------------------------------------------


def test_touching_panels_one_edge():
    parts = [(box_mesh([0, 0, 0], [0.1, 1, 1]), "side_panel", "a"), (box_mesh([0.1, 0, 0], [0.2, 1, 1]), "side_panel", "b")]
    assert len(build_contact_graph(parts, 0.005).edges) == 1


def test_gap_beyond_inflation():
    eps = 0.005
    parts = [(box_mesh([0, 0, 0], [0.1, 1, 1]), "side_panel", "a"),
             (box_mesh([0.1 + 2 * eps + 1e-9, 0, 0], [0.3, 1, 1]), "side_panel", "b")]
    assert build_contact_graph(parts, eps).edges == ()


def test_five_part_cabinet_against_interval_oracle():
    t = 0.02
    boxes = {
        "left": ([0, 0, 0], [t, 1, 1]),
        "right": ([1 - t, 0, 0], [1, 1, 1]),
        "back": ([t, 1 - t, t], [1 - t, 1, 1]),
        "front": ([t, 0, t], [1 - t, t, 1]),
        "bottom": ([t, 0, 0], [1 - t, 1, t]),
    }
    parts = [(box_mesh(lo, hi), "misc", k) for k, (lo, hi) in boxes.items()]
    g = build_contact_graph(parts, 0.005)
    want = set()
    for (a, (la, ha)), (b, (lb, hb)) in itertools.combinations(boxes.items(), 2):
        if all(la[k] - 0.005 <= hb[k] + 0.005 and lb[k] - 0.005 <= ha[k] + 0.005 for k in range(3)):
            want.add(tuple(sorted((a, b))))
    assert {e.key for e in g.edges} == want
    assert len(want) == 8
    assert validate(g) == []


def test_duplicate_ids_rejected(unit_cube):
    with pytest.raises(ValueError):
        build_contact_graph([(unit_cube, "misc", "a"), (unit_cube, "misc", "a")])


# --- descriptor --------------------------------------------------------------


def test_descriptor_axis_aligned():
    a = _node("a", "misc", [-0.5] * 3, [0.5] * 3)
    b = _node("b", "misc", [1.5, -0.5, -0.5], [2.5, 0.5, 0.5])
    assert np.allclose(edge_descriptor(a, b), [2, 1, 1, 0, 0, 1, 0, 0])


def test_descriptor_overlap_zeroing():
    a = _node("a", "misc", [0, 0, 0], [1, 1, 1])
    b = _node("b", "misc", [0.1, 0, 0], [1.1, 1, 1])
    d = edge_descriptor(a, b)
    assert d[1] == 0 and np.all(d[5:] == 0)


def test_descriptor_coincident_centroids():
    a = _node("a", "misc", [0, 0, 0], [1, 1, 1])
    assert np.all(edge_descriptor(a, a)[2:5] == 0)


boxes = st.lists(st.floats(-2, 2), min_size=6, max_size=6).map(
    lambda v: Aabb(np.minimum(v[:3], v[3:]), np.maximum(v[:3], v[3:])))


@given(boxes, boxes)
def test_descriptor_properties(A, B):
    a, b = node_from_box("a", "misc", A), node_from_box("b", "misc", B)
    d, r = edge_descriptor(a, b), edge_descriptor(b, a)
    assert d[0] >= 0 and d[1] >= 0 and np.all(d[5:] >= 0)
    assert np.linalg.norm(d[2:5]) == pytest.approx(1.0) or np.all(d[2:5] == 0)
    assert np.allclose(d[2:5], -r[2:5])
    assert np.array_equal(d[[0, 1, 5, 6, 7]], r[[0, 1, 5, 6, 7]])


# --- motion axes -------------------------------------------------------------


def _door_graph(border, sign):
    door = _node("d", "door", [0, 0, 0], [0.02, 0.4, 0.6])
    panel = _node("p", "side_panel", [-0.02, -0.5, 0], [0, 0.5, 0.6])
    e = make_edge("p", "d", "hinge", MotionAttr(hinge_border=border, axis_sign=sign))
    return FunctionalGraph((door, panel), (e,)), e


def _box_edges(box: Aabb):
    """The four non-thin bbox edges, enumerated directly."""
    thin = int(np.argmin(box.extent))
    a0, a1 = [k for k in range(3) if k != thin]
    out = {}
    for fixed, run in ((a0, a1), (a1, a0)):
        for side in (0, 1):
            p = box.center.copy()
            p[fixed] = (box.min, box.max)[side][fixed]
            out[(fixed, side)] = (p, run)
    return thin, out


def test_hinge_axis_min_y_edge():
    b = border_index(0, 1, 0)
    g, e = _door_graph(b, +1)
    line = motion_axis_world(g, e)
    assert np.allclose(line.point[:2], [0.01, 0.0])
    assert np.array_equal(line.direction, [0, 0, 1])
    flipped = motion_axis_world(*_door_graph(b, -1))
    assert np.array_equal(flipped.direction, [0, 0, -1])
    assert np.allclose(flipped.point, line.point)


@pytest.mark.parametrize("border", [0, 1, 2, 3])
def test_hinge_borders_enumerate_box_edges(border):
    g, e = _door_graph(border, 1)
    box = g.node("d").bbox
    thin, edges = _box_edges(box)
    t, fixed, side, run = border_geometry(box, border)
    p, r = edges[(fixed, side)]
    line = motion_axis_world(g, e)
    assert t == thin and r == run
    assert np.allclose(line.point, p)
    assert abs(line.direction[run]) == 1.0 and line.direction[thin] == 0.0


def test_rail_axis_through_centroid():
    dr = _node("w", "drawer", [0, 0, 0], [0.5, 0.4, 0.2])
    panel = _node("p", "side_panel", [-0.02, 0, 0], [0, 0.4, 0.2])
    e = make_edge("p", "w", "rail", MotionAttr(rail_axis="+y"))
    line = motion_axis_world(FunctionalGraph((dr, panel), (e,)), e)
    assert np.allclose(line.point, dr.centroid) and np.array_equal(line.direction, [0, 1, 0])


def test_degenerate_box_rejected():
    g, e = _door_graph(0, 1)
    cube = _node("d", "door", [0, 0, 0], [1, 1, 1])
    with pytest.raises(ValueError):
        motion_axis_world(FunctionalGraph((cube, g.node("p")), (e,)), e)


def test_missing_motion_rejected():
    g, _ = _door_graph(0, 1)
    bare = make_edge("p", "d", "hinge")
    with pytest.raises(ValueError):
        motion_axis_world(g.with_edges([bare]), bare)


@given(st.floats(0.01, 0.1), st.floats(0.2, 1), st.floats(0.2, 1), st.integers(0, 3), st.sampled_from([1, -1]),
       st.permutations([0, 1, 2]))
def test_hinge_direction_unit_and_perpendicular(th, w, h, border, sign, perm):
    ext = np.array([th, w, h])[list(perm)]
    door = _node("d", "door", np.zeros(3), ext)
    panel = _node("p", "side_panel", [-1, -1, -1], [-0.5, -0.5, -0.5])
    e = make_edge("p", "d", "hinge", MotionAttr(hinge_border=border, axis_sign=sign))
    line = motion_axis_world(FunctionalGraph((door, panel), (e,)), e)
    assert np.linalg.norm(line.direction) == pytest.approx(1.0)
    assert line.direction[int(np.argmin(ext))] == 0.0


# --- validation --------------------------------------------------------------


def test_validate_hinge_on_shelf():
    shelf = _node("s", "shelf", [0, 0, 0], [1, 1, 0.02])
    panel = _node("p", "side_panel", [-0.02, 0, 0], [0, 1, 1])
    g = FunctionalGraph((shelf, panel), (make_edge("p", "s", "hinge", MotionAttr(0, 1)),))
    assert len(validate(g)) == 1


def test_validate_self_edge():
    n = _node("a", "misc", [0, 0, 0], [1, 1, 1])
    assert len(validate(FunctionalGraph((n,), (make_edge("a", "a", "contact"),)))) == 1


def test_validate_cabinet(cabinet):
    assert validate(cabinet.gt_graph) == []


def test_validate_handle_with_extra_contact():
    door = _node("d", "door", [0, 0, 0], [0.02, 0.4, 0.6])
    h = _node("h", "handle", [0.02, 0.1, 0.1], [0.05, 0.12, 0.2])
    other = _node("o", "misc", [0.05, 0.1, 0.1], [0.1, 0.2, 0.2])
    g = FunctionalGraph((door, h, other), (make_edge("d", "h", "attached"), make_edge("h", "o", "contact")))
    assert len(validate(g)) == 1


# --- serialization -----------------------------------------------------------


def test_round_trip(cabinet):
    g = cabinet.gt_graph
    back = deserialize(json.loads(json.dumps(serialize(g))))
    assert graphs_equal(g, back)
    assert serialize(g)["schema_version"] == 1


@given(st.lists(st.tuples(st.sampled_from(sorted(CATEGORIES)), boxes), min_size=1, max_size=6), st.data())
def test_round_trip_property(layout, data):
    nodes = tuple(node_from_box(f"n{i}", c, b) for i, (c, b) in enumerate(layout))
    pairs = list(itertools.combinations([n.id for n in nodes], 2))
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    g = FunctionalGraph(nodes, tuple(make_edge(a, b, "contact") for a, b in chosen))
    assert graphs_equal(deserialize(json.loads(json.dumps(serialize(g)))), g)


def test_unknown_node_reference():
    doc = serialize(FunctionalGraph((_node("a", "misc", [0, 0, 0], [1, 1, 1]),), ()))
    doc["edges"].append({"src": "a", "dst": "zz", "kind": "contact"})
    with pytest.raises(GraphSchemaError) as exc:
        deserialize(doc)
    assert exc.value.pointer == "/edges/0/dst"


def test_unknown_edge_kind():
    doc = serialize(FunctionalGraph((_node("a", "misc", [0, 0, 0], [1, 1, 1]), _node("b", "misc", [1, 0, 0], [2, 1, 1])), ()))
    doc["edges"].append({"src": "a", "dst": "b", "kind": "glued"})
    with pytest.raises(GraphSchemaError, match="/edges/0/kind"):
        deserialize(doc)


def test_partnode_equality_uses_values():
    a = _node("a", "misc", [0, 0, 0], [1, 1, 1])
    b = PartNode("a", "misc", Aabb(np.zeros(3), np.ones(3)), np.full(3, 0.5))
    assert a == b
