from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from funcfix.corpus import make_cabinet
from funcfix.corrupt import (
    DEFAULT_WEIGHTS,
    STRATEGIES,
    AugConfig,
    CurriculumState,
    apply_strategy,
    curriculum_interval,
    face_permutation,
    make_training_pair,
    mirror_flip,
    mirror_graph,
    sample_strategy,
)
from funcfix.fungraph import FunctionalGraph, MotionAttr, graphs_equal, make_edge, motion_axis_world, node_from_box, validate
from funcfix.meshkit import Aabb, rotation_about_axis

CABS = [make_cabinet(s) for s in range(4)]


def _undirected(g):
    return {frozenset((e.src, e.dst)) for e in g.edges}


# --- sampling and curriculum -------------------------------------------------


def test_single_weight_always_drawn():
    cfg = AugConfig(weights={"drop_top": 1.0})
    rng = np.random.default_rng(0)
    assert {sample_strategy(rng, cfg) for _ in range(200)} == {"drop_top"}


def test_all_zero_weights_rejected():
    with pytest.raises(ValueError):
        sample_strategy(0, AugConfig(weights={s: 0.0 for s in STRATEGIES}))


def test_sampling_deterministic():
    assert sample_strategy(np.random.default_rng(9)) == sample_strategy(np.random.default_rng(9))


def test_fully_functional_drop_frequency():
    rng = np.random.default_rng(1)
    n = 100_000
    hits = sum(sample_strategy(rng) == "fully_functional_drop" for _ in range(n))
    p = 0.20 / 1.20
    assert abs(hits / n - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_curriculum_points():
    assert curriculum_interval(0) == (0.30, 0.50)
    assert curriculum_interval(1) == (0.10, 0.20)
    assert curriculum_interval(0.5) == pytest.approx((0.20, 0.35))
    assert curriculum_interval(-3) == curriculum_interval(0) and curriculum_interval(7) == curriculum_interval(1)


@given(st.floats(0, 1), st.floats(0, 1))
def test_curriculum_monotone(a, b):
    lo, hi = sorted((a, b))
    assert all(x >= y for x, y in zip(curriculum_interval(lo), curriculum_interval(hi)))


def test_curriculum_state_from_epoch():
    assert CurriculumState.from_epoch(5, 10).t == 0.5
    assert CurriculumState.from_epoch(50, 10).t == 1.0


# --- strategies --------------------------------------------------------------


def test_drop_handles_removes_only_handles():
    g = CABS[0].gt_graph
    handles = [n.id for n in g.nodes if n.category == "handle"]
    assert len(handles) >= 2
    out = apply_strategy(g, "drop_handles", 0.3, 0).graph
    assert set(out.ids) == set(g.ids) - set(handles)
    assert not out.functional_edges("attached")
    kept = [e for e in g.edges if e.src not in handles and e.dst not in handles]
    assert set(out.edges) == set(kept)


def test_fully_anonymized():
    out = apply_strategy(CABS[1].gt_graph, "fully_anonymized", 1.0, 0).graph
    assert {n.category for n in out.nodes} == {"unknown"}
    assert {e.kind for e in out.edges} == {"contact"}


def test_mask_random_edges_exact_count():
    g = CABS[2].gt_graph
    nodes = g.nodes
    pairs = [(a.id, b.id) for i, a in enumerate(nodes) for b in nodes[i + 1:]][:20]
    g20 = FunctionalGraph(nodes, tuple(make_edge(a, b, "contact") for a, b in pairs))
    assert len(g20.edges) == 20
    out = apply_strategy(g20, "mask_random_edges_keep_types", 0.3, 4).graph
    assert len(out.edges) == 20 - 6
    assert set(out.edges) <= set(g20.edges)


def test_inapplicable_flag():
    topless = make_cabinet(0, top=False).gt_graph
    cor = apply_strategy(topless, "drop_top", 0.3, 0)
    assert cor.inapplicable and cor.graph is topless


def test_unknown_strategy():
    with pytest.raises(ValueError):
        apply_strategy(CABS[0].gt_graph, "shuffle", 0.3, 0)


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("cab", range(4))
def test_strategy_invariants(strategy, cab):
    g = CABS[cab].gt_graph
    for seed in range(5):
        cor = apply_strategy(g, strategy, 0.4, seed)
        out = cor.graph
        assert len(out.nodes) <= len(g.nodes)
        assert len(g.nodes) - len(out.nodes) <= 16
        assert set(out.ids) <= set(g.ids)
        assert _undirected(out) <= _undirected(g)
        if strategy in ("fully_anonymized", "mask_materials_keep_edges", "mask_random_edges_keep_types"):
            assert len(out.nodes) == len(g.nodes)
        if strategy != "fully_anonymized":
            kinds = {frozenset((e.src, e.dst)): e.kind for e in g.edges}
            assert all(kinds[frozenset((e.src, e.dst))] == e.kind for e in out.edges)
        assert validate(out, allow_unknown=True) == []


def test_free_slot_cap_bounds_removal():
    big = make_cabinet(0).gt_graph
    cfg = AugConfig(free_slot_cap=3)
    for s in STRATEGIES:
        out = apply_strategy(big, s, 1.0, 2, cfg)
        assert len(big.nodes) - len(out.graph.nodes) <= 3


def test_drop_completion_removes_whole_categories():
    g = CABS[3].gt_graph
    for seed in range(10):
        out = apply_strategy(g, "drop_completion", 0.3, seed)
        if out.inapplicable:
            continue
        gone = {g.node(i).category for i in out.removed}
        left = {n.category for n in out.graph.nodes}
        assert 1 <= len(gone) <= 3 and not gone & left


def test_isolate_door_keeps_door_and_panel():
    g = CABS[0].gt_graph
    out = apply_strategy(g, "isolate_door", 0.3, 1).graph
    doors = [n for n in out.nodes if n.category == "door"]
    assert len(doors) == 1
    assert not [e for e in out.edges if doors[0].id in (e.src, e.dst) and e.kind != "contact"]


# --- mirror flip -------------------------------------------------------------


def test_face_permutation_table():
    # a door with thin y: borders over (x, z); a mirror across x swaps the x sides
    assert face_permutation(1, 0) == (1, 0, 2, 3)
    assert face_permutation(1, 1) == (0, 1, 2, 3)
    assert face_permutation(0, 1) == (1, 0, 2, 3)


def test_mirror_rejects_z():
    with pytest.raises(ValueError):
        mirror_graph(CABS[0].gt_graph, "z")


@pytest.mark.parametrize("axis", ["x", "y"])
def test_mirror_involution(axis):
    cab = CABS[1]
    parts, g, _ = mirror_flip(cab.parts, cab.gt_graph, axis)
    parts2, g2, _ = mirror_flip(parts, g, axis)
    assert graphs_equal(g2, cab.gt_graph)
    for (m0, c0, i0), (m2, c2, i2) in zip(cab.parts, parts2):
        assert (c0, i0) == (c2, i2)
        assert np.array_equal(m0.vertices, m2.vertices) and np.array_equal(m0.triangles, m2.triangles)


def test_mirror_preserves_categories_and_topology():
    g = CABS[2].gt_graph
    m = mirror_graph(g, "y")
    assert sorted(n.category for n in m.nodes) == sorted(n.category for n in g.nodes)
    assert [(e.src, e.dst, e.kind) for e in m.edges] == [(e.src, e.dst, e.kind) for e in g.edges]


def test_min_x_border_maps_to_max_x():
    door = node_from_box("d", "door", Aabb(np.array([0.1, 0.0, 0.0]), np.array([0.5, 0.02, 0.6])))
    panel = node_from_box("p", "side_panel", Aabb(np.array([0.08, 0.02, 0.0]), np.array([0.1, 0.5, 0.6])))
    g = FunctionalGraph((door, panel), (make_edge("p", "d", "hinge", MotionAttr(0, 1)),))
    m = mirror_graph(g, "x")
    assert m.edges[0].motion.hinge_border == 1


def _swing(line, q, angle):
    R = rotation_about_axis(line.direction, angle)
    return line.point + R @ (q - line.point)


def _random_hinge_graph(rng):
    ext = rng.uniform(0.2, 0.8, 3)
    ext[rng.integers(0, 3)] = rng.uniform(0.01, 0.04)
    lo = rng.uniform(-0.5, 0.5, 3)
    door = node_from_box("d", "door", Aabb(lo, lo + ext))
    panel = node_from_box("p", "side_panel", Aabb(lo - 0.1, lo))
    e = make_edge("p", "d", "hinge", MotionAttr(int(rng.integers(0, 4)), int(rng.choice([-1, 1]))))
    return FunctionalGraph((door, panel), (e,))


def test_mirror_motion_consistency_physical():
    """Mirroring a swept point equals sweeping the mirrored point about the mirrored graph's axis."""
    rng = np.random.default_rng(21)
    for _ in range(200):
        g = _random_hinge_graph(rng)
        ax = int(rng.integers(0, 2))
        M = np.ones(3)
        M[ax] = -1
        line = motion_axis_world(g, g.edges[0])
        gm = mirror_graph(g, ax)
        line_m = motion_axis_world(gm, gm.edges[0])
        q = g.node("d").bbox.center + rng.normal(0, 0.1, 3)
        for ang in (0.3, 1.2):
            assert np.allclose(M * _swing(line, q, ang), _swing(line_m, M * q, ang), atol=1e-9)


def test_mirror_rail_negated():
    w = node_from_box("w", "drawer", Aabb(np.zeros(3), np.array([0.5, 0.4, 0.2])))
    p = node_from_box("p", "side_panel", Aabb(np.array([-0.02, 0, 0]), np.array([0, 0.4, 0.2])))
    g = FunctionalGraph((w, p), (make_edge("p", "w", "rail", MotionAttr(rail_axis="+y")),))
    assert mirror_graph(g, "y").edges[0].motion.rail_axis == "-y"
    assert mirror_graph(g, "x").edges[0].motion.rail_axis == "+y"


# --- training pairs ----------------------------------------------------------


def test_training_pair_reproducible_and_target_valid():
    g = CABS[0].gt_graph
    a = make_training_pair(g, rng=5)
    b = make_training_pair(g, rng=5)
    assert graphs_equal(a.corrupted, b.corrupted) and graphs_equal(a.target, b.target)
    for seed in range(30):
        pair = make_training_pair(g, rng=seed)
        assert validate(pair.target) == []
        if pair.flip_axis is None:
            assert graphs_equal(pair.target, g)


def test_handle_drop_share():
    g = CABS[0].gt_graph
    rng = np.random.default_rng(8)
    n = 1000
    dropped = sum(not any(x.category == "handle" for x in make_training_pair(g, rng=rng).corrupted.nodes) for _ in range(n))
    # drop_handles always; drop_completion when handles are among its picks; other strategies rarely
    w = DEFAULT_WEIGHTS
    total = sum(w.values())
    lo = w["drop_handles"] / total
    hi = lo + (w["drop_completion"] + w["random"] + w["fully_functional_drop"] + w["drop_nodes_keep_edge_types"]
               + w["isolate_door"]) / total
    sig = np.sqrt(0.25 / n)
    assert lo - 3 * sig <= dropped / n <= hi + 3 * sig
