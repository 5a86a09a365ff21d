from __future__ import annotations

import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from funcfix.corpus import make_cabinet
from funcfix.fungraph import CATEGORIES, EDGE_KINDS, FunctionalGraph, MotionAttr, make_edge, node_from_box
from funcfix.meshkit import Aabb
from funcfix.metrics import (
    LossWeights,
    assignment_cost,
    edge_metrics,
    evaluate,
    hungarian_assign,
    lift_graph,
    loss_terms,
    match_graphs,
    motion_metrics,
    node_metrics,
    weighted_loss,
)


def _n(pid, cat, c, h=0.05):
    c = np.asarray(c, float)
    return node_from_box(pid, cat, Aabb(c - h, c + h))


def _identity(g):
    return {i: i for i in g.ids}


# --- Hungarian ---------------------------------------------------------------


def _brute(C):
    n, m = C.shape
    if n <= m:
        return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(sum(C[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_hungarian_against_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, m = rng.integers(1, 7, 2)
        C = rng.integers(0, 20, (n, m)).astype(float) if rng.random() < 0.5 else rng.normal(size=(n, m))
        a = hungarian_assign(C)
        assert len(a.pairs) == min(n, m)
        assert assignment_cost(C, a) == pytest.approx(_brute(C), abs=1e-12)


def test_hungarian_zero_diagonal_and_scalar():
    C = np.ones((4, 4)) - np.eye(4)
    a = hungarian_assign(C)
    assert a.pairs == ((0, 0), (1, 1), (2, 2), (3, 3)) and assignment_cost(C, a) == 0
    assert hungarian_assign([[7.0]]).pairs == ((0, 0),)


def test_hungarian_rejects_nonfinite():
    with pytest.raises(ValueError):
        hungarian_assign([[1.0, np.inf]])


# --- matching ----------------------------------------------------------------


def test_full_anchor_identity(cabinet):
    g = cabinet.gt_graph
    a = match_graphs(g, g, _identity(g))
    assert a.pairs == tuple((i, i) for i in range(len(g.nodes)))


def test_crossed_centroids():
    pred = FunctionalGraph((_n("a", "door", [0, 0, 0]), _n("b", "door", [1, 0, 0])), ())
    gt = FunctionalGraph((_n("x", "door", [0.9, 0, 0]), _n("y", "door", [0.1, 0, 0])), ())
    a = match_graphs(pred, gt)
    costs = {}
    for perm in itertools.permutations(range(2)):
        costs[perm] = sum(np.abs(pred.nodes[i].centroid - gt.nodes[perm[i]].centroid).sum() for i in range(2))
    best = min(costs, key=costs.get)
    assert a.pairs == tuple((i, best[i]) for i in range(2))


def test_more_gt_than_pred():
    gt = FunctionalGraph(tuple(_n(f"g{i}", "shelf", [i, 0, 0]) for i in range(5)), ())
    pred = FunctionalGraph(tuple(_n(f"p{i}", "shelf", [i, 0, 0]) for i in range(3)), ())
    assert len(match_graphs(pred, gt).unmatched_gt) == 2


def test_anchor_errors():
    g = FunctionalGraph((_n("a", "door", [0, 0, 0]), _n("b", "door", [1, 0, 0])), ())
    with pytest.raises(ValueError):
        match_graphs(g, g, {"a": "a", "b": "a"})
    with pytest.raises(ValueError):
        match_graphs(g, g, {"zz": "a"})


# --- node metrics ------------------------------------------------------------


def test_one_missing_node_f1():
    gt = FunctionalGraph(tuple(_n(f"n{i}", "shelf", [i, 0, 0]) for i in range(10)), ())
    pred = FunctionalGraph(gt.nodes[:9], ())
    f1, acc, cm, bm = node_metrics(pred, gt, match_graphs(pred, gt, {f"n{i}": f"n{i}" for i in range(9)}))
    assert f1 == pytest.approx(18 / 19) and acc == 1 and cm == 0 and bm == 0


def test_centroid_mae_per_component():
    gt = FunctionalGraph(tuple(_n(f"n{i}", "shelf", [i, 0, 0]) for i in range(3)), ())
    pred = FunctionalGraph(tuple(_n(f"n{i}", "shelf", [i + 0.03, 0, 0]) for i in range(3)), ())
    _, _, cm, bm = node_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))
    # three nodes, each with errors (0.03, 0, 0): mean over nine components
    assert cm == pytest.approx(0.01, abs=1e-15) and bm == 0


# --- edge metrics ------------------------------------------------------------


def _four_edge_fixture():
    nodes = (_n("p", "side_panel", [0, 0, 0]), _n("d", "door", [1, 0, 0]), _n("s", "shelf", [0, 1, 0]),
             _n("b", "bottom_panel", [0, 0, 1]), _n("h", "handle", [1, 1, 1]))
    # one hinge, two contacts, one attached; the prediction calls the hinge a contact
    gt_edges = (make_edge("p", "d", "hinge", MotionAttr(0, 1)), make_edge("p", "s", "contact"),
                make_edge("p", "b", "contact"), make_edge("d", "h", "attached"))
    pred_edges = (make_edge("p", "d", "contact"),) + gt_edges[1:]
    return FunctionalGraph(nodes, pred_edges), FunctionalGraph(nodes, gt_edges)


def test_hand_confusion():
    pred, gt = _four_edge_fixture()
    acc, f1 = edge_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))
    assert f1["contact"] == pytest.approx(0.8, abs=1e-15)
    assert f1["hinge"] == 0.0
    assert acc == 0.75


def test_empty_prediction():
    _, gt = _four_edge_fixture()
    pred = FunctionalGraph((), ())
    acc, f1 = edge_metrics(pred, gt, match_graphs(pred, gt))
    assert acc == 0.0 and f1["contact"] == 0.0 and f1["hinge"] == 0.0


def test_edge_metrics_relabel_invariant():
    pred, gt = _four_edge_fixture()
    ren = {i: f"z_{i[::-1]}" for i in gt.ids}

    def relabel(g):
        nodes = tuple(replace(n, id=ren[n.id]) for n in g.nodes)
        edges = tuple(make_edge(ren[e.src], ren[e.dst], e.kind, e.motion) for e in g.edges)
        return FunctionalGraph(nodes, edges)

    a = edge_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))
    rp, rg = relabel(pred), relabel(gt)
    b = edge_metrics(rp, rg, match_graphs(rp, rg, _identity(rg)))
    assert a == b


# --- motion metrics ----------------------------------------------------------


def _hinges(n, attrs):
    nodes = [_n("p", "side_panel", [0, 0, 0])]
    edges = []
    for k, (hb, sg) in enumerate(attrs):
        nodes.append(_n(f"d{k}", "door", [k + 1, 0, 0]))
        edges.append(make_edge("p", f"d{k}", "hinge", MotionAttr(hb, sg)))
    return FunctionalGraph(tuple(nodes), tuple(edges))


def test_sign_flip_product_semantics():
    gt, pred = _hinges(1, [(0, 1)]), _hinges(1, [(0, -1)])
    hb, sg, ra, jm = motion_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))
    assert (hb, sg, jm) == (1.0, 0.0, 0.0)


def test_nine_of_ten():
    gt = _hinges(10, [(0, 1)] * 10)
    pred = _hinges(10, [(0, 1)] * 9 + [(2, 1)])
    assert motion_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))[3] == pytest.approx(0.9)


def test_missing_motion_counts_wrong():
    gt = _hinges(1, [(0, 1)])
    pred = gt.with_edges([make_edge("p", "d0", "hinge")])
    hb, sg, _, jm = motion_metrics(pred, gt, match_graphs(pred, gt, _identity(gt)))
    assert hb == sg == jm == 0.0


def test_identity_metrics_are_perfect(cabinet):
    g = cabinet.gt_graph
    m = evaluate(g, g, _identity(g))
    assert m.as_tuple() == (1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@given(st.integers(0, 30), st.sampled_from(["drop_handles", "random", "fully_anonymized", "mask_random_edges_keep_types"]))
def test_rates_bounded(seed, strategy):
    from funcfix.corrupt import apply_strategy

    g = make_cabinet(seed % 3).gt_graph
    pred = apply_strategy(g, strategy, 0.4, seed).graph
    m = evaluate(pred, g)
    t = m.as_tuple()
    assert all(0.0 <= x <= 1.0 for i, x in enumerate(t) if i not in (2, 3))
    assert t[2] >= 0 and t[3] >= 0


# --- weighted objective ------------------------------------------------------


def test_default_subweights():
    assert LossWeights().node_subweights() == (1, 3, 1, 1, 1, 0.5, 0.3, 0.3)


def test_perfect_prediction_zero_loss(cabinet):
    g = cabinet.gt_graph
    assert weighted_loss(lift_graph(g, eps=0.0), g) == 0.0


def test_uniform_edge_ln5():
    g = FunctionalGraph((_n("a", "shelf", [0, 0, 0]), _n("b", "shelf", [1, 0, 0])), ())
    sg = lift_graph(g, eps=0.0)
    for k in sg.edge:
        sg.edge[k] = np.full(len(EDGE_KINDS), 1.0 / len(EDGE_KINDS))
    w = LossWeights(w_node=0, w_parent=0, w_ht=0, w_motion=0)
    assert len(EDGE_KINDS) == 5
    assert weighted_loss(sg, g, w) == pytest.approx(math.log(5), abs=1e-12)


def test_linear_in_node_weight(cabinet):
    g = cabinet.gt_graph
    sg = lift_graph(g, eps=1e-2)
    for s in sg.slots:
        s.centroid = s.centroid + 0.01
    L = lambda wn: weighted_loss(sg, g, LossWeights(w_node=wn))  # noqa: E731
    assert L(2.0) - L(0.0) == pytest.approx(2 * (L(1.0) - L(0.0)), rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_moving_mass_to_truth_never_hurts(a, b):
    g = FunctionalGraph((_n("a", "shelf", [0, 0, 0]), _n("b", "shelf", [1, 0, 0])), (make_edge("a", "b", "contact"),))
    lo, hi = sorted((a, b))
    k = EDGE_KINDS.index("contact")

    def loss(q):
        sg = lift_graph(g, eps=0.0)
        for key in sg.edge:
            p = np.full(len(EDGE_KINDS), (1 - q) / (len(EDGE_KINDS) - 1))
            p[k] = q
            sg.edge[key] = p
        return loss_terms(sg, g)["edge"]

    assert loss(hi) <= loss(lo)


def test_invalid_distribution_rejected(cabinet):
    g = cabinet.gt_graph
    sg = lift_graph(g)
    sg.slots[0].category = np.full(len(CATEGORIES), 0.5)
    with pytest.raises(ValueError):
        weighted_loss(sg, g)
