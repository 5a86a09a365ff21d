"""Graph-pair evaluation: set assignment, node/edge/motion scores and the weighted objective."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import xlogy

from .fungraph import FunctionalGraph
from .labels import CATEGORIES, DIRECTED_KINDS, EDGE_KINDS, RAIL_AXES

LIFT_EPS = 1e-4
EDGE_METRIC_KINDS = ("contact", "hinge", "rail", "attached")


@dataclass(frozen=True)
class LossWeights:
    w_node: float = 1.0
    w_edge: float = 1.0
    w_parent: float = 1.0
    w_ht: float = 1.0
    w_motion: float = 1.0
    w_exist: float = 1.0
    w_free_exist: float = 3.0
    w_count: float = 1.0
    w_mat: float = 1.0
    w_cent: float = 1.0
    w_bbox: float = 0.5
    w_anchor: float = 0.3
    w_anchor_bbox: float = 0.3
    lambda_cls: float = 1.0
    lambda_pos: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"{k} must be finite and nonnegative")

    def node_subweights(self) -> tuple[float, ...]:
        return (self.w_exist, self.w_free_exist, self.w_count, self.w_mat, self.w_cent, self.w_bbox,
                self.w_anchor, self.w_anchor_bbox)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    unmatched_pred: tuple[int, ...] = ()
    unmatched_gt: tuple[int, ...] = ()


@dataclass(frozen=True)
class GraphPairMetrics:
    node_existence_f1: float
    material_accuracy: float
    centroid_mae: float
    bbox_mae: float
    edge_accuracy_real: float
    edge_f1: dict[str, float]
    hinge_border4_acc: float
    hinge_axis_sign_acc: float
    rail_axis_acc: float
    joint_motion_acc: float
    counts: dict[str, int] = field(default_factory=dict)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.node_existence_f1, self.material_accuracy, self.centroid_mae, self.bbox_mae,
                self.edge_accuracy_real, *(self.edge_f1[k] for k in EDGE_METRIC_KINDS),
                self.hinge_border4_acc, self.hinge_axis_sign_acc, self.rail_axis_acc, self.joint_motion_acc)

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# assignment


def hungarian_assign(cost) -> Assignment:
    """Minimum-total-cost matching of size min(n, m)."""
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    n, m = C.shape
    if n == 0 or m == 0:
        return Assignment((), tuple(range(n)), tuple(range(m)))
    r, c = linear_sum_assignment(C)
    pairs = tuple(sorted((int(a), int(b)) for a, b in zip(r, c)))
    up = tuple(i for i in range(n) if i not in set(r.tolist()))
    ug = tuple(j for j in range(m) if j not in set(c.tolist()))
    return Assignment(pairs, up, ug)


def assignment_cost(cost, a: Assignment) -> float:
    C = np.asarray(cost, dtype=float)
    return float(sum(C[i, j] for i, j in a.pairs))


def match_graphs(pred: FunctionalGraph, gt: FunctionalGraph, anchors: Mapping[str, str] | None = None,
                 weights: LossWeights | None = None) -> Assignment:
    """Anchored nodes keep their correspondence; free nodes are matched by category and L1 centroid cost."""
    w = weights or LossWeights()
    anchors = dict(anchors or {})
    pid = {n.id: i for i, n in enumerate(pred.nodes)}
    gid = {n.id: j for j, n in enumerate(gt.nodes)}
    if len(set(anchors.values())) != len(anchors):
        raise ValueError("anchor map must be injective")
    pairs = []
    for p, g in anchors.items():
        if p not in pid:
            raise ValueError(f"anchor references missing predicted node {p!r}")
        if g not in gid:
            raise ValueError(f"anchor references missing ground-truth node {g!r}")
        pairs.append((pid[p], gid[g]))
    used_p = {i for i, _ in pairs}
    used_g = {j for _, j in pairs}
    free_p = [i for i in range(len(pred.nodes)) if i not in used_p]
    free_g = [j for j in range(len(gt.nodes)) if j not in used_g]
    if free_p and free_g:
        C = np.zeros((len(free_p), len(free_g)))
        for a, i in enumerate(free_p):
            pn = pred.nodes[i]
            for b, j in enumerate(free_g):
                gn = gt.nodes[j]
                cls = 0.0 if pn.category == gn.category else 1.0
                C[a, b] = w.lambda_cls * cls + w.lambda_pos * float(np.abs(pn.centroid - gn.centroid).sum())
        sub = hungarian_assign(C)
        pairs += [(free_p[a], free_g[b]) for a, b in sub.pairs]
    pairs.sort()
    mp = {i for i, _ in pairs}
    mg = {j for _, j in pairs}
    return Assignment(
        tuple(pairs),
        tuple(i for i in range(len(pred.nodes)) if i not in mp),
        tuple(j for j in range(len(gt.nodes)) if j not in mg),
    )


# ----------------------------------------------------------------------------
# hard metrics


def _f1(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0  # nothing to find and nothing claimed
    if tp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2.0 * p * r / (p + r)


def node_metrics(pred: FunctionalGraph, gt: FunctionalGraph, a: Assignment) -> tuple[float, float, float, float]:
    tp = len(a.pairs)
    f1 = _f1(tp, len(a.unmatched_pred), len(a.unmatched_gt))
    if tp == 0:
        return f1, 0.0 if gt.nodes else 1.0, 0.0, 0.0
    acc = sum(pred.nodes[i].category == gt.nodes[j].category for i, j in a.pairs) / tp
    dc = np.array([np.abs(pred.nodes[i].centroid - gt.nodes[j].centroid) for i, j in a.pairs])
    db = np.array([np.abs(pred.nodes[i].bbox.half_extent - gt.nodes[j].bbox.half_extent) for i, j in a.pairs])
    return f1, float(acc), float(dc.mean()), float(db.mean())


def _edge_labels(graph: FunctionalGraph, idmap: Mapping[str, object]) -> dict[frozenset, tuple[str, object]]:
    """Unordered mapped pair -> (kind, parent) with parent None for undirected kinds."""
    out = {}
    for e in graph.edges:
        if e.kind == "null":
            continue
        if e.src not in idmap or e.dst not in idmap:
            continue
        s, d = idmap[e.src], idmap[e.dst]
        out[frozenset((s, d))] = (e.kind, s if e.kind in DIRECTED_KINDS else None)
    return out


def _maps(pred: FunctionalGraph, gt: FunctionalGraph, a: Assignment):
    pmap = {pred.nodes[i].id: j for i, j in a.pairs}  # pred id -> gt index
    gmap = {n.id: j for j, n in enumerate(gt.nodes)}
    return pmap, gmap


def edge_metrics(pred: FunctionalGraph, gt: FunctionalGraph, a: Assignment) -> tuple[float, dict[str, float]]:
    pmap, gmap = _maps(pred, gt, a)
    P = _edge_labels(pred, pmap)
    G = _edge_labels(gt, gmap)
    real = list(G)
    acc = sum(P.get(k) == G[k] for k in real) / len(real) if real else 1.0
    f1 = {}
    for kind in EDGE_METRIC_KINDS:
        tp = sum(1 for k, v in G.items() if v[0] == kind and P.get(k) == v)
        fp = sum(1 for k, v in P.items() if v[0] == kind) - tp
        fn = sum(1 for v in G.values() if v[0] == kind) - tp
        f1[kind] = _f1(tp, fp, fn)
    return float(acc), f1


def motion_metrics(pred: FunctionalGraph, gt: FunctionalGraph, a: Assignment) -> tuple[float, float, float, float]:
    """Accuracies over ground-truth hinge/rail edges; a missing predicted joint counts as wrong."""
    pmap, gmap = _maps(pred, gt, a)
    pe = {}
    for e in pred.edges:
        if e.kind in ("hinge", "rail") and e.src in pmap and e.dst in pmap:
            pe[(pmap[e.src], pmap[e.dst], e.kind)] = e.motion
    hb, sg, jm, ra = [], [], [], []
    for e in gt.edges:
        key = (gmap[e.src], gmap[e.dst], e.kind)
        if e.kind == "hinge":
            m = pe.get(key)
            ok_b = m is not None and m.hinge_border is not None and m.hinge_border == e.motion.hinge_border
            ok_s = m is not None and m.axis_sign is not None and m.axis_sign == e.motion.axis_sign
            hb.append(ok_b)
            sg.append(ok_s)
            jm.append(ok_b and ok_s)
        elif e.kind == "rail":
            m = pe.get(key)
            ra.append(m is not None and m.rail_axis is not None and m.rail_axis == e.motion.rail_axis)

    def mean(x):
        return float(np.mean(x)) if x else 1.0

    return mean(hb), mean(sg), mean(ra), mean(jm)


def evaluate(pred: FunctionalGraph, gt: FunctionalGraph, anchors: Mapping[str, str] | None = None,
             weights: LossWeights | None = None) -> GraphPairMetrics:
    a = match_graphs(pred, gt, anchors, weights)
    f1, acc, cm, bm = node_metrics(pred, gt, a)
    ea, ef = edge_metrics(pred, gt, a)
    hb, sg, ra, jm = motion_metrics(pred, gt, a)
    counts = {
        "pred_nodes": len(pred.nodes),
        "gt_nodes": len(gt.nodes),
        "matched": len(a.pairs),
        "gt_hinges": len(gt.functional_edges("hinge")),
        "gt_rails": len(gt.functional_edges("rail")),
    }
    return GraphPairMetrics(f1, acc, cm, bm, ea, ef, hb, sg, ra, jm, counts)


# ----------------------------------------------------------------------------
# soft predictions and the weighted objective


@dataclass
class SoftSlot:
    exist: float  # sigmoid of the existence logit
    category: np.ndarray  # distribution over CATEGORIES
    centroid: np.ndarray
    half_extent: np.ndarray
    anchor_of: str | None = None  # GT node id for anchored slots, None for free slots
    anchor_centroid: np.ndarray | None = None
    anchor_half_extent: np.ndarray | None = None


@dataclass
class SoftGraph:
    slots: list[SoftSlot]
    edge: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)  # ordered pair -> dist over EDGE_KINDS
    parent: dict[int, dict[int, float]] = field(default_factory=dict)  # handle slot -> dist over slots
    hinge_target: dict[int, dict[int, float]] = field(default_factory=dict)  # door slot -> dist over slots
    hinge_border: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)  # (parent, door) -> 4-way
    axis_sign: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)  # (parent, door) -> [+1, -1]
    rail_axis: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)  # (parent, drawer) -> 6-way


def _smooth(n: int, k: int, eps: float) -> np.ndarray:
    v = np.full(n, eps / (n - 1) if n > 1 else 0.0)
    v[k] = 1.0 - eps if n > 1 else 1.0
    return v


def _check_dist(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"invalid probability distribution for {what}")
    return p


def lift_graph(graph: FunctionalGraph, eps: float = LIFT_EPS, anchored: bool = True) -> SoftGraph:
    """eps-smoothed one-hot view of a deterministic graph.

    With ``anchored`` every slot is anchored to the node of the same id.
    """
    idx = {n.id: i for i, n in enumerate(graph.nodes)}
    slots = []
    for n in graph.nodes:
        slots.append(SoftSlot(
            exist=1.0 - eps,
            category=_smooth(len(CATEGORIES), CATEGORIES.index(n.category), eps),
            centroid=np.array(n.centroid, dtype=float),
            half_extent=np.array(n.bbox.half_extent, dtype=float),
            anchor_of=n.id if anchored else None,
            anchor_centroid=np.array(n.centroid, dtype=float) if anchored else None,
            anchor_half_extent=np.array(n.bbox.half_extent, dtype=float) if anchored else None,
        ))
    sg = SoftGraph(slots)
    labels = _ordered_edge_labels(graph, idx)
    N = len(slots)
    for i in range(N):
        for j in range(N):
            if i != j:
                sg.edge[(i, j)] = _smooth(len(EDGE_KINDS), EDGE_KINDS.index(labels.get((i, j), "null")), eps)
    for e in graph.edges:
        s, d = idx[e.src], idx[e.dst]
        if e.kind == "attached":
            sg.parent[d] = _slot_dist(N, s, eps)
        elif e.kind == "hinge":
            sg.hinge_target[d] = _slot_dist(N, s, eps)
            sg.hinge_border[(s, d)] = _smooth(4, e.motion.hinge_border, eps)
            sg.axis_sign[(s, d)] = _smooth(2, 0 if e.motion.axis_sign > 0 else 1, eps)
        elif e.kind == "rail":
            sg.rail_axis[(s, d)] = _smooth(6, RAIL_AXES.index(e.motion.rail_axis), eps)
    return sg


def _slot_dist(n: int, k: int, eps: float) -> dict[int, float]:
    v = _smooth(n, k, eps)
    return {i: float(v[i]) for i in range(n)}


def _ordered_edge_labels(graph: FunctionalGraph, idx: Mapping[str, int]) -> dict[tuple[int, int], str]:
    out = {}
    for e in graph.edges:
        if e.src not in idx or e.dst not in idx:
            continue
        s, d = idx[e.src], idx[e.dst]
        out[(s, d)] = e.kind
        if e.kind not in DIRECTED_KINDS:
            out[(d, s)] = e.kind
    return out


def _ce(p: np.ndarray, k: int) -> float:
    return float(-np.log(p[k])) if p[k] > 0 else math.inf


def _bce(e: float, target: float) -> float:
    return float(-(xlogy(target, e) + xlogy(1.0 - target, 1.0 - e)))


def loss_terms(pred: SoftGraph, gt: FunctionalGraph, weights: LossWeights | None = None) -> dict[str, float]:
    """Every sub-term of the objective, before group weighting."""
    w = weights or LossWeights()
    gid = {n.id: j for j, n in enumerate(gt.nodes)}
    slots = pred.slots
    for k, s in enumerate(slots):
        _check_dist(s.category, f"slot {k} category")
        if not 0.0 <= s.exist <= 1.0:
            raise ValueError(f"slot {k} existence outside [0, 1]")
    # assignment: anchors verbatim, free slots by Hungarian
    match: dict[int, int] = {}
    for k, s in enumerate(slots):
        if s.anchor_of is not None:
            if s.anchor_of not in gid:
                raise ValueError(f"anchor references missing node {s.anchor_of!r}")
            match[k] = gid[s.anchor_of]
    if len(set(match.values())) != len(match):
        raise ValueError("anchor map must be injective")
    free = [k for k, s in enumerate(slots) if s.anchor_of is None]
    free_gt = [j for j in range(len(gt.nodes)) if j not in set(match.values())]
    if free and free_gt:
        C = np.zeros((len(free), len(free_gt)))
        for a, k in enumerate(free):
            for b, j in enumerate(free_gt):
                g = gt.nodes[j]
                C[a, b] = w.lambda_cls * _ce(slots[k].category, CATEGORIES.index(g.category)) \
                    + w.lambda_pos * float(np.abs(slots[k].centroid - g.centroid).sum())
        C = np.where(np.isfinite(C), C, 1e300)
        for a, b in hungarian_assign(C).pairs:
            match[free[a]] = free_gt[b]

    def mean(xs):
        return float(np.mean(xs)) if xs else 0.0

    t: dict[str, float] = {}
    t["exist"] = mean([_bce(s.exist, 1.0 if k in match else 0.0) for k, s in enumerate(slots)])
    t["free_exist"] = mean([_bce(slots[k].exist, 1.0 if k in match else 0.0) for k in free])
    t["count"] = abs(sum(slots[k].exist for k in free) - len(free_gt))
    t["mat"] = mean([_ce(slots[k].category, CATEGORIES.index(gt.nodes[j].category)) for k, j in match.items()])
    t["cent"] = mean([float(np.abs(slots[k].centroid - gt.nodes[j].centroid).sum()) for k, j in match.items()])
    t["bbox"] = mean([float(np.abs(slots[k].half_extent - gt.nodes[j].bbox.half_extent).sum()) for k, j in match.items()])
    anch = [k for k, s in enumerate(slots) if s.anchor_of is not None and s.anchor_centroid is not None]
    t["anchor"] = mean([float(np.abs(slots[k].centroid - slots[k].anchor_centroid).sum()) for k in anch])
    t["anchor_bbox"] = mean([float(np.abs(slots[k].half_extent - slots[k].anchor_half_extent).sum()) for k in anch])

    # per-pair terms over real (matched) slots
    inv = {j: k for k, j in match.items()}
    gl = _ordered_edge_labels(gt, gid)
    real = sorted(match)
    ce_edge = []
    for i in real:
        for j in real:
            if i == j:
                continue
            p = pred.edge.get((i, j))
            if p is None:
                raise ValueError(f"missing edge distribution for slot pair {(i, j)}")
            p = _check_dist(p, f"edge {(i, j)}")
            ce_edge.append(_ce(p, EDGE_KINDS.index(gl.get((match[i], match[j]), "null"))))
    t["edge"] = mean(ce_edge)

    par, ht, mot = [], [], []
    for e in gt.edges:
        s, d = gid[e.src], gid[e.dst]
        if s not in inv or d not in inv:
            continue
        ks, kd = inv[s], inv[d]
        if e.kind == "attached":
            dist = pred.parent.get(kd, {})
            par.append(-math.log(dist[ks]) if dist.get(ks, 0.0) > 0 else math.inf)
        elif e.kind == "hinge":
            dist = pred.hinge_target.get(kd, {})
            ht.append(-math.log(dist[ks]) if dist.get(ks, 0.0) > 0 else math.inf)
            hb = pred.hinge_border.get((ks, kd))
            sg = pred.axis_sign.get((ks, kd))
            term = _ce(_check_dist(hb, "hinge_border"), e.motion.hinge_border) if hb is not None else math.inf
            term += _ce(_check_dist(sg, "axis_sign"), 0 if e.motion.axis_sign > 0 else 1) if sg is not None else math.inf
            mot.append(term)
        elif e.kind == "rail":
            ra = pred.rail_axis.get((ks, kd))
            mot.append(_ce(_check_dist(ra, "rail_axis"), RAIL_AXES.index(e.motion.rail_axis)) if ra is not None else math.inf)
    t["parent"] = mean(par)
    t["hinge_target"] = mean(ht)
    t["motion"] = mean(mot)
    return t


def weighted_loss(pred: SoftGraph, gt: FunctionalGraph, weights: LossWeights | None = None) -> float:
    w = weights or LossWeights()
    t = loss_terms(pred, gt, w)
    sub = w.node_subweights()
    names = ("exist", "free_exist", "count", "mat", "cent", "bbox", "anchor", "anchor_bbox")
    l_node = sum(wi * t[n] for wi, n in zip(sub, names))
    return float(w.w_node * l_node + w.w_edge * t["edge"] + w.w_parent * t["parent"]
                 + w.w_ht * t["hinge_target"] + w.w_motion * t["motion"])
