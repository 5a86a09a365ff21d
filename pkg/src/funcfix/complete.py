"""Heuristic graph completion: relabel, infer functional edges, propose missing parts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fungraph import (
    Edge,
    FunctionalGraph,
    MotionAttr,
    PartNode,
    border_geometry,
    make_edge,
    node_from_box,
    thin_axis,
)
from .labels import RAIL_AXES, STATIC_CATEGORIES, rail_axis_vector
from .meshkit import Aabb, TriMesh, axis_gap, union_aabb

log = logging.getLogger(__name__)

FREE_SLOT_CAP = 16


class CompletionError(ValueError):
    pass


@dataclass(frozen=True)
class CompleteConfig:
    contact_eps: float = 0.005
    alpha: float = 0.6
    band: float = 0.05
    resolution: int = 512
    top_thickness: float = 0.02
    thin_ratio: float = 0.15
    front_axis: str = "+y"
    front_tol: float = 0.03
    handle_volume_ratio: float = 0.1
    handle_max_depth: float = 0.05
    handle_ratio: float = 0.25
    handle_depth: float = 0.03
    propose_top: bool = True
    propose_handles: bool = True
    free_slot_cap: int = FREE_SLOT_CAP

    def __post_init__(self):
        if self.front_axis not in RAIL_AXES or self.front_axis[1] == "z":
            raise ValueError(f"front_axis must be a horizontal signed axis, got {self.front_axis!r}")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0 < self.band <= 1:
            raise ValueError("band must lie in (0, 1]")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")


@dataclass
class CompletionProposal:
    new_nodes: list[tuple[PartNode, str, float]] = field(default_factory=list)  # node, provenance tag, confidence
    new_or_retyped_edges: list[tuple[Edge, float]] = field(default_factory=list)
    unresolved: list[str] = field(default_factory=list)
    relabeled: dict[str, str] = field(default_factory=dict)
    coverage: float | None = None

    def to_dict(self) -> dict:
        def edge_doc(e: Edge) -> dict:
            d = {"src": e.src, "dst": e.dst, "kind": e.kind}
            if e.motion is not None:
                d["motion"] = {k: v for k, v in (("hinge_border", e.motion.hinge_border), ("axis_sign", e.motion.axis_sign),
                                                  ("rail_axis", e.motion.rail_axis)) if v is not None}
            return d

        return {
            "schema_version": 1,
            "new_nodes": [{"id": n.id, "category": n.category, "tag": t, "confidence": c,
                           "bbox": {"min": [float(x) for x in n.bbox.min], "max": [float(x) for x in n.bbox.max]}}
                          for n, t, c in self.new_nodes],
            "new_or_retyped_edges": [dict(edge_doc(e), confidence=c) for e, c in self.new_or_retyped_edges],
            "unresolved": list(self.unresolved),
            "relabeled": dict(sorted(self.relabeled.items())),
            "coverage": self.coverage,
        }


# ----------------------------------------------------------------------------
# relabeling


def _front(config: CompleteConfig) -> tuple[int, float]:
    return "xyz".index(config.front_axis[1]), (1.0 if config.front_axis[0] == "+" else -1.0)


def _front_max(box: Aabb, k: int, sgn: float) -> float:
    return float(box.max[k]) if sgn > 0 else float(-box.min[k])


def _front_min(box: Aabb, k: int, sgn: float) -> float:
    return float(box.min[k]) if sgn > 0 else float(-box.max[k])


def is_thin(box: Aabb, ratio: float = 0.15) -> bool:
    e = np.sort(box.extent)
    return bool(e[1] > 0 and e[0] / e[1] < ratio)


def _volume(box: Aabb) -> float:
    return float(np.prod(box.extent))


def relabel_unknown(graph: FunctionalGraph, config: CompleteConfig | None = None) -> tuple[FunctionalGraph, dict[str, str]]:
    """Assign categories to ``unknown`` nodes from box geometry alone.

    Rules, in order: small parts sitting on the front of a larger contact
    neighbour are handles; thin front-facing panels at the front are doors;
    other parts reaching the front are drawers; remaining thin parts are
    classified by their thin axis and position; anything else is misc.
    """
    cfg = config or CompleteConfig()
    unknown = [n for n in graph.nodes if n.category == "unknown"]
    if not unknown:
        return graph, {}
    k, sgn = _front(cfg)
    nodes = graph.node_map()
    whole = union_aabb(n.bbox for n in graph.nodes)
    handles = set()
    for n in unknown:
        if _front_extent(n.bbox, k) > cfg.handle_max_depth:
            continue
        for m_id in graph.neighbors(n.id, ("contact",)):
            m = nodes[m_id]
            if (_front_min(n.bbox, k, sgn) >= _front_max(m.bbox, k, sgn) - cfg.contact_eps
                    and _volume(n.bbox) < cfg.handle_volume_ratio * _volume(m.bbox)):
                handles.add(n.id)
                break
    front = max(_front_max(n.bbox, k, sgn) for n in graph.nodes if n.id not in handles)
    eps = cfg.contact_eps
    out: dict[str, str] = {}
    for n in unknown:
        b = n.bbox
        if n.id in handles:
            out[n.id] = "handle"
            continue
        thin = is_thin(b, cfg.thin_ratio)
        frontal = _front_max(b, k, sgn) >= front - cfg.front_tol
        t = thin_axis(b) if thin else None
        if frontal and thin and t == k:
            out[n.id] = "door"
        elif frontal and not thin:
            out[n.id] = "drawer"
        elif thin and t == 2:
            if b.max[2] >= whole.max[2] - eps:
                out[n.id] = "top_panel"
            elif b.min[2] <= whole.min[2] + eps:
                out[n.id] = "bottom_panel"
            else:
                out[n.id] = "shelf"
        elif thin and t == k:
            out[n.id] = "back_panel" if _front_min(b, k, sgn) <= _front_min(whole, k, sgn) + eps else "face_frame"
        elif thin:
            out[n.id] = "side_panel" if (b.min[t] <= whole.min[t] + eps or b.max[t] >= whole.max[t] - eps) else "divider"
        elif b.min[2] <= whole.min[2] + eps and b.extent[2] > 2.0 * max(b.extent[0], b.extent[1]):
            out[n.id] = "leg"
        else:
            out[n.id] = "misc"
    return graph.with_nodes([n.with_category(out[n.id]) if n.id in out else n for n in graph.nodes]), out


def _front_extent(box: Aabb, k: int) -> float:
    return float(box.extent[k])


# ----------------------------------------------------------------------------
# motion attributes


def _static_box(graph: FunctionalGraph) -> Aabb | None:
    boxes = [n.bbox for n in graph.nodes if n.category in STATIC_CATEGORIES]
    return union_aabb(boxes) if boxes else None


def _border_midpoint(box: Aabb, border: int) -> np.ndarray:
    t, fixed, side, run = border_geometry(box, border)
    p = box.center.copy()
    p[fixed] = box.max[fixed] if side else box.min[fixed]
    return p


def _point_box_distance(p: np.ndarray, box: Aabb) -> float:
    return float(np.linalg.norm(np.maximum(0.0, np.maximum(box.min - p, p - box.max))))


def _run_overlap(door: Aabb, parent: Aabb, run: int) -> float:
    ov = min(door.max[run], parent.max[run]) - max(door.min[run], parent.min[run])
    return max(0.0, float(ov)) / float(door.extent[run])


def hinge_sign(door: Aabb, border: int, interior) -> int:
    """Sign whose opening sweep moves the free edge away from the interior point."""
    t, fixed, side, run = border_geometry(door, border)
    p = _border_midpoint(door, border)
    out = np.zeros(3)
    out[t] = 1.0 if door.center[t] >= np.asarray(interior, dtype=float)[t] else -1.0
    e = np.zeros(3)
    e[run] = 1.0
    v = np.cross(e, door.center - p)
    return 1 if float(v @ out) > 0 else -1


def predict_hinge_attrs(door: PartNode, parent: PartNode, interior=None, handle: PartNode | None = None) -> tuple[int, int, float]:
    """(hinge_border, axis_sign, confidence) for a door hinged to ``parent``.

    The border is the door edge whose midpoint is nearest the parent's box.
    Ties prefer vertical edges, then the edge farther from a known handle,
    then the lower border index; a tie-broken choice has confidence 0.5.
    """
    box = door.bbox
    interior = parent.bbox.center if interior is None else interior
    keys = []
    for b in range(4):
        t, fixed, side, run = border_geometry(box, b)
        d = _point_box_distance(_border_midpoint(box, b), parent.bbox)
        far = -abs(float(handle.centroid[fixed] - _border_midpoint(box, b)[fixed])) if handle is not None else 0.0
        keys.append((round(d, 9), 0 if run == 2 else 1, round(far, 9), b))
    keys.sort()
    border = keys[0][3]
    conf = 1.0 if keys[1][0] > keys[0][0] else 0.5
    return border, hinge_sign(box, border, interior), conf


def _hinge_choice(door: PartNode, candidates: Sequence[PartNode], handle: PartNode | None, eps: float):
    """Parent and border jointly: reachable (parent, border) pairs ranked by preference."""
    box = door.bbox
    reach = eps + float(box.extent[thin_axis(box)])
    pairs = []
    for P in candidates:
        for b in range(4):
            t, fixed, side, run = border_geometry(box, b)
            mid = _border_midpoint(box, b)
            if _point_box_distance(mid, P.bbox) > reach:
                continue
            ov = _run_overlap(box, P.bbox, run)
            far = -abs(float(handle.centroid[fixed] - mid[fixed])) if handle is not None else 0.0
            pairs.append(((0 if ov >= 0.5 else 1, 0 if run == 2 else 1, round(far, 9), -round(ov, 9), P.id, b), P, b))
    if not pairs:
        return None
    pairs.sort(key=lambda x: x[0])
    best = pairs[0]
    conf = 1.0 if len(pairs) == 1 or pairs[1][0][:4] != best[0][:4] else 0.5
    return best[1], best[2], conf


def predict_rail_axis(drawer: PartNode, body_nodes: Sequence[PartNode], tol: float = 1e-6) -> str:
    """Horizontal canonical direction in which the drawer sticks out furthest beyond the body."""
    if not body_nodes:
        raise CompletionError(f"drawer {drawer.id!r} has no body to slide out of")
    body = union_aabb(n.bbox for n in body_nodes)
    d, bc = drawer.bbox, body.center
    best = None
    for tok in ("+x", "-x", "+y", "-y"):
        k, s = "xyz".index(tok[1]), (1.0 if tok[0] == "+" else -1.0)
        exposure = float(d.max[k] - body.max[k]) if s > 0 else float(body.min[k] - d.min[k])
        offset = s * float(drawer.centroid[k] - bc[k])
        key = (round(exposure, 9), round(offset, 9))
        if best is None or key > best[0]:
            best = (key, tok)
    if best[0][0] < -tol:
        raise CompletionError(f"drawer {drawer.id!r} is fully enclosed")
    return best[1]


# ----------------------------------------------------------------------------
# edge inference


@dataclass(frozen=True)
class InferredEdge:
    edge: Edge
    parent: str
    confidence: float


def _box_gap(a: Aabb, b: Aabb) -> float:
    return float(np.linalg.norm(axis_gap(a, b)))


def infer_functional_edges(graph: FunctionalGraph, config: CompleteConfig | None = None) -> tuple[list[InferredEdge], list[str]]:
    """Attached edges for handles, hinge edges for doors and rail edges for drawers.

    Parts that already carry their functional edge are left alone.
    """
    cfg = config or CompleteConfig()
    nodes = graph.node_map()
    out: list[InferredEdge] = []
    unresolved: list[str] = []
    has = {(e.kind, e.dst) for e in graph.edges if e.kind in ("hinge", "rail", "attached")}
    static_box = _static_box(graph)
    movers = sorted(n.id for n in graph.nodes if n.category in ("door", "drawer"))
    handle_of: dict[str, str] = {e.src: e.dst for e in graph.edges if e.kind == "attached"}

    for h in sorted(n.id for n in graph.nodes if n.category == "handle"):
        if ("attached", h) in has:
            continue
        if not movers:
            unresolved.append(f"{h}: no door or drawer to attach to")
            continue
        hb = nodes[h]
        keyed = sorted(movers, key=lambda m: (round(_box_gap(hb.bbox, nodes[m].bbox), 9),
                                              round(float(np.linalg.norm(hb.centroid - nodes[m].centroid)), 9), m))
        p = keyed[0]
        tie = len(keyed) > 1 and round(_box_gap(hb.bbox, nodes[keyed[1]].bbox), 9) == round(_box_gap(hb.bbox, nodes[p].bbox), 9)
        out.append(InferredEdge(make_edge(p, h, "attached"), p, 0.5 if tie else 1.0))
        handle_of.setdefault(p, h)

    for d in movers:
        n = nodes[d]
        statics = sorted((nodes[m] for m in graph.neighbors(d, ("contact",)) if nodes[m].category in STATIC_CATEGORIES),
                         key=lambda x: x.id)
        if n.category == "door":
            if ("hinge", d) in has:
                continue
            if not statics:
                unresolved.append(f"{d}: door has no static contact neighbour")
                continue
            handle = nodes.get(handle_of.get(d, ""))
            choice = _hinge_choice(n, statics, handle, cfg.contact_eps)
            if choice is None:
                unresolved.append(f"{d}: no panel edge within reach of the door border")
                continue
            parent, border, conf = choice
            interior = static_box.center if static_box is not None else parent.bbox.center
            sign = hinge_sign(n.bbox, border, interior)
            out.append(InferredEdge(make_edge(parent.id, d, "hinge", MotionAttr(hinge_border=border, axis_sign=sign)),
                                    parent.id, conf))
        else:
            if ("rail", d) in has:
                continue
            if not statics:
                unresolved.append(f"{d}: drawer has no static contact neighbour")
                continue
            sides = [s for s in statics if s.category == "side_panel"]
            parent = (sides or statics)[0]
            body = [x for x in graph.nodes if x.category in STATIC_CATEGORIES]
            try:
                axis = predict_rail_axis(n, body)
            except CompletionError as exc:
                unresolved.append(str(exc))
                continue
            out.append(InferredEdge(make_edge(parent.id, d, "rail", MotionAttr(rail_axis=axis)), parent.id,
                                    1.0 if len(sides) <= 1 else 0.5))
    return out, unresolved


# ----------------------------------------------------------------------------
# top detection


def _clip_below(poly: np.ndarray, z0: float) -> np.ndarray:
    """Part of a planar polygon with z >= z0 (one Sutherland-Hodgman pass)."""
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ina, inb = a[2] >= z0, b[2] >= z0
        if ina:
            out.append(a)
        if ina != inb:
            t = (z0 - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.array(out) if out else np.zeros((0, 3))


def _raster_polygon(mask: np.ndarray, poly: np.ndarray, lo: np.ndarray, px: np.ndarray) -> None:
    """Mark pixels whose centres lie in the convex polygon (xy projection); degenerate polygons mark nothing."""
    if len(poly) < 3:
        return
    P = poly[:, :2]
    area = 0.5 * float(np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))
    if abs(area) < 1e-15:
        return
    if area < 0:
        P = P[::-1]
    n = mask.shape[0]
    i0 = max(0, int(np.floor((P[:, 0].min() - lo[0]) / px[0] - 0.5)))
    i1 = min(n - 1, int(np.ceil((P[:, 0].max() - lo[0]) / px[0] - 0.5)))
    j0 = max(0, int(np.floor((P[:, 1].min() - lo[1]) / px[1] - 0.5)))
    j1 = min(mask.shape[1] - 1, int(np.ceil((P[:, 1].max() - lo[1]) / px[1] - 0.5)))
    if i1 < i0 or j1 < j0:
        return
    xs = lo[0] + (np.arange(i0, i1 + 1) + 0.5) * px[0]
    ys = lo[1] + (np.arange(j0, j1 + 1) + 0.5) * px[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.ones(X.shape, dtype=bool)
    for a, b in zip(P, np.roll(P, -1, axis=0)):
        inside &= (b[0] - a[0]) * (Y - a[1]) - (b[1] - a[1]) * (X - a[0]) >= -1e-12
    mask[i0:i1 + 1, j0:j1 + 1] |= inside


def footprint_masks(meshes: Sequence[TriMesh], band: float = 0.05, resolution: int = 512):
    """Ground-plane occupancy of everything and of the top height band, plus the grid frame."""
    meshes = [m for m in meshes if m.n_triangles]
    if not meshes:
        raise CompletionError("empty asset")
    box = union_aabb(m.aabb() for m in meshes)
    lo, hi = box.min, box.max
    span = np.maximum(hi[:2] - lo[:2], 1e-12)
    px = span / resolution
    z0 = float(hi[2] - band * (hi[2] - lo[2]))
    all_mask = np.zeros((resolution, resolution), dtype=bool)
    top_mask = np.zeros_like(all_mask)
    for m in meshes:
        for tri in m.corners:
            _raster_polygon(all_mask, tri, lo, px)
            if tri[:, 2].max() >= z0:
                _raster_polygon(top_mask, _clip_below(tri, z0), lo, px)
    return all_mask, top_mask, (lo, px, z0)


def top_coverage(meshes: Sequence[TriMesh], band: float = 0.05, resolution: int = 512) -> float:
    all_mask, top_mask, _ = footprint_masks(meshes, band, resolution)
    n_all = int(all_mask.sum())
    return float(top_mask.sum()) / n_all if n_all else 0.0


def detect_missing_top(parts: Sequence[tuple[TriMesh, str, str]] | Sequence[TriMesh], graph: FunctionalGraph | None = None,
                       alpha: float = 0.6, band: float = 0.05, resolution: int = 512, thickness: float = 0.02,
                       node_id: str = "top_added") -> tuple[PartNode | None, float]:
    """(proposed top node or None, coverage ratio c); fires iff c < alpha."""
    meshes = [p if isinstance(p, TriMesh) else p[0] for p in parts]
    all_mask, top_mask, (lo, px, z0) = footprint_masks(meshes, band, resolution)
    n_all = int(all_mask.sum())
    c = float(top_mask.sum()) / n_all if n_all else 0.0
    if graph is not None and any(n.category == "top_panel" for n in graph.nodes):
        return None, c
    if not c < alpha:
        return None, c
    V = np.concatenate([m.vertices for m in meshes if m.n_triangles])
    rim = V[V[:, 2] >= z0]
    zmax = float(V[:, 2].max())
    box = Aabb([rim[:, 0].min(), rim[:, 1].min(), zmax], [rim[:, 0].max(), rim[:, 1].max(), zmax + thickness])
    return node_from_box(node_id, "top_panel", box, None), c


# ----------------------------------------------------------------------------
# handle proposals


def propose_missing_handles(graph: FunctionalGraph, config: CompleteConfig | None = None) -> list[tuple[PartNode, Edge]]:
    """Handle boxes for doors and drawers without one: drawer front centre, door mid-height opposite the hinge."""
    cfg = config or CompleteConfig()
    k, sgn = _front(cfg)
    owned = {e.src for e in graph.edges if e.kind == "attached"}
    hinges = {e.dst: e for e in graph.edges if e.kind == "hinge"}
    rails = {e.dst: e for e in graph.edges if e.kind == "rail"}
    ids = set(graph.ids)
    static_box = _static_box(graph)
    out = []
    for n in sorted(graph.nodes, key=lambda x: x.id):
        if n.category not in ("door", "drawer") or n.id in owned:
            continue
        b = n.bbox
        if n.category == "drawer":
            out_axis = rail_axis_vector(rails[n.id].motion.rail_axis) if n.id in rails else sgn * np.eye(3)[k]
            a = int(np.argmax(np.abs(out_axis)))
            s = float(np.sign(out_axis[a]))
            lat = [i for i in range(3) if i != a and i != 2][0]
            size = np.zeros(3)
            size[lat] = cfg.handle_ratio * b.extent[lat]
            size[2] = min(0.25 * size[lat], 0.5 * b.extent[2])
            size[a] = cfg.handle_depth
            c = b.center.copy()
        else:
            t = thin_axis(b)
            ref = static_box.center[t] if static_box is not None else b.center[t] - sgn * (t == k)
            a, s = t, (1.0 if b.center[t] >= ref else -1.0)
            size = np.zeros(3)
            size[a] = cfg.handle_depth
            c = b.center.copy()
            e = hinges.get(n.id)
            if e is not None and e.motion is not None and e.motion.hinge_border is not None:
                _, fixed, side, run = border_geometry(b, e.motion.hinge_border)
            else:
                fixed, side, run = [i for i in range(3) if i != t][0], 0, [i for i in range(3) if i != t][1]
            size[run] = cfg.handle_ratio * b.extent[run]
            size[fixed] = min(0.25 * size[run], 0.25 * b.extent[fixed])
            free = b.min[fixed] if side else b.max[fixed]
            inward = 1.0 if side else -1.0
            c[fixed] = free + inward * (min(0.03, 0.25 * b.extent[fixed]) + 0.5 * size[fixed])
        face = b.max[a] if s > 0 else b.min[a]
        c[a] = face + s * 0.5 * cfg.handle_depth
        hid = f"{n.id}_handle"
        while hid in ids:
            hid += "_"
        ids.add(hid)
        node = node_from_box(hid, "handle", Aabb(c - 0.5 * size, c + 0.5 * size), None)
        out.append((node, make_edge(n.id, hid, "attached")))
    return out


# ----------------------------------------------------------------------------
# orchestration


def _contacts_for(node: PartNode, graph: FunctionalGraph, eps: float) -> list[Edge]:
    lo, hi = node.bbox.min - eps, node.bbox.max + eps
    return [make_edge(node.id, n.id, "contact") for n in graph.nodes
            if n.id != node.id and np.all(lo <= n.bbox.max) and np.all(n.bbox.min <= hi)]


def complete(graph: FunctionalGraph, parts: Sequence[tuple[TriMesh, str, str]] | None = None,
             config: CompleteConfig | None = None) -> tuple[FunctionalGraph, CompletionProposal]:
    """Relabel unknowns, infer hinge/rail/attached edges, then propose a top and missing handles."""
    cfg = config or CompleteConfig()
    prop = CompletionProposal()
    g, relabeled = relabel_unknown(graph, cfg)
    prop.relabeled = relabeled

    inferred, unresolved = infer_functional_edges(g, cfg)
    prop.unresolved += unresolved
    for item in inferred:
        g = g.replace_edge(item.edge)  # retypes the contact on the same pair
        prop.new_or_retyped_edges.append((item.edge, item.confidence))

    slots = cfg.free_slot_cap
    if cfg.propose_top and parts and slots > 0:
        node, c = detect_missing_top(parts, g, cfg.alpha, cfg.band, cfg.resolution, cfg.top_thickness)
        prop.coverage = c
        if node is not None and node.id not in g.ids:
            g = g.with_nodes([*g.nodes, node])
            prop.new_nodes.append((node, "top", 1.0))
            slots -= 1
            for e in _contacts_for(node, g, cfg.contact_eps):
                g = g.replace_edge(e) if g.edge_between(e.src, e.dst) is None else g
                prop.new_or_retyped_edges.append((e, 1.0))
    if cfg.propose_handles:
        for node, edge in propose_missing_handles(g, cfg)[:max(0, slots)]:
            g = g.with_nodes([*g.nodes, node]).replace_edge(edge)
            prop.new_nodes.append((node, "handle", 1.0))
            prop.new_or_retyped_edges.append((edge, 1.0))
    # an attached handle hangs off its parent only
    attached = {e.dst for e in g.edges if e.kind == "attached"}
    edges = [e for e in g.edges if not (e.kind == "contact" and (e.src in attached or e.dst in attached))]
    g = g.with_edges(sorted(edges, key=lambda e: (e.key, e.kind)))
    for msg in prop.unresolved:
        log.warning("unresolved: %s", msg)
    return g, prop
