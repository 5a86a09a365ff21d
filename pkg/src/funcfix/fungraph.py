"""Functional graph: labeled part nodes, typed edges and motion attributes."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .labels import CATEGORIES, DIRECTED_KINDS, EDGE_KINDS, RAIL_AXES, rail_axis_vector
from .meshkit import Aabb, TriMesh, axis_gap

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CONTACT_EPS = 0.005


class GraphSchemaError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


@dataclass(frozen=True)
class MotionAttr:
    hinge_border: int | None = None
    axis_sign: int | None = None
    rail_axis: str | None = None


@dataclass(frozen=True, eq=False)
class PartNode:
    id: str
    category: str
    bbox: Aabb
    centroid: np.ndarray
    mesh_ref: str | None = None

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "centroid", c)

    def __eq__(self, other):
        return (
            isinstance(other, PartNode)
            and self.id == other.id
            and self.category == other.category
            and self.bbox == other.bbox
            and np.array_equal(self.centroid, other.centroid)
            and self.mesh_ref == other.mesh_ref
        )

    def __hash__(self):
        return hash((self.id, self.category))

    def with_category(self, category: str) -> PartNode:
        return replace(self, category=category)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: str
    motion: MotionAttr | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst) if self.src < self.dst else (self.dst, self.src)


def make_edge(a: str, b: str, kind: str, motion: MotionAttr | None = None) -> Edge:
    """Build an edge; undirected kinds are stored with src < dst."""
    if kind not in DIRECTED_KINDS and b < a:
        a, b = b, a
    return Edge(a, b, kind, motion)


def node_from_box(pid: str, category: str, box: Aabb, mesh_ref: str | None = None) -> PartNode:
    return PartNode(pid, category, box, box.center, mesh_ref)


@dataclass(frozen=True)
class FunctionalGraph:
    nodes: tuple[PartNode, ...] = ()
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node(self, nid: str) -> PartNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def node_map(self) -> dict[str, PartNode]:
        return {n.id: n for n in self.nodes}

    def edge_between(self, a: str, b: str) -> Edge | None:
        for e in self.edges:
            if {e.src, e.dst} == {a, b}:
                return e
        return None

    def edges_of(self, nid: str) -> list[Edge]:
        return [e for e in self.edges if nid in (e.src, e.dst)]

    def neighbors(self, nid: str, kinds: Iterable[str] | None = None) -> list[str]:
        ks = None if kinds is None else set(kinds)
        out = []
        for e in self.edges:
            if ks is not None and e.kind not in ks:
                continue
            if e.src == nid:
                out.append(e.dst)
            elif e.dst == nid:
                out.append(e.src)
        return out

    def with_edges(self, edges: Iterable[Edge]) -> FunctionalGraph:
        return FunctionalGraph(self.nodes, tuple(edges))

    def with_nodes(self, nodes: Iterable[PartNode]) -> FunctionalGraph:
        return FunctionalGraph(tuple(nodes), self.edges)

    def without_nodes(self, ids: Iterable[str]) -> FunctionalGraph:
        drop = set(ids)
        return FunctionalGraph(
            tuple(n for n in self.nodes if n.id not in drop),
            tuple(e for e in self.edges if e.src not in drop and e.dst not in drop),
        )

    def replace_edge(self, new: Edge) -> FunctionalGraph:
        """Insert ``new``, replacing any existing edge on the same node pair."""
        kept = [e for e in self.edges if e.key != new.key]
        kept.append(new)
        return FunctionalGraph(self.nodes, tuple(kept))

    def functional_edges(self, kind: str) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]


# ----------------------------------------------------------------------------
# construction


def build_contact_graph(parts: Sequence[tuple[TriMesh, str, str]], eps: float = DEFAULT_CONTACT_EPS) -> FunctionalGraph:
    """One node per part plus a contact edge for each pair of eps-inflated boxes that meet."""
    seen: set[str] = set()
    nodes = []
    for mesh, cat, pid in parts:
        if pid in seen:
            raise ValueError(f"duplicate part id: {pid}")
        seen.add(pid)
        nodes.append(node_from_box(pid, cat, mesh.aabb(), pid))
    lo = np.array([n.bbox.min for n in nodes]).reshape(-1, 3) - eps
    hi = np.array([n.bbox.max for n in nodes]).reshape(-1, 3) + eps
    edges = []
    for i in range(len(nodes)):
        meet = np.all((lo[i] <= hi[i + 1:]) & (lo[i + 1:] <= hi[i]), axis=1)
        for k in np.nonzero(meet)[0]:
            edges.append(make_edge(nodes[i].id, nodes[i + 1 + k].id, "contact"))
    return FunctionalGraph(tuple(nodes), tuple(edges))


def edge_descriptor(a: PartNode, b: PartNode) -> np.ndarray:
    """[|r|, |g|, r_hat (3), g_axis (3)] with r the centroid offset and g the per-axis box gap."""
    r = np.asarray(b.centroid) - np.asarray(a.centroid)
    nr = float(np.linalg.norm(r))
    if nr == 0.0:
        log.warning("coincident centroids for %s and %s; r_hat set to zero", a.id, b.id)
        rhat = np.zeros(3)
    else:
        rhat = r / nr
    g = axis_gap(a.bbox, b.bbox)
    return np.concatenate([[nr, float(np.linalg.norm(g))], rhat, g])


# ----------------------------------------------------------------------------
# motion axes


@dataclass(frozen=True)
class AxisLine:
    point: np.ndarray
    direction: np.ndarray
    kind: str  # revolute | prismatic

    def same_as(self, other: AxisLine, tol: float = 1e-9) -> bool:
        """Oriented-line equality: equal directions and each point on the other line."""
        if self.kind != other.kind:
            return False
        if np.max(np.abs(self.direction - other.direction)) > tol:
            return False
        d = other.point - self.point
        off = d - self.direction * (d @ self.direction)
        return bool(np.linalg.norm(off) <= tol)


def thin_axis(box: Aabb) -> int:
    ext = box.extent
    if np.all(ext == ext[0]):
        raise ValueError("degenerate box: thin axis undefined")
    return int(np.argmin(ext))  # first minimum, so ties resolve x < y < z


def nonthin_axes(thin: int) -> tuple[int, int]:
    a = [k for k in range(3) if k != thin]
    return a[0], a[1]


def border_index(thin: int, fixed_axis: int, side: int) -> int:
    """Index of the panel-face edge lying at ``side`` (0 min, 1 max) of ``fixed_axis``."""
    a0, a1 = nonthin_axes(thin)
    if fixed_axis == a0:
        return side
    if fixed_axis == a1:
        return 2 + side
    raise ValueError("fixed axis must be a non-thin axis")


def border_geometry(box: Aabb, border: int) -> tuple[int, int, int, int]:
    """(thin axis, fixed axis, side, running axis) for a border index."""
    if border not in (0, 1, 2, 3):
        raise ValueError(f"hinge_border out of range: {border}")
    t = thin_axis(box)
    a0, a1 = nonthin_axes(t)
    fixed = (a0, a1)[border // 2]
    run = a1 if fixed == a0 else a0
    return t, fixed, border % 2, run


def hinge_line(box: Aabb, border: int, sign: int) -> AxisLine:
    t, fixed, side, run = border_geometry(box, border)
    p = box.center.copy()
    p[fixed] = box.max[fixed] if side else box.min[fixed]
    d = np.zeros(3)
    d[run] = 1.0 if sign > 0 else -1.0
    return AxisLine(p, d, "revolute")


def border_segment(box: Aabb, border: int) -> tuple[np.ndarray, np.ndarray]:
    """End points of the border edge (through the thin-axis centre)."""
    t, fixed, side, run = border_geometry(box, border)
    p = box.center.copy()
    p[fixed] = box.max[fixed] if side else box.min[fixed]
    a, b = p.copy(), p.copy()
    a[run] = box.min[run]
    b[run] = box.max[run]
    return a, b


def motion_axis_world(graph: FunctionalGraph, edge: Edge) -> AxisLine:
    """World axis line of a hinge or rail edge, computed from the child's box."""
    if edge.kind not in ("hinge", "rail"):
        raise ValueError(f"edge kind {edge.kind} carries no motion")
    m = edge.motion
    child = graph.node(edge.dst)
    if edge.kind == "hinge":
        if m is None or m.hinge_border is None or m.axis_sign is None:
            raise ValueError("missing MotionAttr on hinge edge")
        return hinge_line(child.bbox, m.hinge_border, m.axis_sign)
    if m is None or m.rail_axis is None:
        raise ValueError("missing MotionAttr on rail edge")
    return AxisLine(np.array(child.centroid, dtype=float), rail_axis_vector(m.rail_axis), "prismatic")


def mirror_axis_line(line: AxisLine, axis: int) -> AxisLine:
    """Mirror image of a motion axis across the plane ``x[axis] = 0``.

    Revolute axes are rotation (pseudo) vectors, so the mirrored direction
    gains an extra sign flip; translation axes mirror as ordinary vectors.
    """
    M = np.ones(3)
    M[axis] = -1.0
    p = line.point * M
    d = line.direction * M
    if line.kind == "revolute":
        d = -d
    return AxisLine(p, d, line.kind)


# ----------------------------------------------------------------------------
# validation


def validate(graph: FunctionalGraph, allow_unknown: bool = False) -> list[str]:
    out: list[str] = []
    ids: dict[str, PartNode] = {}
    for n in graph.nodes:
        if n.id in ids:
            out.append(f"node {n.id}: duplicate id")
        ids[n.id] = n
        if n.category not in CATEGORIES:
            out.append(f"node {n.id}: unknown category token {n.category!r}")
        elif n.category == "unknown" and not allow_unknown:
            out.append(f"node {n.id}: 'unknown' category on a functional graph")
        if np.any(n.bbox.min > n.bbox.max):
            out.append(f"node {n.id}: bbox min > max")
        if n.mesh_ref is None and not np.allclose(n.centroid, n.bbox.center, atol=1e-9, rtol=0):
            out.append(f"node {n.id}: centroid differs from bbox centre")

    def cat_ok(nid: str, allowed: set[str]) -> bool:
        c = ids[nid].category
        return c in allowed or (allow_unknown and c == "unknown")

    pairs: set[tuple[str, str]] = set()
    handle_attached: set[str] = set()
    handle_contacts: dict[str, list[str]] = {}
    for e in graph.edges:
        tag = f"edge {e.src}->{e.dst} ({e.kind})"
        if e.kind not in EDGE_KINDS:
            out.append(f"{tag}: unknown edge kind")
            continue
        if e.src not in ids or e.dst not in ids:
            out.append(f"{tag}: endpoint not in graph")
            continue
        if e.src == e.dst:
            out.append(f"{tag}: self edge")
            continue
        if e.key in pairs:
            out.append(f"{tag}: more than one edge on this node pair")
        pairs.add(e.key)
        if e.kind not in DIRECTED_KINDS and not e.src < e.dst:
            out.append(f"{tag}: undirected edge must be stored with src < dst")
        m = e.motion
        if e.kind == "hinge":
            if m is None or m.hinge_border not in (0, 1, 2, 3) or m.axis_sign not in (1, -1):
                out.append(f"{tag}: hinge needs hinge_border in 0..3 and axis_sign +-1")
            elif m.rail_axis is not None:
                out.append(f"{tag}: hinge must not carry rail_axis")
            if not cat_ok(e.dst, {"door"}):
                out.append(f"{tag}: hinge child {e.dst} is {ids[e.dst].category}, not door")
        elif e.kind == "rail":
            if m is None or m.rail_axis not in RAIL_AXES:
                out.append(f"{tag}: rail needs rail_axis")
            elif m.hinge_border is not None or m.axis_sign is not None:
                out.append(f"{tag}: rail must not carry hinge attributes")
            if not cat_ok(e.dst, {"drawer"}):
                out.append(f"{tag}: rail child {e.dst} is {ids[e.dst].category}, not drawer")
        else:
            if m is not None and (m.hinge_border is not None or m.axis_sign is not None or m.rail_axis is not None):
                out.append(f"{tag}: motion attributes only allowed on hinge/rail")
            if e.kind == "attached":
                if not cat_ok(e.dst, {"handle"}):
                    out.append(f"{tag}: attached child {e.dst} is {ids[e.dst].category}, not handle")
                if not cat_ok(e.src, {"door", "drawer"}):
                    out.append(f"{tag}: attached parent {e.src} is {ids[e.src].category}, not door/drawer")
                handle_attached.add(e.dst)
            elif e.kind == "contact":
                for a, b in ((e.src, e.dst), (e.dst, e.src)):
                    if ids[a].category == "handle":
                        handle_contacts.setdefault(a, []).append(b)
    for h in sorted(handle_attached):
        for other in handle_contacts.get(h, []):
            out.append(f"node {h}: attached handle also carries a contact edge to {other}")
    return out


# ----------------------------------------------------------------------------
# serialization


def _num(x) -> float:
    return float(x)


def serialize(graph: FunctionalGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        d = {
            "id": n.id,
            "category": n.category,
            "bbox_min": [_num(v) for v in n.bbox.min],
            "bbox_max": [_num(v) for v in n.bbox.max],
            "centroid": [_num(v) for v in n.centroid],
        }
        if n.mesh_ref is not None:
            d["mesh_ref"] = n.mesh_ref
        nodes.append(d)
    edges = []
    for e in graph.edges:
        d = {"src": e.src, "dst": e.dst, "kind": e.kind}
        if e.motion is not None:
            if e.motion.hinge_border is not None:
                d["hinge_border"] = int(e.motion.hinge_border)
            if e.motion.axis_sign is not None:
                d["axis_sign"] = int(e.motion.axis_sign)
            if e.motion.rail_axis is not None:
                d["rail_axis"] = e.motion.rail_axis
        edges.append(d)
    return {"schema_version": SCHEMA_VERSION, "nodes": nodes, "edges": edges}


def _vec3(doc, ptr: str) -> np.ndarray:
    if not isinstance(doc, list) or len(doc) != 3:
        raise GraphSchemaError(ptr, "expected an array of 3 numbers")
    try:
        v = np.array([float(x) for x in doc])
    except (TypeError, ValueError):
        raise GraphSchemaError(ptr, "expected numbers") from None
    if not np.all(np.isfinite(v)):
        raise GraphSchemaError(ptr, "non-finite value")
    return v


def deserialize(doc: dict) -> FunctionalGraph:
    if not isinstance(doc, dict):
        raise GraphSchemaError("", "expected an object")
    for key in ("nodes", "edges"):
        if not isinstance(doc.get(key), list):
            raise GraphSchemaError(f"/{key}", "expected an array")
    nodes = []
    seen = set()
    for i, nd in enumerate(doc["nodes"]):
        p = f"/nodes/{i}"
        if not isinstance(nd, dict):
            raise GraphSchemaError(p, "expected an object")
        for key in ("id", "category", "bbox_min", "bbox_max", "centroid"):
            if key not in nd:
                raise GraphSchemaError(f"{p}/{key}", "missing")
        nid = nd["id"]
        if not isinstance(nid, str):
            raise GraphSchemaError(f"{p}/id", "expected a string")
        if nid in seen:
            raise GraphSchemaError(f"{p}/id", f"duplicate node id {nid}")
        seen.add(nid)
        if nd["category"] not in CATEGORIES:
            raise GraphSchemaError(f"{p}/category", f"unknown category {nd['category']!r}")
        lo = _vec3(nd["bbox_min"], f"{p}/bbox_min")
        hi = _vec3(nd["bbox_max"], f"{p}/bbox_max")
        if np.any(lo > hi):
            raise GraphSchemaError(f"{p}/bbox_max", "bbox_max below bbox_min")
        c = _vec3(nd["centroid"], f"{p}/centroid")
        mref = nd.get("mesh_ref")
        if mref is not None and not isinstance(mref, str):
            raise GraphSchemaError(f"{p}/mesh_ref", "expected a string")
        nodes.append(PartNode(nid, nd["category"], Aabb(lo, hi), c, mref))
    edges = []
    for i, ed in enumerate(doc["edges"]):
        p = f"/edges/{i}"
        if not isinstance(ed, dict):
            raise GraphSchemaError(p, "expected an object")
        for key in ("src", "dst", "kind"):
            if key not in ed:
                raise GraphSchemaError(f"{p}/{key}", "missing")
        if ed["kind"] not in EDGE_KINDS:
            raise GraphSchemaError(f"{p}/kind", f"unknown edge kind {ed['kind']!r}")
        for key in ("src", "dst"):
            if ed[key] not in seen:
                raise GraphSchemaError(f"{p}/{key}", f"unknown node id {ed[key]!r}")
        hb, sg, ra = ed.get("hinge_border"), ed.get("axis_sign"), ed.get("rail_axis")
        if hb is not None and hb not in (0, 1, 2, 3):
            raise GraphSchemaError(f"{p}/hinge_border", "expected 0..3")
        if sg is not None and sg not in (1, -1):
            raise GraphSchemaError(f"{p}/axis_sign", "expected +1 or -1")
        if ra is not None and ra not in RAIL_AXES:
            raise GraphSchemaError(f"{p}/rail_axis", f"expected one of {RAIL_AXES}")
        motion = MotionAttr(hb, sg, ra) if (hb is not None or sg is not None or ra is not None) else None
        edges.append(Edge(ed["src"], ed["dst"], ed["kind"], motion))
    return FunctionalGraph(tuple(nodes), tuple(edges))


def dumps(graph: FunctionalGraph) -> str:
    return json.dumps(serialize(graph), indent=1, sort_keys=False)


def loads(text: str) -> FunctionalGraph:
    return deserialize(json.loads(text))


def save_graph(graph: FunctionalGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(graph) + "\n")


def load_graph(path: str) -> FunctionalGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def graphs_equal(a: FunctionalGraph, b: FunctionalGraph) -> bool:
    """Field-for-field equality (exact floats)."""
    return serialize(a) == serialize(b)
