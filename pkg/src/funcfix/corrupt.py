"""Structure-corrupting augmentation: weighted strategies, severity curriculum and mirror flips."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fungraph import Edge, FunctionalGraph, MotionAttr, PartNode, make_edge, nonthin_axes, thin_axis
from .labels import STATIC_CATEGORIES
from .meshkit import Aabb, TriMesh

STRATEGIES: tuple[str, ...] = (
    "drop_handles",
    "drop_top",
    "drop_bottom",
    "drop_doors",
    "drop_drawers",
    "drop_completion",
    "random",
    "fully_anonymized",
    "mask_materials_keep_edges",
    "mask_random_edges_keep_types",
    "drop_nodes_keep_edge_types",
    "fully_functional_drop",
    "isolate_door",
)

DEFAULT_WEIGHTS: dict[str, float] = dict(
    zip(STRATEGIES, (0.15, 0.15, 0.10, 0.08, 0.08, 0.10, 0.05, 0.05, 0.04, 0.10, 0.05, 0.20, 0.05))
)

CATEGORY_DROPS: dict[str, str] = {
    "drop_handles": "handle",
    "drop_top": "top_panel",
    "drop_bottom": "bottom_panel",
    "drop_doors": "door",
    "drop_drawers": "drawer",
}

FLIP_PROBABILITY = 0.5
FREE_SLOT_CAP = 16
CURRICULUM_START = (0.30, 0.50)
CURRICULUM_END = (0.10, 0.20)


@dataclass(frozen=True)
class AugConfig:
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    flip_probability: float = FLIP_PROBABILITY
    free_slot_cap: int = FREE_SLOT_CAP
    curriculum_start: tuple[float, float] = CURRICULUM_START
    curriculum_end: tuple[float, float] = CURRICULUM_END

    def __post_init__(self):
        unknown = set(self.weights) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies in weights: {sorted(unknown)}")
        if any(w < 0 or not math.isfinite(w) for w in self.weights.values()):
            raise ValueError("weights must be finite and nonnegative")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        if self.free_slot_cap < 1:
            raise ValueError("free_slot_cap must be positive")


@dataclass(frozen=True)
class CurriculumState:
    t: float = 0.0

    @staticmethod
    def from_epoch(epoch: int, total_epochs: int) -> CurriculumState:
        if total_epochs <= 0:
            raise ValueError("total_epochs must be positive")
        return CurriculumState(min(1.0, max(0.0, epoch / total_epochs)))


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def strategy_probabilities(config: AugConfig | None = None) -> np.ndarray:
    cfg = config or AugConfig()
    w = np.array([float(cfg.weights.get(s, 0.0)) for s in STRATEGIES])
    total = w.sum()
    if total <= 0:
        raise ValueError("all strategy weights are zero")
    return w / total


def sample_strategy(rng, config: AugConfig | None = None) -> str:
    """Draw a strategy with probability weight / sum(weights)."""
    p = strategy_probabilities(config)
    cdf = np.cumsum(p)
    u = _rng(rng).random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    i = min(i, len(STRATEGIES) - 1)
    while p[i] == 0:  # u landed exactly on a boundary in front of zero-weight entries
        i -= 1
    return STRATEGIES[i]


def curriculum_interval(t: float, config: AugConfig | None = None) -> tuple[float, float]:
    """Removal-fraction interval at progress t, linear between the two endpoints."""
    cfg = config or AugConfig()
    t = min(1.0, max(0.0, float(t)))
    (a0, b0), (a1, b1) = cfg.curriculum_start, cfg.curriculum_end
    return ((1.0 - t) * a0 + t * a1, (1.0 - t) * b0 + t * b1)


@dataclass(frozen=True)
class Corruption:
    graph: FunctionalGraph
    strategy: str
    removed: tuple[str, ...] = ()
    inapplicable: bool = False


def _pick(rng: np.random.Generator, items: Sequence[str], k: int) -> list[str]:
    items = list(items)
    k = max(0, min(k, len(items)))
    if k == 0:
        return []
    idx = rng.permutation(len(items))[:k]
    return [items[i] for i in sorted(idx)]


def _remove(graph: FunctionalGraph, ids: Sequence[str], cap: int, rng: np.random.Generator) -> tuple[FunctionalGraph, tuple[str, ...]]:
    ids = [i for i in graph.ids if i in set(ids)]
    if len(ids) >= len(graph.nodes):  # never empty a graph entirely
        ids = _pick(rng, ids, len(graph.nodes) - 1)
    if len(ids) > cap:
        ids = _pick(rng, ids, cap)
    return graph.without_nodes(ids), tuple(ids)


def _anonymize(graph: FunctionalGraph, collapse_edges: bool) -> FunctionalGraph:
    nodes = tuple(n.with_category("unknown") for n in graph.nodes)
    if not collapse_edges:
        return FunctionalGraph(nodes, graph.edges)
    edges = tuple(make_edge(e.src, e.dst, "contact") for e in graph.edges if e.kind != "null")
    return FunctionalGraph(nodes, edges)


def apply_strategy(graph: FunctionalGraph, strategy: str, severity: float, rng, config: AugConfig | None = None) -> Corruption:
    """Corrupt ``graph`` with one strategy; the input graph is never modified."""
    cfg = config or AugConfig()
    rng = _rng(rng)
    cap = cfg.free_slot_cap
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    severity = min(1.0, max(0.0, float(severity)))
    cats = {n.id: n.category for n in graph.nodes}
    N, E = len(graph.nodes), len(graph.edges)

    if strategy in CATEGORY_DROPS:
        ids = [i for i, c in cats.items() if c == CATEGORY_DROPS[strategy]]
        if not ids:
            return Corruption(graph, strategy, (), True)
        g, removed = _remove(graph, ids, cap, rng)
        return Corruption(g, strategy, removed)

    if strategy == "drop_completion":
        pool = list(CATEGORY_DROPS.values())
        k = 2 + int(rng.integers(0, 2))
        chosen = set(_pick(rng, pool, k))
        ids = [i for i, c in cats.items() if c in chosen]
        if not ids:
            return Corruption(graph, strategy, (), True)
        g, removed = _remove(graph, ids, cap, rng)
        return Corruption(g, strategy, removed)

    if strategy in ("random", "drop_nodes_keep_edge_types"):
        if N <= 1:
            return Corruption(graph, strategy, (), True)
        k = min(max(1, math.ceil(severity * N)), N - 1, cap)
        g, removed = _remove(graph, _pick(rng, graph.ids, k), cap, rng)
        return Corruption(g, strategy, removed)

    if strategy == "fully_anonymized":
        return Corruption(_anonymize(graph, True), strategy)

    if strategy == "mask_materials_keep_edges":
        return Corruption(_anonymize(graph, False), strategy)

    if strategy == "mask_random_edges_keep_types":
        k = int(math.floor(severity * E))
        if E == 0:
            return Corruption(graph, strategy, (), True)
        drop = set(rng.permutation(E)[:k].tolist())
        edges = tuple(e for i, e in enumerate(graph.edges) if i not in drop)
        return Corruption(graph.with_edges(edges), strategy)

    if strategy == "fully_functional_drop":
        pool = [i for i, c in cats.items() if c not in ("door", "drawer")]
        if not pool or N <= 1:
            return Corruption(graph, strategy, (), True)
        k = 1 + int(rng.integers(0, 4))
        g, removed = _remove(graph, _pick(rng, pool, k), cap, rng)
        return Corruption(g, strategy, removed)

    # isolate_door (legacy, otherwise undocumented; this is one reading): keep one door and its
    # mounting panel, drop its handle and functional edges
    doors = [i for i, c in cats.items() if c == "door"]
    if not doors:
        return Corruption(graph, strategy, (), True)
    door = doors[int(rng.integers(0, len(doors)))]
    panel = None
    for e in graph.edges:
        if e.kind == "hinge" and e.dst == door:
            panel = e.src
    if panel is None:
        statics = [n for n in graph.neighbors(door) if cats[n] in STATIC_CATEGORIES]
        panel = statics[0] if statics else None
    handles = {e.dst for e in graph.edges if e.kind == "attached" and e.src == door}
    keep = {door} | ({panel} if panel else set())
    removable = [i for i in graph.ids if i not in keep]
    if len(removable) > cap:
        # keep the nodes nearest the door so that at most ``cap`` are removed
        c0 = graph.node(door).centroid
        spare = sorted(
            (i for i in removable if i not in handles),
            key=lambda i: (float(np.linalg.norm(graph.node(i).centroid - c0)), i),
        )
        n_keep = len(removable) - cap
        keep |= set(spare[:n_keep])
        removable = [i for i in removable if i not in keep]
    g = graph.without_nodes(removable)
    g = g.with_edges(e for e in g.edges if not (door in (e.src, e.dst) and e.kind in ("hinge", "rail", "attached")))
    return Corruption(g, strategy, tuple(removable))


# ----------------------------------------------------------------------------
# mirror flip


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        axis = axis.lower()
        if axis == "z":
            raise ValueError("mirroring across z is not allowed (up must be preserved)")
        if axis not in ("x", "y"):
            raise ValueError(f"bad mirror axis {axis!r}")
        return "xy".index(axis)
    if axis not in (0, 1):
        raise ValueError(f"bad mirror axis {axis!r}")
    return int(axis)


def face_permutation(thin: int, axis: int) -> tuple[int, int, int, int]:
    """Hinge-border index remap under a mirror across ``axis`` for a panel with ``thin`` axis."""
    a0, a1 = nonthin_axes(thin)
    perm = []
    for b in range(4):
        fixed = (a0, a1)[b // 2]
        perm.append(b ^ 1 if fixed == axis else b)
    return tuple(perm)


FACE_PERMUTATION: dict[tuple[int, int], tuple[int, int, int, int]] = {
    (t, a): face_permutation(t, a) for t in range(3) for a in (0, 1)
}


def _sign_flips(thin: int, border: int, axis: int) -> bool:
    a0, a1 = nonthin_axes(thin)
    fixed = (a0, a1)[border // 2]
    run = a1 if fixed == a0 else a0
    # rotation axes are pseudo-vectors: the direction picks up a sign unless it lies along the mirror normal
    return run != axis


def mirror_mesh(mesh: TriMesh, axis: int) -> TriMesh:
    v = np.array(mesh.vertices)
    v[:, axis] = -v[:, axis]
    return TriMesh(v, mesh.triangles[:, [0, 2, 1]], mesh.part_id)


def mirror_graph(graph: FunctionalGraph, axis) -> FunctionalGraph:
    ax = _axis_index(axis)
    nodes = []
    for n in graph.nodes:
        lo = np.array(n.bbox.min)
        hi = np.array(n.bbox.max)
        lo[ax], hi[ax] = -n.bbox.max[ax], -n.bbox.min[ax]
        c = np.array(n.centroid)
        c[ax] = -c[ax]
        nodes.append(PartNode(n.id, n.category, Aabb(lo, hi), c, n.mesh_ref))
    nmap = {n.id: n for n in graph.nodes}
    edges = []
    for e in graph.edges:
        m = e.motion
        if m is not None and e.kind == "hinge" and m.hinge_border is not None:
            t = thin_axis(nmap[e.dst].bbox)
            nb = FACE_PERMUTATION[(t, ax)][m.hinge_border]
            ns = m.axis_sign
            if ns is not None and _sign_flips(t, m.hinge_border, ax):
                ns = -ns
            m = MotionAttr(nb, ns, m.rail_axis)
        elif m is not None and e.kind == "rail" and m.rail_axis is not None:
            ra = m.rail_axis
            if "xyz".index(ra[1]) == ax:
                ra = ("-" if ra[0] == "+" else "+") + ra[1]
            m = MotionAttr(m.hinge_border, m.axis_sign, ra)
        edges.append(Edge(e.src, e.dst, e.kind, m))
    return FunctionalGraph(tuple(nodes), tuple(edges))


def mirror_flip(parts, graph: FunctionalGraph, axis=None, rng=None):
    """Mirror parts and graph across x or y. Returns (parts, graph, axis letter)."""
    if axis is None:
        axis = "xy"[int(_rng(rng).integers(0, 2))]
    ax = _axis_index(axis)
    new_parts = None
    if parts is not None:
        new_parts = [(mirror_mesh(m, ax), c, i) for (m, c, i) in parts]
    return new_parts, mirror_graph(graph, ax), "xy"[ax]


# ----------------------------------------------------------------------------
# training pairs


@dataclass(frozen=True)
class TrainingPair:
    corrupted: FunctionalGraph
    target: FunctionalGraph
    strategy: str
    severity: float
    flip_axis: str | None
    inapplicable: bool = False
    parts: list | None = None


def make_training_pair(graph: FunctionalGraph, config: AugConfig | None = None, state: CurriculumState | None = None,
                       rng=None, parts=None) -> TrainingPair:
    cfg = config or AugConfig()
    st = state or CurriculumState()
    rng = _rng(rng)
    strategy = sample_strategy(rng, cfg)
    lo, hi = curriculum_interval(st.t, cfg)
    severity = float(rng.uniform(lo, hi))
    cor = apply_strategy(graph, strategy, severity, rng, cfg)
    corrupted, target = cor.graph, graph
    flip_axis = None
    if rng.random() < cfg.flip_probability:
        flip_axis = "xy"[int(rng.integers(0, 2))]
        parts, corrupted, _ = mirror_flip(parts, corrupted, flip_axis)
        target = mirror_graph(target, flip_axis)
    return TrainingPair(corrupted, target, strategy, severity, flip_axis, cor.inapplicable, parts)
