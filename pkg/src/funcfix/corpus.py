"""Procedural cabinets with known functional graphs and articulations."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .fungraph import AxisLine, FunctionalGraph, MotionAttr, build_contact_graph, make_edge, save_graph
from .meshkit import TriMesh, box_mesh, merge_meshes, normalize_to_unit_cube, save_obj
from .simulate import Articulation

# meters; normalized away at the end
TH = 0.018  # carcass panels
TD = 0.018  # doors
TF = 0.02  # drawer fronts
GAP = 0.003  # reveal between fronts
BODY_CLEAR = 0.015  # side clearance for the drawer box
HANDLE_DEPTH = 0.025


@dataclass
class Cabinet:
    parts: list[tuple[TriMesh, str, str]]
    gt_graph: FunctionalGraph
    gt_articulations: list[Articulation]
    raw_articulations: list[Articulation] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


class _Builder:
    def __init__(self):
        self.meshes: list[tuple[TriMesh, str, str]] = []
        self.hinges: list[tuple[str, str, int, int]] = []  # panel, door, border, sign
        self.rails: list[str] = []
        self.handles: list[tuple[str, str]] = []

    def add(self, mesh: TriMesh, category: str) -> str:
        pid = f"p{len(self.meshes):02d}"
        self.meshes.append((mesh.with_id(pid), category, pid))
        return pid

    def box(self, lo, hi, category: str) -> str:
        return self.add(box_mesh(lo, hi), category)


def make_cabinet(seed: int | np.random.Generator = 0, n_doors: int | None = None, n_drawers: int | None = None,
                 top: bool = True, offset_axes: bool = False, handles: bool = True) -> Cabinet:
    """One cabinet: drawers stacked at the bottom, overlay doors above a separator shelf."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nd = int(rng.integers(1, 4)) if n_doors is None else n_doors
    nw = int(rng.integers(1, 4)) if n_drawers is None else n_drawers
    if not (0 <= nd <= 3 and 0 <= nw <= 3) or nd + nw == 0:
        raise ValueError("need 0-3 doors and 0-3 drawers, at least one movable")
    W = float(rng.uniform(0.5, 0.9))
    D = float(rng.uniform(0.4, 0.55))
    hd = float(rng.uniform(0.14, 0.2))
    Hd = float(rng.uniform(0.35, 0.6)) if nd else 0.0
    Zs = TH + nw * hd  # separator shelf base
    H = Zs + TH + Hd + (TH if nd else 0.0)
    if not nd:
        H = Zs + TH
    b = _Builder()
    left = b.box([0, 0, 0], [TH, D, H], "side_panel")
    b.box([W - TH, 0, 0], [W, D, H], "side_panel")
    b.box([TH, 0, 0], [W - TH, D, TH], "bottom_panel")
    b.box([TH, 0, TH], [W - TH, TH, H - (TH if top else 0.0)], "back_panel")
    if top:
        b.box([TH, 0, H - TH], [W - TH, D, H], "top_panel")
    if nw and nd:
        b.box([TH, TH, Zs], [W - TH, D, Zs + TH], "shelf")
    right = "p01"

    # drawers
    bounds = [0.0] + [TH + k * hd for k in range(1, nw)] + [Zs + 0.5 * TH if nd else H]
    for k in range(nw):
        z0, z1 = bounds[k] + 0.5 * GAP, bounds[k + 1] - 0.5 * GAP
        in0, in1 = TH + k * hd, TH + (k + 1) * hd
        front = box_mesh([0, D, z0], [W, D + TF, z1])
        body = box_mesh([TH + BODY_CLEAR, TH + 0.02, in0 + 0.01], [W - TH - BODY_CLEAR, D, in1 - 0.01])
        did = b.add(merge_meshes([body, front]), "drawer")
        b.rails.append(did)
        if handles:
            hw, hh = 0.3 * W, min(0.02, 0.3 * (z1 - z0))
            zc = 0.5 * (z0 + z1)
            hid = b.box([0.5 * W - 0.5 * hw, D + TF, zc - 0.5 * hh], [0.5 * W + 0.5 * hw, D + TF + HANDLE_DEPTH, zc + 0.5 * hh], "handle")
            b.handles.append((did, hid))

    # doors
    zd0 = Zs + 0.5 * TH + 0.5 * GAP if nw else 0.5 * GAP
    zd1 = H - 0.5 * GAP
    rows: list[tuple[float, float, int]] = []
    if nd == 3:
        zm = zd0 + 0.5 * (zd1 - zd0) - 0.5 * TH
        b.box([TH, TH, zm], [W - TH, D, zm + TH], "shelf")
        rows = [(zd0, zm + 0.5 * TH - 0.5 * GAP, 1), (zm + 0.5 * TH + 0.5 * GAP, zd1, 2)]
    elif nd:
        rows = [(zd0, zd1, nd)]
    door_specs = []
    for z0, z1, count in rows:
        if count == 1:
            hinge_left = bool(rng.integers(0, 2))
            door_specs.append((0.0, W, z0, z1, hinge_left, True))
        else:
            door_specs.append((0.0, 0.5 * W - 0.5 * GAP, z0, z1, True, False))
            door_specs.append((0.5 * W + 0.5 * GAP, W, z0, z1, False, False))
    offsets = []
    for x0, x1, z0, z1, hinge_left, alone in door_specs:
        with_handle = handles and bool(rng.random() < 0.85)
        if alone and not with_handle:
            hinge_left = True  # without a handle, a full-width door hinges on the left panel
        did = b.box([x0, D, z0], [x1, D + TD, z1], "door")
        panel = left if hinge_left else right
        b.hinges.append((panel, did, 0 if hinge_left else 1, 1 if hinge_left else -1))
        offsets.append(float(rng.uniform(0.02, 0.04)))
        if with_handle:
            hw, hh = 0.02, min(0.12, 0.3 * (z1 - z0))
            xc = x1 - 0.03 - 0.5 * hw if hinge_left else x0 + 0.03 + 0.5 * hw
            zc = 0.5 * (z0 + z1)
            hid = b.box([xc - 0.5 * hw, D + TD, zc - 0.5 * hh], [xc + 0.5 * hw, D + TD + HANDLE_DEPTH, zc + 0.5 * hh], "handle")
            b.handles.append((did, hid))

    meshes, sim = normalize_to_unit_cube([m for m, _, _ in b.meshes])
    parts = [(m, c, pid) for m, (_, c, pid) in zip(meshes, b.meshes)]
    s = sim.scale
    mesh_of = {pid: m for m, _, pid in parts}
    graph = _gt_graph(parts, b)

    gt_arts, raw_arts = [], []
    for (panel, did, border, sign), off in zip(b.hinges, offsets):
        box = mesh_of[did].aabb()
        x = box.min[0] if border == 0 else box.max[0]
        d = np.array([0.0, 0.0, float(sign)])
        # the physical pin of an overlay hinge sits on the door's outer front edge
        gt_arts.append(Articulation(did, (panel,), "revolute", AxisLine(np.array([x, box.max[1], box.center[2]]), d, "revolute"),
                                    (0.0, np.pi / 2), attachments=tuple(h for p, h in b.handles if p == did)))
        px = sim.apply([[TH / 2 if border == 0 else W - TH / 2, D + TD / 2 - off, 0.0]])[0]
        raw_arts.append(Articulation(did, (panel,), "revolute", AxisLine(np.array([px[0], px[1], box.center[2]]), d, "revolute"),
                                     (0.0, np.pi / 2), attachments=tuple(h for p, h in b.handles if p == did)))
    for did in b.rails:
        box = mesh_of[did].aabb()
        length = (D - TH - 0.02) * s
        art = Articulation(did, (left,), "prismatic", AxisLine(box.center, np.array([0.0, 1.0, 0.0]), "prismatic"),
                           (0.0, 0.9 * length), attachments=tuple(h for p, h in b.handles if p == did))
        gt_arts.append(art)
        raw_arts.append(art)
    meta = {"n_doors": nd, "n_drawers": nw, "top": top, "offset_axes": offset_axes,
            "dims_m": [W, D, H], "scale": s}
    return Cabinet(parts, graph, gt_arts, raw_arts if offset_axes else [], meta)


def _gt_graph(parts, b: _Builder) -> FunctionalGraph:
    g = build_contact_graph(parts)
    edges = list(g.edges)
    handle_ids = {h for _, h in b.handles}
    drop = {e.key for e in edges if e.src in handle_ids or e.dst in handle_ids}
    for parent, h in b.handles:
        edges.append(make_edge(parent, h, "attached"))
    drop |= {tuple(sorted((p, d))) for p, d, _, _ in b.hinges}
    side_ids = sorted(pid for _, c, pid in parts if c == "side_panel")
    drop |= {tuple(sorted((side_ids[0], d))) for d in b.rails}
    edges = [e for e in edges if not (e.kind == "contact" and e.key in drop)]
    for panel, door, border, sign in b.hinges:
        edges.append(make_edge(panel, door, "hinge", MotionAttr(hinge_border=border, axis_sign=sign)))
    for d in b.rails:
        edges.append(make_edge(side_ids[0], d, "rail", MotionAttr(rail_axis="+y")))
    edges.sort(key=lambda e: (e.key, e.kind))
    return g.with_edges(edges)


def write_cabinet(cab: Cabinet, out_dir: str) -> str:
    """Write OBJ parts, manifest.json, gt_graph.json and gt_articulations.json; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, "parts"), exist_ok=True)
    entries = []
    for mesh, cat, pid in cab.parts:
        rel = f"parts/{pid}.obj"
        save_obj(mesh, os.path.join(out_dir, rel))
        entries.append({"id": pid, "category": cat, "mesh": rel})
    manifest = {"schema_version": 1, "up_axis": "z", "normalized": True, "parts": entries, "meta": cab.meta}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    save_graph(cab.gt_graph, os.path.join(out_dir, "gt_graph.json"))
    _dump_arts(cab.gt_articulations, os.path.join(out_dir, "gt_articulations.json"))
    if cab.raw_articulations:
        _dump_arts(cab.raw_articulations, os.path.join(out_dir, "raw_articulations.json"))
    return path


def _dump_arts(arts, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": 1, "joints": [a.to_dict() for a in arts]}, fh, indent=1, sort_keys=True)


def load_articulations(path: str) -> list[Articulation]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    items = doc.get("joints", doc.get("articulations", [])) if isinstance(doc, dict) else doc
    return [Articulation.from_dict(a) for a in items]


def generate_corpus(out_dir: str, count: int, seed: int = 0, top: bool | None = True, offset_axes: bool = False,
                    n_doors: int | None = None, n_drawers: int | None = None) -> list[str]:
    """``count`` cabinets in ``out_dir/cab_XXXX``; ``top=None`` alternates topped and topless."""
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        t = (i % 2 == 0) if top is None else top
        cab = make_cabinet(rng, n_doors, n_drawers, top=t, offset_axes=offset_axes)
        paths.append(write_cabinet(cab, os.path.join(out_dir, f"cab_{i:04d}")))
    return paths
