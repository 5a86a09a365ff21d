"""Geometric realization: snap templates onto parts and emit grounded articulations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .fungraph import (
    AxisLine,
    Edge,
    FunctionalGraph,
    PartNode,
    border_geometry,
    hinge_line,
    make_edge,
    node_from_box,
)
from .labels import MOVABLE_CATEGORIES, rail_axis_vector
from .meshkit import (
    Aabb,
    Plane,
    TriMesh,
    box_mesh,
    cluster_hits,
    make_pose,
    merge_meshes,
    raycast_many,
    union_aabb,
    winding_number,
)
from .simulate import Articulation
from .templates import Template, handle_template, hinge_template, rail_template

log = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, 1.0])


class RealizeError(RuntimeError):
    pass


class SnapError(RealizeError):
    pass


@dataclass(frozen=True)
class RealizeConfig:
    contact_eps: float = 0.005
    hinge_plate: float = 0.002
    hinge_leaf: float = 0.02
    hinge_count: int = 2
    hinge_stations: tuple[float, ...] = (0.2, 0.8)
    hinge_height_max: float = 0.06
    hinge_height_frac: float = 0.15
    flush_gap: float = 0.03
    door_range: float = math.pi / 2
    drawer_range_factor: float = 0.9
    snap_grid: int = 9
    snap_standoff: float = 0.1
    snap_max_range: float = 1.0
    layer_eps: float = 0.005
    cond_cap: float = 1e6
    body_step: float = 0.005
    tau_z: float = 0.01
    tau_p: float = 0.01
    rail_kind: str = "rail_corner"
    rail_thickness: float = 0.002
    rail_height_frac: float = 0.4
    rail_height_max: float = 0.04
    rail_lip: float = 0.01
    top_thickness: float = 0.02
    top_overhang: float = 0.0
    top_band: float = 0.05
    handle_style: str = "handle_style_0"
    handle_depth: float = 0.03

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and (not math.isfinite(v) and f.name not in ("tau_z", "tau_p")):
                raise ValueError(f"{f.name} must be finite")
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be nonnegative")
        if self.hinge_count != len(self.hinge_stations):
            raise ValueError("hinge_count must equal the number of hinge_stations")
        if any(not 0.0 <= s <= 1.0 for s in self.hinge_stations):
            raise ValueError("hinge_stations must lie in [0, 1]")
        if self.snap_grid < 1:
            raise ValueError("snap_grid must be >= 1")
        if self.cond_cap < 1:
            raise ValueError("cond_cap must be >= 1")


@dataclass(frozen=True)
class PlacementSolution:
    kind: str
    transform: np.ndarray
    residual: float
    rectified_axis: AxisLine | None
    chosen_layer: str
    notes: tuple[str, ...] = ()


# ----------------------------------------------------------------------------
# snap solve


def _is_signed_permutation(A: np.ndarray) -> bool:
    return bool(np.all(np.isin(A, (-1.0, 0.0, 1.0))) and np.all(np.abs(A).sum(0) == 1) and np.all(np.abs(A).sum(1) == 1))


def snap_system(n_s, t_s, n_d, t_d, axis) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([n_s, n_d, axis], dtype=float)
    b = np.array([t_s, t_d, 0.0], dtype=float)
    return A, b


def snap_translation(n_s, t_s: float, n_d, t_d: float, axis, cond_cap: float = 1e6) -> np.ndarray:
    """Translation with n_s.D = t_s, n_d.D = t_d and axis.D = 0."""
    A, b = snap_system(n_s, t_s, n_d, t_d, axis)
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
        raise SnapError("non-finite snap constraints")
    if _is_signed_permutation(A):
        return A.T @ b  # exact for axis-aligned constraint frames
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_cap:
        raise SnapError(f"ill-conditioned snap system (cond={cond:.3g})")
    return np.linalg.solve(A, b)


def snap_residual(n_s, t_s, n_d, t_d, axis, delta) -> float:
    A, b = snap_system(n_s, t_s, n_d, t_d, axis)
    return float(np.max(np.abs(A @ np.asarray(delta, dtype=float) - b)))


def measure_snap_distance(plane: Plane, target: TriMesh, layer_rule: str, eps: float = 0.005, grid: int = 9,
                          standoff: float = 0.1, max_range: float = 1.0, keep=None) -> float:
    """Median signed distance from the plane, along -normal, to the chosen surface layer.

    Rays start ``standoff`` behind the plane so surfaces slightly behind it are
    still found (their distance is negative). Only entering hits count.
    """
    if layer_rule not in ("inner", "outer"):
        raise ValueError(f"layer rule must be inner or outer, got {layer_rule!r}")
    if plane.extent[0] <= 0 or plane.extent[1] <= 0:
        raise ValueError("plane extent must be positive")
    pts = plane.grid(grid)
    if keep is not None:
        pts = pts[np.asarray([bool(keep(p)) for p in pts], dtype=bool)]
    if len(pts) == 0:
        raise SnapError("no admissible ray origins on the snap plane")
    origins = pts + standoff * plane.normal
    dirs = np.broadcast_to(-plane.normal, origins.shape)
    samples = []
    for hits in raycast_many(target, origins, dirs):
        front = [h for h in hits if h.front_facing and h.t - standoff <= max_range]
        if not front:
            continue
        layers = cluster_hits(front, eps)
        layer = layers[0] if layer_rule == "outer" else layers[-1]
        samples.append(layer[0].t - standoff)
    if not samples:
        raise SnapError("snap rays found no surface within range")
    return float(np.median(samples))


def tangential_align(door, dynamic_plane: Plane, n, d) -> np.ndarray:
    """Shift along u = n x d that brings the plane's outer edge onto the door's outer edge."""
    V = door.vertices if isinstance(door, TriMesh) else np.asarray(door, dtype=float)
    u = np.cross(np.asarray(n, dtype=float), np.asarray(d, dtype=float))
    nu = np.linalg.norm(u)
    if nu < 1e-12:
        raise RealizeError("degenerate co-border direction (normal parallel to axis)")
    u = u / nu
    return u * (float(np.max(V @ u)) - float(np.max(dynamic_plane.corners() @ u)))


# ----------------------------------------------------------------------------
# hinges


def _box_of(x) -> Aabb:
    return x if isinstance(x, Aabb) else x.aabb()


def _overlap(lo1, hi1, lo2, hi2) -> float:
    return min(hi1, hi2) - max(lo1, lo2)


def classify_hinge_kind(static, dynamic, eps: float = 0.005, flush_gap: float = 0.03) -> str:
    """C for contacting faces, F for flush fronts, P for a perpendicular interior face."""
    S, D = _box_of(static), _box_of(dynamic)
    k = int(np.argmin(D.extent))
    lat = [a for a in range(3) if a != k]
    found = set()
    for sd in (0, 1):
        fd = D.max[k] if sd else D.min[k]
        # contacting: door face against an opposed panel face over a positive area
        fp = S.min[k] if sd else S.max[k]
        if abs(fd - fp) <= eps and all(_overlap(D.min[a], D.max[a], S.min[a], S.max[a]) > eps for a in lat):
            found.add("c_hinge")
        # flush: same-facing faces in one plane, side by side
        fs = S.max[k] if sd else S.min[k]
        if abs(fd - fs) <= eps:
            ov = [_overlap(D.min[a], D.max[a], S.min[a], S.max[a]) for a in lat]
            gp = [max(0.0, -o) for o in ov]
            for i in (0, 1):
                if ov[1 - i] > eps and gp[i] <= flush_gap and ov[i] <= eps:
                    found.add("f_hinge")
    # perpendicular interior: a door side face against an opposed panel face, door inside the panel depth
    inside = D.min[k] >= S.min[k] - eps and D.max[k] <= S.max[k] + eps
    for a in lat:
        b = lat[0] if a == lat[1] else lat[1]
        for sd in (0, 1):
            fd = D.max[a] if sd else D.min[a]
            fp = S.min[a] if sd else S.max[a]
            if abs(fd - fp) <= eps and inside and _overlap(D.min[b], D.max[b], S.min[b], S.max[b]) > eps:
                found.add("p_hinge")
    for kind in ("c_hinge", "f_hinge", "p_hinge"):
        if kind in found:
            return kind
    raise RealizeError("no qualifying face pair between static and dynamic part")


@dataclass
class HingeInsertion:
    kind: str
    placements: list[PlacementSolution]
    new_parts: list[tuple[TriMesh, str, str]]
    articulation: Articulation
    dynamic_ids: list[str]
    notes: list[str] = field(default_factory=list)


def _outward(door: Aabb, static: Aabb, thin: int) -> np.ndarray:
    e = np.zeros(3)
    diff = door.center[thin] - static.center[thin]
    e[thin] = 1.0 if diff >= 0 else -1.0
    return e


def insert_hinges(meshes: Mapping[str, TriMesh], graph: FunctionalGraph, edge: Edge, config: RealizeConfig | None = None,
                  init_origin=None) -> HingeInsertion:
    """Place, snap and align hinge templates for one hinge edge.

    The template frame is fixed by its handedness: local x points into the
    door, local y out of the cabinet, so the pin direction (local z) is what
    the hardware dictates. The emitted axis is that pin axis.
    """
    cfg = config or RealizeConfig()
    if edge.kind != "hinge" or edge.motion is None or edge.motion.hinge_border is None:
        raise RealizeError(f"edge {edge.key} is not a hinge with motion attributes")
    if edge.src not in meshes or edge.dst not in meshes:
        raise RealizeError(f"hinge {edge.key} references a part without a mesh")
    panel, door = meshes[edge.src], meshes[edge.dst]
    P, D = panel.aabb(), door.aabb()
    notes: list[str] = []
    kind = classify_hinge_kind(P, D, cfg.contact_eps, cfg.flush_gap)
    thin, fixed, side, run = border_geometry(D, edge.motion.hinge_border)
    line = hinge_line(D, edge.motion.hinge_border, edge.motion.axis_sign)
    x_loc = np.zeros(3)
    x_loc[fixed] = 1.0 if side == 0 else -1.0
    y_loc = _outward(D, P, thin)
    z_loc = np.cross(x_loc, y_loc)
    if float(z_loc @ line.direction) < 0:
        notes.append("axis sign rectified by hinge handedness")
    R = np.column_stack([x_loc, y_loc, z_loc])
    td = float(D.extent[thin])
    height = min(cfg.hinge_height_max, cfg.hinge_height_frac * float(D.extent[run]))
    leaf_s = td + cfg.hinge_leaf if kind == "c_hinge" else cfg.hinge_leaf
    tmpl = hinge_template(kind, cfg.hinge_plate, leaf_s, cfg.hinge_leaf, height, td)

    o = np.array(line.point if init_origin is None else init_origin, dtype=float)
    stations = [float(D.min[run] + f * D.extent[run]) for f in cfg.hinge_stations]
    o[run] = stations[0]
    pose = make_pose(R, o)
    posed = tmpl.posed(pose)
    layer_s = "outer" if tmpl.mount == "exterior" else "inner"
    kw = dict(eps=cfg.layer_eps, grid=cfg.snap_grid, standoff=cfg.snap_standoff, max_range=cfg.snap_max_range)
    t_s = measure_snap_distance(posed.static_plane, panel, layer_s, **kw)
    t_d = measure_snap_distance(posed.dynamic_plane, door, "inner", **kw)
    n_s, n_d = posed.static_plane.normal, posed.dynamic_plane.normal
    b_s, b_d = tmpl.plate - t_s, tmpl.plate - t_d
    try:
        delta = snap_translation(n_s, b_s, n_d, b_d, z_loc, cfg.cond_cap)
    except SnapError:
        if kind != "f_hinge":
            raise
        A, b = snap_system(n_s, b_s, n_d, b_d, z_loc)
        delta = np.linalg.lstsq(A, b, rcond=None)[0]
        notes.append("parallel snap normals: least-squares snap")
    residual = snap_residual(n_s, b_s, n_d, b_d, z_loc, delta)
    pose = make_pose(None, delta) @ pose
    if tmpl.mount == "exterior":
        posed = tmpl.posed(pose)
        co = tangential_align(door, posed.dynamic_plane, -posed.dynamic_plane.normal, z_loc)
        pose = make_pose(None, co) @ pose
    pivot = pose[:3, 3].copy()
    axis = AxisLine(pivot, z_loc.copy(), "revolute")

    placements, new_parts, dyn_ids = [], [], []
    for k, s in enumerate(stations):
        shift = np.zeros(3)
        shift[run] = s - stations[0]
        pk = make_pose(None, shift) @ pose
        pk_t = tmpl.posed(pk)
        sid, did = f"{edge.dst}__hinge{k}_static", f"{edge.dst}__hinge{k}_dynamic"
        new_parts.append((pk_t.static_mesh.with_id(sid), "misc", sid))
        new_parts.append((pk_t.dynamic_mesh.with_id(did), "misc", did))
        dyn_ids.append(did)
        placements.append(PlacementSolution(kind, pk, residual, axis, layer_s, tuple(notes)))
    art = Articulation(edge.dst, (edge.src,), "revolute", axis, (0.0, cfg.door_range), attachments=tuple(dyn_ids))
    return HingeInsertion(kind, placements, new_parts, art, dyn_ids, notes)


# ----------------------------------------------------------------------------
# rails


@dataclass(frozen=True)
class BodyProfile:
    t_min: float
    t_star: float
    t_max: float
    samples: np.ndarray
    lateral: np.ndarray  # (n, 2): lateral and vertical coordinate of the side hit
    heights: np.ndarray  # (n,): top-surface height near the lateral edge

    @property
    def length(self) -> float:
        return self.t_star - self.t_min


def _first_front(hits):
    for h in hits:
        if h.front_facing:
            return h
    return None


def detect_drawer_body(drawer: TriMesh, s, step: float = 0.005, tau_z: float = 0.01, tau_p: float = 0.01,
                       up=UP) -> BodyProfile:
    """First significant discontinuity of the side profile, scanning from the back along s."""
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    up = np.asarray(up, dtype=float)
    n = np.cross(s, up)
    if np.linalg.norm(n) < 1e-12:
        raise RealizeError("slide axis parallel to up")
    n = n / np.linalg.norm(n)
    if step <= 0:
        raise ValueError("step must be positive")
    V = drawer.vertices
    proj, lat, hz = V @ s, V @ n, V @ up
    t_min, t_max = float(proj.min()), float(proj.max())
    if t_max - t_min <= 0:
        raise RealizeError("drawer has no extent along the slide axis")
    back = proj <= t_min + max(step, 1e-9)
    z_ref = 0.5 * (hz[back].min() + hz[back].max())
    lat_ref = float(lat[back].min() + min(step, 0.25 * np.ptp(lat[back])))
    lat0, ztop = float(lat.min()) - 1.0, float(hz.max()) + 1.0

    def profile(ts: np.ndarray):
        ts = np.atleast_1d(ts)
        o1 = ts[:, None] * s + lat0 * n + z_ref * up
        o2 = ts[:, None] * s + lat_ref * n + ztop * up
        h1 = raycast_many(drawer, o1, np.broadcast_to(n, o1.shape))
        h2 = raycast_many(drawer, o2, np.broadcast_to(-up, o2.shape))
        p = np.full((len(ts), 2), np.nan)
        z = np.full(len(ts), np.nan)
        for i in range(len(ts)):
            a, b = _first_front(h1[i]), _first_front(h2[i])
            if a is not None:
                p[i] = (a.point @ n, a.point @ up)
            if b is not None:
                z[i] = b.point @ up
        return p, z

    def jump(pa, za, pb, zb) -> bool:
        # a surface appearing or vanishing is an unbounded jump, so infinite thresholds still ignore it
        if np.isnan(pa[0]) != np.isnan(pb[0]) and math.isfinite(tau_p):
            return True
        if np.isnan(za) != np.isnan(zb) and math.isfinite(tau_z):
            return True
        if not np.isnan(za) and abs(zb - za) > tau_z:
            return True
        return bool(not np.isnan(pa[0]) and np.linalg.norm(pb - pa) > tau_p)

    ts = np.arange(t_min + 0.5 * step, t_max, step)
    if len(ts) == 0:
        ts = np.array([0.5 * (t_min + t_max)])
    P, Z = profile(ts)
    if np.isnan(P[0, 0]) and np.isnan(Z[0]):
        raise RealizeError("empty drawer profile")
    t_star = t_max
    for k in range(1, len(ts)):
        if jump(P[k - 1], Z[k - 1], P[k], Z[k]):
            lo, hi = float(ts[k - 1]), float(ts[k])
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                pm, zm = profile(np.array([mid]))
                if jump(P[k - 1], Z[k - 1], pm[0], zm[0]):
                    hi = mid
                else:
                    lo = mid
            t_star = lo  # stay on the body side of the junction
            break
    return BodyProfile(t_min, t_star, t_max, ts, P, Z)


def body_extents(drawer: TriMesh, s, prof: BodyProfile) -> tuple[float, float, float, float]:
    """Lateral and vertical extent of the body, probed by rays through its mid-length section."""
    s = np.asarray(s, dtype=float)
    n = np.cross(s, UP)
    n = n / np.linalg.norm(n)
    V = drawer.vertices
    lat, hz = V @ n, V @ UP
    tm = 0.5 * (prof.t_min + prof.t_star)
    z_ref = float(np.nanmean(prof.lateral[:, 1])) if np.any(~np.isnan(prof.lateral[:, 1])) else float(hz.mean())
    far = float(np.ptp(lat) + np.ptp(hz)) + 1.0
    base = tm * s + z_ref * UP
    lat_c = 0.5 * (lat.min() + lat.max())
    o = np.array([base + (lat.min() - far) * n, base + (lat.max() + far) * n,
                  tm * s + lat_c * n + (hz.min() - far) * UP, tm * s + lat_c * n + (hz.max() + far) * UP])
    d = np.array([n, -n, UP, -UP])
    hits = [_first_front(h) for h in raycast_many(drawer, o, d)]
    if any(h is None for h in hits):
        raise RealizeError("drawer body not found by side probes")
    x_left, x_right = float(hits[0].point @ n), float(hits[1].point @ n)
    z_bot, z_top = float(hits[2].point @ UP), float(hits[3].point @ UP)
    lat_c = 0.5 * (x_left + x_right)
    # re-probe the height at the body centre line
    o = np.array([tm * s + lat_c * n + (hz.min() - far) * UP, tm * s + lat_c * n + (hz.max() + far) * UP])
    hb = [_first_front(h) for h in raycast_many(drawer, o, np.array([UP, -UP]))]
    if hb[0] is not None:
        z_bot = float(hb[0].point @ UP)
    if hb[1] is not None:
        z_top = float(hb[1].point @ UP)
    return x_left, x_right, z_bot, z_top


@dataclass
class RailInsertion:
    placements: list[PlacementSolution]
    new_parts: list[tuple[TriMesh, str, str]]
    articulation: Articulation
    profile: BodyProfile
    dynamic_ids: list[str]
    mirror: np.ndarray
    notes: list[str] = field(default_factory=list)


def sagittal_mirror(n_perp, center: float) -> np.ndarray:
    """Reflection pose through the plane {x : x.n = center}."""
    n = np.asarray(n_perp, dtype=float)
    n = n / np.linalg.norm(n)
    P = np.eye(4)
    P[:3, :3] = np.eye(3) - 2.0 * np.outer(n, n)
    P[:3, 3] = 2.0 * center * n
    return P


def _support_block(plate: TriMesh, outward: np.ndarray, static_target: TriMesh, cfg: RealizeConfig, pid: str):
    box = plate.aabb()
    a = int(np.argmax(np.abs(outward)))
    face = box.max[a] if outward[a] > 0 else box.min[a]
    c = box.center.copy()
    c[a] = face
    ext = [box.half_extent[i] for i in range(3) if i != a]
    u = np.zeros(3)
    u[[i for i in range(3) if i != a][0]] = 1.0
    plane = Plane(c, -outward, (ext[0], ext[1]), u)
    gap = measure_snap_distance(plane, static_target, "outer", cfg.layer_eps, 3, 0.0, cfg.snap_max_range)
    # measured along +outward from the plate face: rays leave along -normal = +outward
    if gap <= 1e-9:
        return None
    lo, hi = box.min.copy(), box.max.copy()
    if outward[a] > 0:
        lo[a], hi[a] = face, face + gap
    else:
        lo[a], hi[a] = face - gap, face
    return box_mesh(lo, hi, pid)


def insert_rails(meshes: Mapping[str, TriMesh], graph: FunctionalGraph, edge: Edge, config: RealizeConfig | None = None,
                 static_target: TriMesh | None = None) -> RailInsertion:
    """Snap a left rail to the drawer body, mirror it to the right and bridge both to the frame."""
    cfg = config or RealizeConfig()
    if edge.kind != "rail" or edge.motion is None or edge.motion.rail_axis is None:
        raise RealizeError(f"edge {edge.key} is not a rail with a rail axis")
    if edge.dst not in meshes:
        raise RealizeError(f"rail {edge.key} references a drawer without a mesh")
    drawer = meshes[edge.dst]
    s = rail_axis_vector(edge.motion.rail_axis)
    if abs(s @ UP) > 1e-9:
        raise RealizeError("vertical slide axes are not supported")
    n = np.cross(s, UP)
    prof = detect_drawer_body(drawer, s, cfg.body_step, cfg.tau_z, cfg.tau_p)
    if prof.length <= 0:
        raise RealizeError("drawer body has zero length")
    x_left, x_right, z_bot, z_top = body_extents(drawer, s, prof)
    center = 0.5 * (x_left + x_right)
    hr = min(cfg.rail_height_max, cfg.rail_height_frac * (z_top - z_bot))
    lip = min(cfg.rail_lip, 0.25 * (x_right - x_left))
    tmpl = rail_template(cfg.rail_kind, cfg.rail_thickness, prof.length, hr, lip)
    R = np.column_stack([n, s, UP])
    z0 = z_bot if cfg.rail_kind == "rail_corner" else 0.5 * (z_bot + z_top) - 0.5 * hr
    pose = make_pose(R, x_left * n + prof.t_min * s + z0 * UP)
    notes: list[str] = []

    # orientation correction: support below the wall contact, and nearer the centreline
    posed = tmpl.posed(pose)
    sigma = np.ones(3)
    if posed.dynamic_plane.origin @ UP > posed.static_plane.origin @ UP + 1e-12:
        sigma[2] = -1.0
    if abs(posed.dynamic_plane.origin @ n - center) > abs(posed.static_plane.origin @ n - center) + 1e-12:
        sigma[0] = -1.0
    if np.any(sigma < 0):
        pose = pose @ np.diag([*sigma, 1.0])
        notes.append(f"orientation corrected by reflections {sigma.tolist()}")
        posed = tmpl.posed(pose)

    def keep(p):
        return p @ s <= prof.t_star + 1e-9

    kw = dict(eps=cfg.layer_eps, grid=cfg.snap_grid, standoff=cfg.snap_standoff, max_range=cfg.snap_max_range, keep=keep)
    t_side = measure_snap_distance(posed.static_plane, drawer, "inner", **kw)
    cut = prof.t_star - float(np.max(posed.dynamic_mesh.vertices @ s))
    n_side = posed.static_plane.normal
    if cfg.rail_kind == "rail_corner":
        t_sup = measure_snap_distance(posed.dynamic_plane, drawer, "inner", **kw)
        n_sup, b_sup = posed.dynamic_plane.normal, tmpl.plate - t_sup
    else:
        n_sup, b_sup = UP.copy(), 0.0
    # third row keeps the dynamic end on the body/board boundary
    A = np.array([n_side, n_sup, s])
    b = np.array([tmpl.plate - t_side, b_sup, cut])
    if np.linalg.cond(A) > cfg.cond_cap:
        raise SnapError("ill-conditioned rail snap")
    delta = np.linalg.solve(A, b) if not _is_signed_permutation(A) else A.T @ b
    residual = float(np.max(np.abs(A @ delta - b)))
    pose = make_pose(None, delta) @ pose
    left = tmpl.posed(pose)
    M = sagittal_mirror(n, center)

    base = edge.dst
    ids = {k: f"{base}__rail_{k}" for k in ("l_static", "l_dynamic", "r_static", "r_dynamic", "l_block", "r_block")}
    ls = left.static_mesh.with_id(ids["l_static"])
    ld = left.dynamic_mesh.with_id(ids["l_dynamic"])
    rs = ls.transformed(M, ids["r_static"])
    rd = ld.transformed(M, ids["r_dynamic"])
    new_parts = [(ls, "misc", ls.part_id), (ld, "misc", ld.part_id), (rs, "misc", rs.part_id), (rd, "misc", rd.part_id)]
    if static_target is not None and static_target.n_triangles:
        for plate, out, key in ((ls, -n, "l_block"), (rs, n, "r_block")):
            blk = _support_block(plate, out, static_target, cfg, ids[key])
            if blk is not None:
                new_parts.append((blk, "misc", blk.part_id))
    axis = AxisLine(drawer.aabb().center, s.copy(), "prismatic")
    dyn_ids = [ids["l_dynamic"], ids["r_dynamic"]]
    art = Articulation(edge.dst, (edge.src,), "prismatic", axis, (0.0, cfg.drawer_range_factor * prof.length),
                       attachments=tuple(dyn_ids))
    placements = [
        PlacementSolution(cfg.rail_kind, pose, residual, axis, "inner", tuple(notes)),
        PlacementSolution(cfg.rail_kind, M @ pose, residual, axis, "inner", tuple(notes)),
    ]
    return RailInsertion(placements, new_parts, art, prof, dyn_ids, M, notes)


# ----------------------------------------------------------------------------
# static fixes


def fit_top_slab(points, overhang: float, z0: float, thickness: float) -> Aabb:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise RealizeError("empty rim slice")
    lo = P[:, :2].min(0) - overhang
    hi = P[:, :2].max(0) + overhang
    return Aabb([lo[0], lo[1], z0], [hi[0], hi[1], z0 + thickness])


def synthesize_top(parts: Sequence[tuple[TriMesh, str, str]], top_id: str = "top_added", thickness: float = 0.02,
                   overhang: float = 0.0, band: float = 0.05) -> tuple[TriMesh, PartNode]:
    """Slab fitted to the rim points of the top slice, resting on the current maximum height."""
    V = np.concatenate([m.vertices for m, _, _ in parts if m.n_triangles])
    if len(V) == 0:
        raise RealizeError("empty asset")
    zmax, zmin = float(V[:, 2].max()), float(V[:, 2].min())
    rim = V[V[:, 2] >= zmax - band * (zmax - zmin)]
    box = fit_top_slab(rim, overhang, zmax, thickness)
    mesh = box_mesh(box.min, box.max, top_id)
    return mesh, node_from_box(top_id, "top_panel", box, top_id)


def leg_target(heights: Sequence[float]) -> float:
    """Existing bottom height with least total L1 adjustment; ties go to the lower height."""
    h = np.asarray(heights, dtype=float)
    if len(h) < 2:
        raise RealizeError("need at least two leg groups to align")
    cost = np.abs(h[:, None] - h[None, :]).sum(axis=1)
    best = min(range(len(h)), key=lambda i: (round(float(cost[i]), 12), float(h[i])))
    return float(h[best])


def align_legs(groups: Sequence[tuple[Sequence[TriMesh], float]], mode: str = "up_axis_only") -> tuple[list[list[TriMesh]], float]:
    """Scale each leg group about its top anchor so every bottom lands on the common target."""
    if mode not in ("isotropic", "up_axis_only"):
        raise ValueError(f"unknown leg scaling mode {mode!r}")
    target = leg_target([g[1] for g in groups])
    out = []
    for meshes, hz in groups:
        V = np.concatenate([m.vertices for m in meshes])
        top = float(V[:, 2].max())
        if top - hz <= 0:
            raise RealizeError("leg group has no height above its bottom")
        k = (top - target) / (top - hz)
        anchor = np.array([0.5 * (V[:, 0].min() + V[:, 0].max()), 0.5 * (V[:, 1].min() + V[:, 1].max()), top])
        S = np.diag([1.0, 1.0, k]) if mode == "up_axis_only" else k * np.eye(3)
        pose = make_pose(S, anchor - S @ anchor)
        out.append([m.transformed(pose) for m in meshes])
    return out, target


def _inside_any(points: np.ndarray, meshes: Sequence[TriMesh]) -> np.ndarray:
    occ = np.zeros(len(points), dtype=bool)
    for m in meshes:
        if m.n_triangles == 0:
            continue
        b = m.aabb()
        sel = np.nonzero(np.all((points >= b.min) & (points <= b.max), axis=1) & ~occ)[0]
        for chunk in np.array_split(sel, max(1, len(sel) // 4096 + 1)):
            if len(chunk):
                occ[chunk] |= np.abs(winding_number(points[chunk], m.corners)) > 0.5
    return occ


def detect_compartments(parts: Sequence[tuple[TriMesh, str, str]], up_axis: int = 2, front_axis: int = 1,
                        resolution: int = 128, min_size: float = 0.05) -> list[Aabb]:
    """Empty enclosed regions of the mid cross-section, extruded to the bounding panels."""
    meshes = [m for m, _, _ in parts if m.n_triangles]
    if not meshes:
        raise RealizeError("empty asset")
    box = union_aabb(m.aabb() for m in meshes)
    lat = 3 - up_axis - front_axis
    mid = float(box.center[lat])
    fa = np.linspace(box.min[front_axis], box.max[front_axis], resolution + 1)
    ua = np.linspace(box.min[up_axis], box.max[up_axis], resolution + 1)
    fc, uc = 0.5 * (fa[1:] + fa[:-1]), 0.5 * (ua[1:] + ua[:-1])
    F, U = np.meshgrid(fc, uc, indexing="ij")
    pts = np.zeros((F.size, 3))
    pts[:, lat] = mid
    pts[:, front_axis] = F.ravel()
    pts[:, up_axis] = U.ravel()
    occ = _inside_any(pts, meshes).reshape(F.shape)
    labels, count = ndimage.label(~occ)
    border = set(np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))) - {0}
    merged = merge_meshes(meshes)
    out = []
    for lab in range(1, count + 1):
        if lab in border:
            continue
        ii, jj = np.nonzero(labels == lab)
        f_lo, f_hi = fa[ii.min()], fa[ii.max() + 1]
        u_lo, u_hi = ua[jj.min()], ua[jj.max() + 1]
        if f_hi - f_lo < min_size or u_hi - u_lo < min_size:
            continue
        c = np.zeros(3)
        c[lat], c[front_axis], c[up_axis] = mid, 0.5 * (f_lo + f_hi), 0.5 * (u_lo + u_hi)
        ext = []
        for sgn in (-1.0, 1.0):
            d = np.zeros(3)
            d[lat] = sgn
            hits = [h for h in raycast_many(merged, c[None], d[None])[0] if h.front_facing]
            ext.append(c[lat] + sgn * hits[0].t if hits else (box.min[lat] if sgn < 0 else box.max[lat]))
        lo, hi = np.zeros(3), np.zeros(3)
        lo[lat], hi[lat] = ext
        lo[front_axis], hi[front_axis] = f_lo, f_hi
        lo[up_axis], hi[up_axis] = u_lo, u_hi
        out.append(Aabb(lo, hi))
    if not out:
        raise RealizeError("no free interior space found")
    out.sort(key=lambda b: (float(b.min[up_axis]), float(b.min[front_axis])))
    return out


def generate_interior(compartment: Aabb, orientation: str, count: int, thickness: float = 0.015, inset: float = 0.0,
                      min_size: float = 0.02, up_axis: int = 2, lateral_axis: int = 0, prefix: str = "interior") -> list[TriMesh]:
    """Evenly spaced shelves (horizontal) and/or dividers (vertical) inside a compartment box."""
    if orientation not in ("shelves", "dividers", "both"):
        raise ValueError(f"unknown orientation {orientation!r}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    lo = compartment.min + inset
    hi = compartment.max - inset
    lo[up_axis], hi[up_axis] = compartment.min[up_axis], compartment.max[up_axis]
    out: list[TriMesh] = []
    cuts = []
    if orientation in ("shelves", "both"):
        span = compartment.extent[up_axis]
        for k in range(1, count + 1):
            c = compartment.min[up_axis] + k * span / (count + 1)
            a, b = lo.copy(), hi.copy()
            a[up_axis], b[up_axis] = c - 0.5 * thickness, c + 0.5 * thickness
            cuts.append((a[up_axis], b[up_axis]))
            if np.all(b - a >= np.minimum(min_size, thickness) - 1e-12):
                out.append(box_mesh(a, b, f"{prefix}_shelf{k - 1}"))
    if orientation in ("dividers", "both"):
        span = compartment.extent[lateral_axis]
        levels = [compartment.min[up_axis]] + [v for c in cuts for v in c] + [compartment.max[up_axis]]
        bands = [(levels[i], levels[i + 1]) for i in range(0, len(levels), 2)]
        for k in range(1, count + 1):
            c = compartment.min[lateral_axis] + k * span / (count + 1)
            for j, (z0, z1) in enumerate(bands):
                if z1 - z0 < min_size:
                    continue
                a, b = lo.copy(), hi.copy()
                a[lateral_axis], b[lateral_axis] = c - 0.5 * thickness, c + 0.5 * thickness
                a[up_axis], b[up_axis] = z0, z1
                out.append(box_mesh(a, b, f"{prefix}_divider{k - 1}_{j}"))
    return out


# ----------------------------------------------------------------------------
# interaction elements


def attach_handle(meshes: Mapping[str, TriMesh], parent_id: str, center, size, outward, style: str = "handle_style_0",
                  depth: float = 0.03, handle_id: str | None = None, config: RealizeConfig | None = None) -> TriMesh:
    """Handle template placed at ``center`` and pushed until its back sits flush on the parent."""
    cfg = config or RealizeConfig()
    if parent_id not in meshes:
        raise RealizeError(f"handle parent {parent_id!r} has no mesh")
    y = np.asarray(outward, dtype=float)
    y = y / np.linalg.norm(y)
    z = UP.copy() if abs(y @ UP) < 0.9 else np.array([0.0, 1.0, 0.0])
    z = z - (z @ y) * y
    z /= np.linalg.norm(z)
    x = np.cross(y, z)
    size = np.asarray(size, dtype=float)
    w = float(abs(size @ x)) or float(np.max(size))
    h = float(abs(size @ z)) or float(np.max(size))
    tmpl = handle_template(style, w, h, depth)
    pose = make_pose(np.column_stack([x, y, z]), np.asarray(center, dtype=float) - 0.5 * depth * y)
    posed = tmpl.posed(pose)
    t = measure_snap_distance(posed.static_plane, meshes[parent_id], "outer", cfg.layer_eps, 3,
                              cfg.snap_standoff, cfg.snap_max_range)
    pose = make_pose(None, -t * y) @ pose
    hid = handle_id or f"{parent_id}_handle"
    return tmpl.posed(pose).static_mesh.with_id(hid)


def is_watertight(mesh: TriMesh) -> bool:
    """Closed and consistently oriented: every directed edge once, its reverse once."""
    t = mesh.triangles
    if len(t) == 0:
        return False
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    directed = {tuple(x) for x in e.tolist()}
    if len(directed) != len(e):
        return False
    return all((b, a) in directed for a, b in directed)


def _lattice_box(lo, hi, counts) -> tuple[np.ndarray, np.ndarray, dict]:
    """Closed box surface on an integer lattice so neighbouring faces share vertices."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    axes = [np.linspace(lo[k], hi[k], counts[k] + 1) for k in range(3)]
    index: dict[tuple[int, int, int], int] = {}
    verts: list[np.ndarray] = []
    tris: list[tuple[int, int, int]] = []

    def vid(key):
        if key not in index:
            index[key] = len(verts)
            verts.append(np.array([axes[0][key[0]], axes[1][key[1]], axes[2][key[2]]]))
        return index[key]

    for k in range(3):
        a, b = [j for j in range(3) if j != k]
        for side in (0, 1):
            for i in range(counts[a]):
                for j in range(counts[b]):
                    q = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        key = [0, 0, 0]
                        key[k] = side * counts[k]
                        key[a], key[b] = i + di, j + dj
                        q.append(vid(tuple(key)))
                    # (a, b, k) is right-handed for k = 0, 2 and left-handed for k = 1
                    flip = (side == 0) != (k == 1)
                    if flip:
                        tris += [(q[0], q[2], q[1]), (q[0], q[3], q[2])]
                    else:
                        tris += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
    return np.array(verts), np.array(tris, dtype=np.int64), index


def carve_recessed_grip(mesh: TriMesh, face: tuple[int, int], width: float, height: float, depth: float,
                        sharpness: float = 2.0, center=None, resolution: int = 24) -> TriMesh:
    """U-shaped groove pressed into one face of a box-like panel; the result stays closed.

    ``face`` is (axis, side) with side 0 for the min face. ``width`` runs along
    the first in-plane axis and ``height`` along the second.
    """
    axis, side = face
    box = mesh.aabb()
    thick = float(box.extent[axis])
    if depth <= 0 or width <= 0 or height <= 0:
        raise ValueError("groove dimensions must be positive")
    if depth >= thick:
        raise RealizeError("groove depth exceeds panel thickness")
    a, b = [j for j in range(3) if j != axis]
    counts = [1, 1, 1]
    counts[a] = counts[b] = resolution
    V, T, index = _lattice_box(box.min, box.max, counts)
    c = box.center if center is None else np.asarray(center, dtype=float)
    sgn = 1.0 if side == 1 else -1.0
    short_is_b = height <= width
    for (i, j, k), v in index.items():
        key = (i, j, k)
        if key[axis] != side * counts[axis]:
            continue
        if key[a] in (0, counts[a]) or key[b] in (0, counts[b]):
            continue
        p, q = (V[v, a] - c[a]) / (0.5 * width), (V[v, b] - c[b]) / (0.5 * height)
        if abs(p) >= 1 or abs(q) >= 1:
            continue
        r_short, r_long = (q, p) if short_is_b else (p, q)
        g = (1.0 - abs(r_short) ** sharpness) * (1.0 - abs(r_long) ** (4.0 * sharpness))
        V[v, axis] -= sgn * depth * g
    return TriMesh(V, T, mesh.part_id)


# ----------------------------------------------------------------------------
# orchestration


@dataclass
class RealizeResult:
    parts: list[tuple[TriMesh, str, str]]
    graph: FunctionalGraph
    articulations: list[Articulation]
    placements: dict[str, list[PlacementSolution]]
    failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def _outward_for(node: PartNode, graph: FunctionalGraph, static_box: Aabb | None) -> np.ndarray:
    for e in graph.edges_of(node.id):
        if e.kind == "rail" and e.dst == node.id and e.motion and e.motion.rail_axis:
            return rail_axis_vector(e.motion.rail_axis)
    k = int(np.argmin(node.bbox.extent))
    e = np.zeros(3)
    ref = static_box.center[k] if static_box is not None else 0.0
    e[k] = 1.0 if node.centroid[k] >= ref else -1.0
    return e


def realize(parts: Sequence[tuple[TriMesh, str, str]], graph: FunctionalGraph, config: RealizeConfig | None = None,
            init_origins: Mapping[str, np.ndarray] | None = None) -> RealizeResult:
    """Instantiate geometry for every mesh-less node and every hinge/rail edge.

    ``init_origins`` optionally seeds the hinge pose of a door (by child id)
    with an externally supplied axis point instead of the border line.
    """
    cfg = config or RealizeConfig()
    meshes = {pid: m for m, _, pid in parts}
    cats = {pid: c for _, c, pid in parts}
    order = [pid for _, _, pid in parts]
    failures: list[str] = []
    notes: list[str] = []
    nodes = {n.id: n for n in graph.nodes}
    statics = [n.id for n in graph.nodes if n.category not in MOVABLE_CATEGORIES | {"handle"} and n.id in meshes]
    static_box = union_aabb(meshes[i].aabb() for i in statics) if statics else None

    # static additions first so hardware can bridge to them
    for n in graph.nodes:
        if n.id in meshes or n.category != "top_panel":
            continue
        try:
            mesh, node = synthesize_top([(meshes[i], cats[i], i) for i in order], n.id, cfg.top_thickness,
                                        cfg.top_overhang, cfg.top_band)
        except RealizeError as exc:
            failures.append(f"{n.id}: {exc}")
            continue
        meshes[n.id], cats[n.id] = mesh, "top_panel"
        order.append(n.id)
        nodes[n.id] = node
        statics.append(n.id)
    for e in graph.edges:
        n = nodes.get(e.dst)
        if e.kind != "attached" or n is None or n.id in meshes:
            continue
        try:
            parent = nodes[e.src]
            mesh = attach_handle(meshes, e.src, n.centroid, n.bbox.extent, _outward_for(parent, graph, static_box),
                                 cfg.handle_style, cfg.handle_depth, n.id, cfg)
        except RealizeError as exc:
            failures.append(f"{n.id}: {exc}")
            continue
        meshes[n.id], cats[n.id] = mesh, "handle"
        order.append(n.id)
        nodes[n.id] = node_from_box(n.id, "handle", mesh.aabb(), n.id)

    static_target = merge_meshes([meshes[i] for i in statics]) if statics else None
    arts: list[Articulation] = []
    placements: dict[str, list[PlacementSolution]] = {}
    handles_of: dict[str, list[str]] = {}
    for e in graph.edges:
        if e.kind == "attached" and e.dst in meshes:
            handles_of.setdefault(e.src, []).append(e.dst)
    for e in sorted(graph.edges, key=lambda x: (x.dst, x.src)):
        if e.kind not in ("hinge", "rail"):
            continue
        try:
            if e.kind == "hinge":
                res = insert_hinges(meshes, graph, e, cfg, (init_origins or {}).get(e.dst))
            else:
                res = insert_rails(meshes, graph, e, cfg, static_target)
        except (RealizeError, ValueError) as exc:
            failures.append(f"{e.dst}: {exc}")
            log.warning("realization of %s failed: %s", e.key, exc)
            continue
        for m, c, pid in res.new_parts:
            meshes[pid], cats[pid] = m, c
            order.append(pid)
        notes += [f"{e.dst}: {x}" for x in res.notes]
        a = res.articulation
        att = tuple(res.dynamic_ids) + tuple(sorted(handles_of.get(e.dst, [])))
        arts.append(Articulation(a.child, a.parents, a.kind, a.axis, a.range, a.frames, att))
        placements[e.dst] = res.placements
    new_graph = graph.with_nodes([nodes[n.id] for n in graph.nodes])
    out_parts = [(meshes[i], cats[i], i) for i in order]
    return RealizeResult(out_parts, new_graph, arts, placements, failures, notes)


__all__ = [
    "RealizeConfig", "RealizeError", "SnapError", "PlacementSolution", "snap_translation", "snap_residual",
    "measure_snap_distance", "tangential_align", "classify_hinge_kind", "insert_hinges", "detect_drawer_body",
    "insert_rails", "synthesize_top", "fit_top_slab", "align_legs", "leg_target", "detect_compartments",
    "generate_interior", "attach_handle", "carve_recessed_grip", "is_watertight", "realize", "RealizeResult",
    "sagittal_mirror", "make_edge", "Template",
]
