"""Geometry kernel: mesh I/O, bounding boxes, ray casting, intersection and distance queries.

All queries are exact relative to the brute-force pairwise test. Bounding-box
pruning and the BVH only skip work that provably cannot change the answer.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .labels import canonical_category

TOUCH_TOL = 1e-7
DEGENERATE_AREA = 1e-12
BVH_LEAF_SIZE = 8
BVH_MIN_TRIANGLES = 64
INNER_PROBE_FRACTION = 1e-4


class MeshError(ValueError):
    """Raised for unreadable manifests or meshes."""


# ----------------------------------------------------------------------------
# basic types


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    part_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError(f"non-finite vertex in mesh {self.part_id!r}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError(f"triangle index out of range in mesh {self.part_id!r}")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (T, 3, 3)."""
        return _frozen(self.vertices[self.triangles])

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def aabb(self) -> Aabb:
        if len(self.vertices) == 0:
            raise MeshError(f"empty mesh {self.part_id!r}")
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    @cached_property
    def probe_points(self) -> np.ndarray:
        """Vertices, edge midpoints and face centroids used for containment tests."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        mids = 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])
        cents = self.corners.mean(axis=1)
        pts = [self.vertices, mids, cents]
        if len(cents):
            # centroids nudged inward catch coincident volumes, where every crossing is coplanar
            n = np.cross(self.corners[:, 1] - self.corners[:, 0], self.corners[:, 2] - self.corners[:, 0])
            n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
            inner = cents - INNER_PROBE_FRACTION * float(np.max(self.aabb().extent)) * n
            pts.append(inner[np.abs(winding_number(inner, self.corners)) > 0.5])
        return _frozen(np.concatenate(pts))

    @cached_property
    def bvh(self) -> Bvh:
        return Bvh(self.corners)

    def transformed(self, pose: np.ndarray, part_id: str | None = None) -> TriMesh:
        pose = np.asarray(pose, dtype=float)
        v = apply_pose(pose, self.vertices)
        tri = self.triangles
        if np.linalg.det(pose[:3, :3]) < 0:
            tri = tri[:, [0, 2, 1]]
        return TriMesh(v, tri, self.part_id if part_id is None else part_id)

    def with_id(self, part_id: str) -> TriMesh:
        return TriMesh(self.vertices, self.triangles, part_id)


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def half_extent(self) -> np.ndarray:
        return 0.5 * (self.max - self.min)

    def inflate(self, eps: float) -> Aabb:
        return Aabb(self.min - eps, self.max + eps)

    def union(self, other: Aabb) -> Aabb:
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def intersects(self, other: Aabb) -> bool:
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def __eq__(self, other) -> bool:
        return isinstance(other, Aabb) and np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    def __hash__(self):
        return hash((self.min.tobytes(), self.max.tobytes()))


def union_aabb(boxes: Iterable[Aabb]) -> Aabb:
    boxes = list(boxes)
    if not boxes:
        raise ValueError("no boxes")
    lo = np.min([b.min for b in boxes], axis=0)
    hi = np.max([b.max for b in boxes], axis=0)
    return Aabb(lo, hi)


@dataclass(frozen=True, eq=False)
class Plane:
    """Bounded plane. ``u_axis`` fixes the in-plane orientation of ``extent``."""

    origin: np.ndarray
    normal: np.ndarray
    extent: tuple[float, float]
    u_axis: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ValueError("zero plane normal")
        n = n / nn
        u = self.u_axis
        if u is None:
            u = _any_perpendicular(n)
        u = np.asarray(u, dtype=float).reshape(3)
        u = u - n * (u @ n)
        u = u / np.linalg.norm(u)
        object.__setattr__(self, "origin", _frozen(np.asarray(self.origin, dtype=float).reshape(3)))
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "u_axis", _frozen(u))
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))

    @property
    def v_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.u_axis)

    def corners(self) -> np.ndarray:
        eu, ev = self.extent
        out = []
        for su in (-1, 1):
            for sv in (-1, 1):
                out.append(self.origin + su * eu * self.u_axis + sv * ev * self.v_axis)
        return np.array(out)

    def grid(self, n: int) -> np.ndarray:
        """n x n sample points covering the plane rectangle (cell centres)."""
        eu, ev = self.extent
        s = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        a, b = np.meshgrid(s * eu, s * ev, indexing="ij")
        return self.origin + a.reshape(-1, 1) * self.u_axis + b.reshape(-1, 1) * self.v_axis

    def transformed(self, pose: np.ndarray) -> Plane:
        R = pose[:3, :3]
        return Plane(apply_pose(pose, self.origin[None])[0], R @ self.normal, self.extent, R @ self.u_axis)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "direction", d / np.linalg.norm(d))


@dataclass(frozen=True)
class RayHit:
    t: float
    point: np.ndarray
    triangle: int
    front_facing: bool = True


def _any_perpendicular(n: np.ndarray) -> np.ndarray:
    i = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[i] = 1.0
    u = np.cross(n, e)
    return u / np.linalg.norm(u)


# ----------------------------------------------------------------------------
# rigid transforms


def make_pose(R=None, t=None) -> np.ndarray:
    P = np.eye(4)
    if R is not None:
        P[:3, :3] = R
    if t is not None:
        P[:3, 3] = t
    return P


def apply_pose(pose: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ pose[:3, :3].T + pose[:3, 3]


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Right-handed rotation matrix about a unit axis."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def invert_pose(pose: np.ndarray) -> np.ndarray:
    R = pose[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ pose[:3, 3]
    return out


# ----------------------------------------------------------------------------
# mesh constructors


_BOX_TRIS = np.array(
    [
        [0, 2, 1], [1, 2, 3],  # -z
        [4, 5, 6], [5, 7, 6],  # +z
        [0, 1, 4], [1, 5, 4],  # -y
        [2, 6, 3], [3, 6, 7],  # +y
        [0, 4, 2], [2, 4, 6],  # -x
        [1, 3, 5], [3, 7, 5],  # +x
    ]
)


def box_mesh(lo, hi, part_id: str = "") -> TriMesh:
    """Closed axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    return TriMesh(v, _BOX_TRIS.copy(), part_id)


def merge_meshes(meshes: Sequence[TriMesh], part_id: str = "") -> TriMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), part_id)
    return TriMesh(np.concatenate(verts), np.concatenate(tris), part_id)


def drop_degenerate(mesh: TriMesh, min_area: float = DEGENERATE_AREA) -> TriMesh:
    keep = mesh.areas >= min_area
    if keep.all():
        return mesh
    return TriMesh(mesh.vertices, mesh.triangles[keep], mesh.part_id)


# ----------------------------------------------------------------------------
# I/O


def _read_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _read_ply(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"unparsable mesh: {path}")
    nl = data.find(b"\n", end)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in header:
        p = line.split()
        if not p:
            continue
        if p[0] == "format":
            fmt = p[1]
        elif p[0] == "element":
            elements.append((p[1], int(p[2]), []))
        elif p[0] == "property":
            if p[1] == "list":
                elements[-1][2].append((p[4], "list", p[2], p[3]))
            else:
                elements[-1][2].append((p[2], p[1]))
    if fmt is None:
        raise MeshError(f"unparsable mesh: {path}")
    verts = np.zeros((0, 3))
    faces: list[list[int]] = []
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for prop in props:
                    if prop[1] == "list":
                        n = int(tokens[pos])
                        pos += 1
                        row[prop[0]] = [int(float(x)) for x in tokens[pos:pos + n]]
                        pos += n
                    else:
                        row[prop[0]] = float(tokens[pos])
                        pos += 1
                rows.append(row)
            if name == "vertex":
                verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=float).reshape(-1, 3)
            elif name == "face":
                key = "vertex_indices" if rows and "vertex_indices" in rows[0] else "vertex_index"
                for r in rows:
                    idx = r[key]
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        bo = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for name, count, props in elements:
            if all(p[1] != "list" for p in props):
                dt = np.dtype([(p[0], bo + _PLY_TYPES[p[1]]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=pos)
                pos += dt.itemsize * count
                if name == "vertex":
                    verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(float)
                continue
            for _ in range(count):
                row = {}
                for prop in props:
                    if prop[1] == "list":
                        cf = bo + _PLY_TYPES[prop[2]]
                        n = struct.unpack_from(cf, body, pos)[0]
                        pos += struct.calcsize(cf)
                        itf = bo + str(n) + _PLY_TYPES[prop[3]]
                        row[prop[0]] = list(struct.unpack_from(itf, body, pos))
                        pos += struct.calcsize(itf)
                    else:
                        f = bo + _PLY_TYPES[prop[1]]
                        row[prop[0]] = struct.unpack_from(f, body, pos)[0]
                        pos += struct.calcsize(f)
                if name == "face":
                    idx = row.get("vertex_indices", row.get("vertex_index"))
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
                elif name == "vertex":
                    pass
    else:
        raise MeshError(f"unparsable mesh: unsupported PLY format {fmt}")
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path: str, part_id: str = "") -> TriMesh:
    """Read an OBJ or PLY file, dropping degenerate triangles."""
    if not os.path.isfile(path):
        raise MeshError(f"missing file: {path}")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".obj":
            v, f = _read_obj(path)
        elif ext == ".ply":
            v, f = _read_ply(path)
        else:
            raise MeshError(f"unparsable mesh: unsupported extension {ext}")
        mesh = TriMesh(v, f, part_id)
    except MeshError:
        raise
    except Exception as exc:  # malformed numbers, truncated binaries
        raise MeshError(f"unparsable mesh: {path} ({exc})") from exc
    if mesh.n_triangles == 0:
        raise MeshError(f"unparsable mesh: {path} has no triangles")
    return drop_degenerate(mesh)


def save_obj(mesh: TriMesh, path: str) -> None:
    lines = [f"# part {mesh.part_id}"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_ply_binary(mesh: TriMesh, path: str) -> None:
    head = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\nproperty double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    buf = bytearray(head)
    buf += mesh.vertices.astype("<f8").tobytes()
    for t in mesh.triangles:
        buf += struct.pack("<Biii", 3, *map(int, t))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_parts(manifest_path: str) -> list[tuple[TriMesh, str, str]]:
    """Load every part listed in a manifest as (mesh, category label, part id)."""
    if not os.path.isfile(manifest_path):
        raise MeshError(f"missing file: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError(f"unparsable manifest: {manifest_path} ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("parts"), list):
        raise MeshError("unparsable manifest: expected an object with a 'parts' list")
    up = doc.get("up_axis", "z")
    if up != "z":
        raise MeshError(f"unsupported up_axis {up!r}; only 'z' is accepted")
    base = os.path.dirname(os.path.abspath(manifest_path))
    out, seen = [], set()
    for i, entry in enumerate(doc["parts"]):
        try:
            pid = str(entry["id"])
            cat = str(entry.get("category", "misc"))
            rel = str(entry["mesh"])
        except (KeyError, TypeError) as exc:
            raise MeshError(f"unparsable manifest: /parts/{i} lacks {exc}") from exc
        if pid in seen:
            raise MeshError(f"duplicate part id: {pid}")
        seen.add(pid)
        mesh = load_mesh(os.path.join(base, rel), pid)
        out.append((mesh, canonical_category(cat), pid))
    return out


# ----------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Similarity:
    """Maps x to (x - origin) / extent: uniform scale plus translation."""

    origin: tuple[float, float, float]
    extent: float

    @property
    def scale(self) -> float:
        return 1.0 / self.extent

    def apply(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - np.asarray(self.origin)) / self.extent

    def matrix(self) -> np.ndarray:
        M = np.eye(4) / self.extent
        M[3, 3] = 1.0
        M[:3, 3] = -np.asarray(self.origin) / self.extent
        return M

    def is_identity(self) -> bool:
        return self.extent == 1.0 and all(o == 0.0 for o in self.origin)


def normalize_to_unit_cube(parts: Sequence[TriMesh]) -> tuple[list[TriMesh], Similarity]:
    """Uniformly scale and translate parts so the union box fits [0,1]^3 with longest side 1."""
    if not parts:
        raise MeshError("empty asset")
    box = union_aabb(p.aabb() for p in parts)
    ext = float(np.max(box.extent))
    if not np.isfinite(ext) or ext <= 0:
        raise MeshError("zero-extent asset")
    sim = Similarity(tuple(float(x) for x in box.min), ext)
    if sim.is_identity():
        return list(parts), sim
    out = [TriMesh(sim.apply(p.vertices), p.triangles, p.part_id) for p in parts]
    return out, sim


# ----------------------------------------------------------------------------
# ray casting


def _moller_trumbore(orig, dirs, corners):
    """Pairwise ray/triangle test. orig, dirs: (R,3); corners: (T,3,3).

    Returns t (R,T) with inf for misses and a front-facing flag (R,T).
    """
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    p = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("rtk,tk->rt", p, e1)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = orig[:, None, :] - v0[None, :, :]
    u = np.einsum("rtk,rtk->rt", s, p) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rk,rtk->rt", dirs, q) * inv
    t = np.einsum("tk,rtk->rt", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & np.isfinite(t)
    n = np.cross(e1, e2)
    front = np.einsum("rk,tk->rt", dirs, n) < 0
    return np.where(hit, t, np.inf), front


def _collect_hits(origin, direction, tri_idx, t_row, front_row, merge_tol):
    sel = np.isfinite(t_row)
    idx = tri_idx[sel]
    ts = t_row[sel]
    fr = front_row[sel]
    order = np.lexsort((idx, ts))
    hits: list[RayHit] = []
    for k in order:
        t = float(ts[k])
        if hits and abs(t - hits[-1].t) <= merge_tol and bool(fr[k]) == hits[-1].front_facing:
            continue  # same surface point reported by two triangles sharing an edge
        hits.append(RayHit(t, origin + t * direction, int(idx[k]), bool(fr[k])))
    return hits


class Bvh:
    """Median-split bounding volume hierarchy over triangle corners."""

    def __init__(self, corners: np.ndarray, leaf_size: int = BVH_LEAF_SIZE):
        self.corners = corners
        lo = corners.min(axis=1)
        hi = corners.max(axis=1)
        scale = float(np.max(hi.max(axis=0) - lo.min(axis=0))) if len(corners) else 1.0
        self.pad = 1e-9 * max(scale, 1e-12) + 1e-12
        cent = 0.5 * (lo + hi)
        self.nodes: list[tuple[np.ndarray, np.ndarray, int, int, np.ndarray | None]] = []

        def build(ids: np.ndarray) -> int:
            nlo = lo[ids].min(axis=0) - self.pad
            nhi = hi[ids].max(axis=0) + self.pad
            me = len(self.nodes)
            self.nodes.append((nlo, nhi, -1, -1, None))
            if len(ids) <= leaf_size:
                self.nodes[me] = (nlo, nhi, -1, -1, ids)
                return me
            axis = int(np.argmax(cent[ids].max(axis=0) - cent[ids].min(axis=0)))
            order = ids[np.argsort(cent[ids, axis], kind="stable")]
            half = len(order) // 2
            left = build(order[:half])
            right = build(order[half:])
            self.nodes[me] = (nlo, nhi, left, right, None)
            return me

        if len(corners):
            build(np.arange(len(corners)))

    def candidates(self, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
        if not self.nodes:
            return np.zeros(0, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / direction
        out = []
        stack = [0]
        while stack:
            lo, hi, left, right, ids = self.nodes[stack.pop()]
            with np.errstate(invalid="ignore"):
                t1 = (lo - origin) * inv
                t2 = (hi - origin) * inv
            # zero direction components: inside slab iff origin within it
            par = direction == 0
            if np.any(par):
                if np.any(par & ((origin < lo) | (origin > hi))):
                    continue
                t1 = np.where(par, -np.inf, t1)
                t2 = np.where(par, np.inf, t2)
            tmin = np.max(np.minimum(t1, t2))
            tmax = np.min(np.maximum(t1, t2))
            if tmax < max(tmin, 0.0):
                continue
            if ids is not None:
                out.append(ids)
            else:
                stack.append(right)
                stack.append(left)
        return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def _hit_merge_tol(mesh: TriMesh) -> float:
    return 1e-12 * max(1.0, float(np.max(np.abs(mesh.vertices))) if len(mesh.vertices) else 1.0)


def raycast_brute(mesh: TriMesh, ray: Ray) -> list[RayHit]:
    t, front = _moller_trumbore(ray.origin[None], ray.direction[None], mesh.corners)
    return _collect_hits(ray.origin, ray.direction, np.arange(mesh.n_triangles), t[0], front[0], _hit_merge_tol(mesh))


def raycast(mesh: TriMesh, ray: Ray) -> list[RayHit]:
    """All intersections with t >= 0, ascending in t."""
    if mesh.n_triangles < BVH_MIN_TRIANGLES:
        return raycast_brute(mesh, ray)
    cand = mesh.bvh.candidates(ray.origin, ray.direction)
    if len(cand) == 0:
        return []
    t, front = _moller_trumbore(ray.origin[None], ray.direction[None], mesh.corners[cand])
    return _collect_hits(ray.origin, ray.direction, cand, t[0], front[0], _hit_merge_tol(mesh))


def raycast_many(mesh: TriMesh, origins: np.ndarray, directions: np.ndarray) -> list[list[RayHit]]:
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    if mesh.n_triangles >= BVH_MIN_TRIANGLES:
        return [raycast(mesh, Ray(o, d)) for o, d in zip(origins, directions)]
    t, front = _moller_trumbore(origins, directions, mesh.corners)
    idx = np.arange(mesh.n_triangles)
    tol = _hit_merge_tol(mesh)
    return [_collect_hits(origins[r], directions[r], idx, t[r], front[r], tol) for r in range(len(origins))]


def cluster_hits(hits: Sequence[RayHit], eps: float) -> list[list[RayHit]]:
    """Split t-sorted hits into layers wherever consecutive hits are more than eps apart."""
    layers: list[list[RayHit]] = []
    for h in hits:
        if layers and h.t - layers[-1][-1].t <= eps:
            layers[-1].append(h)
        else:
            layers.append([h])
    return layers


# ----------------------------------------------------------------------------
# box helpers


def axis_gap(a: Aabb, b: Aabb) -> np.ndarray:
    """Per-axis surface gap between two boxes, zero on axes where the intervals overlap."""
    return np.maximum(0.0, np.maximum(a.min - b.max, b.min - a.max))


def _tri_boxes(c: np.ndarray):
    return c.min(axis=-2), c.max(axis=-2)


# ----------------------------------------------------------------------------
# triangle/triangle crossing


def _tri_tri_cross(A: np.ndarray, B: np.ndarray, tol: float) -> np.ndarray:
    """Strict crossing test for paired triangles A[k], B[k] (shape (N,3,3)).

    Both triangles must straddle the other's plane by more than ``tol`` on
    each side and the two crossing segments must overlap by more than ``tol``.
    Coplanar or boundary-only contact is not a crossing.
    """
    N = len(A)
    out = np.zeros(N, dtype=bool)
    if N == 0:
        return out
    na = np.cross(A[:, 1] - A[:, 0], A[:, 2] - A[:, 0])
    nb = np.cross(B[:, 1] - B[:, 0], B[:, 2] - B[:, 0])
    la = np.linalg.norm(na, axis=1)
    lb = np.linalg.norm(nb, axis=1)
    good = (la > 0) & (lb > 0)
    na = na / np.where(la > 0, la, 1.0)[:, None]
    nb = nb / np.where(lb > 0, lb, 1.0)[:, None]
    dA = np.einsum("nvk,nk->nv", A - B[:, None, 0], nb)
    dB = np.einsum("nvk,nk->nv", B - A[:, None, 0], na)
    cand = good & (dA.max(1) > tol) & (dA.min(1) < -tol) & (dB.max(1) > tol) & (dB.min(1) < -tol)
    if not cand.any():
        return out
    ii = np.nonzero(cand)[0]
    A, B, dA, dB = A[ii], B[ii], dA[ii], dB[ii]
    L = np.cross(na[ii], nb[ii])
    ll = np.linalg.norm(L, axis=1)
    ok = ll > 1e-15
    L = L / np.where(ok, ll, 1.0)[:, None]

    def interval(T, d):
        lo = np.full(len(T), np.inf)
        hi = np.full(len(T), -np.inf)
        proj = np.einsum("nvk,nk->nv", T, L)
        for i, j in ((0, 1), (1, 2), (2, 0)):
            di, dj = d[:, i], d[:, j]
            cross = (di > 0) != (dj > 0)
            cross &= di != dj
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(cross, di / (di - dj), 0.0)
            p = proj[:, i] + s * (proj[:, j] - proj[:, i])
            lo = np.where(cross, np.minimum(lo, p), lo)
            hi = np.where(cross, np.maximum(hi, p), hi)
            on = di == 0
            lo = np.where(on, np.minimum(lo, proj[:, i]), lo)
            hi = np.where(on, np.maximum(hi, proj[:, i]), hi)
        return lo, hi

    alo, ahi = interval(A, dA)
    blo, bhi = interval(B, dB)
    overlap = np.minimum(ahi, bhi) - np.maximum(alo, blo)
    out[ii] = ok & (overlap > tol)
    return out


# ----------------------------------------------------------------------------
# point queries


def winding_number(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Generalized winding number of closed triangle soup at each point."""
    if len(points) == 0:
        return np.zeros(0)
    a = corners[None, :, 0, :] - points[:, None, :]
    b = corners[None, :, 1, :] - points[:, None, :]
    c = corners[None, :, 2, :] - points[:, None, :]
    la = np.linalg.norm(a, axis=2)
    lb = np.linalg.norm(b, axis=2)
    lc = np.linalg.norm(c, axis=2)
    det = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
    den = la * lb * lc + np.einsum("ptk,ptk->pt", a, b) * lc + np.einsum("ptk,ptk->pt", b, c) * la + np.einsum("ptk,ptk->pt", c, a) * lb
    omega = 2.0 * np.arctan2(det, den)
    return omega.sum(axis=1) / (4.0 * np.pi)


def closest_point_triangle(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest points on triangles (a,b,c) to points p; all arrays (N,3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("nk,nk->n", ab, ap)
    d2 = np.einsum("nk,nk->n", ac, ap)
    bp = p - b
    d3 = np.einsum("nk,nk->n", ab, bp)
    d4 = np.einsum("nk,nk->n", ac, bp)
    cp = p - c
    d5 = np.einsum("nk,nk->n", ab, cp)
    d6 = np.einsum("nk,nk->n", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom
        res = a + ab * v_in[:, None] + ac * w_in[:, None]
        # edge regions
        v_ab = d1 / (d1 - d3)
        res = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[:, None], a + ab * v_ab[:, None], res)
        w_ac = d2 / (d2 - d6)
        res = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[:, None], a + ac * w_ac[:, None], res)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        res = np.where(((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))[:, None], b + (c - b) * w_bc[:, None], res)
    # vertex regions take precedence
    res = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, res)
    bad = ~np.all(np.isfinite(res), axis=1)
    if bad.any():  # degenerate triangle: fall back to its edges
        res = res.copy()
        for k in np.nonzero(bad)[0]:
            best, bd = a[k], np.inf
            for s, e in ((a[k], b[k]), (b[k], c[k]), (c[k], a[k])):
                q = _closest_on_segment(p[k], s, e)
                dd = float(np.sum((q - p[k]) ** 2))
                if dd < bd:
                    best, bd = q, dd
            res[k] = best
    return res


def _closest_on_segment(p, s, e):
    d = e - s
    L = float(d @ d)
    if L == 0:
        return s
    t = min(1.0, max(0.0, float((p - s) @ d) / L))
    return s + t * d


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    return np.linalg.norm(closest_point_triangle(p, a, b, c) - p, axis=1)


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Distance between segment pairs; all arrays (N,3)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("nk,nk->n", d1, d1)
    e = np.einsum("nk,nk->n", d2, d2)
    f = np.einsum("nk,nk->n", d2, r)
    c = np.einsum("nk,nk->n", d1, r)
    b = np.einsum("nk,nk->n", d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-300, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        s = np.where(a <= 1e-300, 0.0, s)
        t = np.where(e > 1e-300, (b * s + f) / e, 0.0)
        # clamp t and recompute s
        s = np.where(t < 0, np.where(a > 1e-300, np.clip(-c / a, 0.0, 1.0), 0.0), s)
        s = np.where(t > 1, np.where(a > 1e-300, np.clip((b - c) / a, 0.0, 1.0), 0.0), s)
        t = np.clip(t, 0.0, 1.0)
    c1 = p1 + d1 * s[:, None]
    c2 = p2 + d2 * t[:, None]
    return np.linalg.norm(c1 - c2, axis=1)


def triangle_pair_distance(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distance between paired non-crossing triangles, shapes (N,3,3)."""
    N = len(A)
    if N == 0:
        return np.zeros(0)
    best = np.full(N, np.inf)
    for i in range(3):
        best = np.minimum(best, point_triangle_distance(A[:, i], B[:, 0], B[:, 1], B[:, 2]))
        best = np.minimum(best, point_triangle_distance(B[:, i], A[:, 0], A[:, 1], A[:, 2]))
    for i in range(3):
        for j in range(3):
            best = np.minimum(
                best,
                segment_segment_distance(A[:, i], A[:, (i + 1) % 3], B[:, j], B[:, (j + 1) % 3]),
            )
    return best


def point_mesh_distance(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    P, T = len(points), len(corners)
    if P == 0:
        return np.zeros(0)
    p = np.repeat(points, T, axis=0)
    c = np.tile(corners, (P, 1, 1))
    return point_triangle_distance(p, c[:, 0], c[:, 1], c[:, 2]).reshape(P, T).min(axis=1)


# ----------------------------------------------------------------------------
# mesh/mesh queries over a batch of poses


def _as_pose_batch(pose) -> np.ndarray:
    P = np.asarray(pose, dtype=float)
    if P.ndim == 2:
        P = P[None]
    return P


def _batch_vertices(mesh: TriMesh, poses: np.ndarray) -> np.ndarray:
    return np.einsum("fij,vj->fvi", poses[:, :3, :3], mesh.vertices) + poses[:, None, :3, 3]


def _boxes_overlap(lo_a, hi_a, lo_b, hi_b, tol=0.0):
    return np.all((lo_a <= hi_b + tol) & (lo_b <= hi_a + tol), axis=-1)


def _probes_inside(probes: np.ndarray, owner: np.ndarray, corners: np.ndarray, lo, hi, n_owner: int, tol: float) -> np.ndarray:
    """Which owners have at least one probe strictly inside the closed mesh ``corners``."""
    res = np.zeros(n_owner, dtype=bool)
    sel = np.all((probes > lo + tol) & (probes < hi - tol), axis=1)
    if not sel.any():
        return res
    pts, own = probes[sel], owner[sel]
    w = np.abs(winding_number(pts, corners))
    keep = w > 0.5
    if not keep.any():
        return res
    pts, own = pts[keep], own[keep]
    deep = point_mesh_distance(pts, corners) > tol
    res[np.unique(own[deep])] = True
    return res


def intersect_batch(a: TriMesh, poses_a, b: TriMesh, pose_b=None, tol: float = TOUCH_TOL) -> np.ndarray:
    """Per-pose interpenetration flags of mesh ``a`` (under each pose) against ``b``."""
    PA = _as_pose_batch(poses_a)
    PB = np.eye(4) if pose_b is None else np.asarray(pose_b, dtype=float)
    F = len(PA)
    out = np.zeros(F, dtype=bool)
    if a.n_triangles == 0 or b.n_triangles == 0:
        return out
    cb = apply_pose(PB, b.corners.reshape(-1, 3)).reshape(-1, 3, 3)
    blo, bhi = _tri_boxes(cb)
    Blo, Bhi = blo.min(0), bhi.max(0)
    va = _batch_vertices(a, PA)
    Alo, Ahi = va.min(1), va.max(1)
    frames = np.nonzero(_boxes_overlap(Alo, Ahi, Blo, Bhi))[0]
    if len(frames) == 0:
        return out
    ca = va[frames][:, a.triangles]  # (Fm, Ta, 3, 3)
    alo, ahi = ca.min(2), ca.max(2)
    pair = _boxes_overlap(alo[:, :, None, :], ahi[:, :, None, :], blo[None, None], bhi[None, None])
    f, i, j = np.nonzero(pair)
    if len(f):
        hit = _tri_tri_cross(ca[f, i], cb[j], tol)
        if hit.any():
            out[frames[np.unique(f[hit])]] = True
    rest = frames[~out[frames]]
    if len(rest) == 0:
        return out
    # containment: some probe strictly inside the other closed mesh
    pa = np.einsum("fij,pj->fpi", PA[rest, :3, :3], a.probe_points) + PA[rest, None, :3, 3]
    owner = np.repeat(np.arange(len(rest)), a.probe_points.shape[0])
    found = _probes_inside(pa.reshape(-1, 3), owner, cb, Blo, Bhi, len(rest), tol)
    left = ~found
    if left.any():
        sub = rest[left]
        inv = np.stack([invert_pose(PA[k]) for k in sub])
        pbw = apply_pose(PB, b.probe_points)
        pb = np.einsum("fij,pj->fpi", inv[:, :3, :3], pbw) + inv[:, None, :3, 3]
        owner = np.repeat(np.arange(len(sub)), pbw.shape[0])
        f2 = _probes_inside(pb.reshape(-1, 3), owner, a.corners, a.vertices.min(0), a.vertices.max(0), len(sub), tol)
        found[np.nonzero(left)[0][f2]] = True
    out[rest[found]] = True
    return out


def meshes_intersect(a: TriMesh, pose_a, b: TriMesh, pose_b, tol: float = TOUCH_TOL) -> bool:
    """True iff the posed meshes interpenetrate; touching within ``tol`` does not count."""
    pa = np.eye(4) if pose_a is None else np.asarray(pose_a, dtype=float)
    pb = np.eye(4) if pose_b is None else np.asarray(pose_b, dtype=float)
    rel = invert_pose(pb) @ pa
    return bool(intersect_batch(a, rel, b, None, tol)[0])


def distance_batch(a: TriMesh, poses_a, b: TriMesh, pose_b=None, bound=None, tol: float = TOUCH_TOL,
                   containment: bool = True) -> np.ndarray:
    """Per-pose surface distance between ``a`` and ``b`` (0 when they interpenetrate).

    ``bound`` optionally gives a per-pose upper bound: poses whose distance
    provably exceeds it report ``inf`` instead of the exact value. With
    ``containment=False`` the result is the pure surface-to-surface distance.
    """
    PA = _as_pose_batch(poses_a)
    PB = np.eye(4) if pose_b is None else np.asarray(pose_b, dtype=float)
    F = len(PA)
    best = np.full(F, np.inf)
    if a.n_triangles == 0 or b.n_triangles == 0:
        return best
    cb = apply_pose(PB, b.corners.reshape(-1, 3)).reshape(-1, 3, 3)
    blo, bhi = _tri_boxes(cb)
    vb = apply_pose(PB, b.vertices)
    va = _batch_vertices(a, PA)
    # vertex/vertex upper bound
    ub = np.min(np.linalg.norm(va[:, :, None, :] - vb[None, None, :, :], axis=3).reshape(F, -1), axis=1)
    if bound is not None:
        ub = np.minimum(ub, np.broadcast_to(np.asarray(bound, dtype=float), (F,)))
    ca = va[:, a.triangles]
    alo, ahi = ca.min(2), ca.max(2)
    gap = np.maximum(0.0, np.maximum(alo[:, :, None, :] - bhi[None, None], blo[None, None] - ahi[:, :, None, :]))
    lb = np.linalg.norm(gap, axis=3)  # (F, Ta, Tb)
    f, i, j = np.nonzero(lb <= ub[:, None, None])
    if len(f):
        d = triangle_pair_distance(ca[f, i], cb[j])
        np.minimum.at(best, f, d)
    if containment:
        best[intersect_batch(a, PA, b, PB, tol)] = 0.0
    return best


def min_distance(a: TriMesh, pose_a, b: TriMesh, pose_b) -> float:
    """Minimum Euclidean distance between the posed surfaces; 0 when they interpenetrate."""
    pa = np.eye(4) if pose_a is None else np.asarray(pose_a, dtype=float)
    pb = np.eye(4) if pose_b is None else np.asarray(pose_b, dtype=float)
    rel = invert_pose(pb) @ pa
    return float(distance_batch(a, rel, b, None)[0])


def min_distance_brute(a: TriMesh, pose_a, b: TriMesh, pose_b) -> float:
    """All-pairs reference implementation (no pruning)."""
    pa = np.eye(4) if pose_a is None else np.asarray(pose_a, dtype=float)
    pb = np.eye(4) if pose_b is None else np.asarray(pose_b, dtype=float)
    if meshes_intersect(a, pa, b, pb):
        return 0.0
    ca = apply_pose(pa, a.corners.reshape(-1, 3)).reshape(-1, 3, 3)
    cb = apply_pose(pb, b.corners.reshape(-1, 3)).reshape(-1, 3, 3)
    i, j = np.meshgrid(np.arange(len(ca)), np.arange(len(cb)), indexing="ij")
    return float(triangle_pair_distance(ca[i.ravel()], cb[j.ravel()]).min())
