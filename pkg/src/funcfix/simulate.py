"""Articulation sweeps: collision, connectivity and motion-correctness scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .fungraph import AxisLine
from .meshkit import (
    TOUCH_TOL,
    Aabb,
    TriMesh,
    distance_batch,
    intersect_batch,
    make_pose,
    merge_meshes,
    rotation_about_axis,
)

DEFAULT_FRAMES = 50
CONNECT_THRESHOLD = 0.005
JOINT_KINDS = ("revolute", "prismatic")
# absorbs float noise when a gap is constructed to sit exactly on the threshold
_BOUNDARY_SLACK = 1e-12


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class Articulation:
    child: str
    parents: tuple[str, ...]
    kind: str
    axis: AxisLine
    range: tuple[float, float]
    frames: int = DEFAULT_FRAMES
    attachments: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise SimError(f"unknown joint kind {self.kind!r}")
        lo, hi = float(self.range[0]), float(self.range[1])
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise SimError(f"invalid range {self.range!r} for {self.child!r}")
        if self.frames < 2:
            raise SimError("frames must be >= 2")
        d = np.asarray(self.axis.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise SimError("axis direction must be a unit vector")
        object.__setattr__(self, "range", (lo, hi))
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "attachments", tuple(self.attachments))

    @property
    def moving_ids(self) -> tuple[str, ...]:
        return (self.child, *self.attachments)

    def with_frames(self, frames: int) -> "Articulation":
        return Articulation(self.child, self.parents, self.kind, self.axis, self.range, frames, self.attachments)

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parent": self.parents[0] if self.parents else None,
            "parents": list(self.parents),
            "kind": self.kind,
            "axis_origin": [float(x) for x in self.axis.point],
            "axis_dir": [float(x) for x in self.axis.direction],
            "range": [self.range[0], self.range[1]],
            "frames": self.frames,
            "attachments": list(self.attachments),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Articulation":
        try:
            kind = doc["kind"]
            origin = np.asarray(doc["axis_origin"], dtype=float)
            direction = np.asarray(doc["axis_dir"], dtype=float)
            rng = doc["range"]
            child = doc["child"]
        except KeyError as exc:
            raise SimError(f"articulation missing field {exc.args[0]!r}") from None
        if origin.shape != (3,) or direction.shape != (3,):
            raise SimError("axis_origin and axis_dir must be 3-vectors")
        n = np.linalg.norm(direction)
        if n == 0 or not np.isfinite(n):
            raise SimError("axis_dir must be nonzero")
        parents = doc.get("parents")
        if parents is None:
            parents = [doc["parent"]] if doc.get("parent") else []
        return cls(
            child=str(child),
            parents=tuple(parents),
            kind=kind,
            axis=AxisLine(origin, direction / n, kind),
            range=(float(rng[0]), float(rng[1])),
            frames=int(doc.get("frames", DEFAULT_FRAMES)),
            attachments=tuple(doc.get("attachments", ())),
        )


def pose_at(art: Articulation, fraction: float) -> np.ndarray:
    """Rigid transform of the moving assembly at ``fraction`` of the range."""
    f = float(np.clip(fraction, 0.0, 1.0))
    amount = art.range[0] + f * (art.range[1] - art.range[0])
    d = np.asarray(art.axis.direction, dtype=float)
    if amount == 0.0:
        return np.eye(4)
    if art.kind == "prismatic":
        return make_pose(None, amount * d)
    p = np.asarray(art.axis.point, dtype=float)
    R = rotation_about_axis(d, amount)
    return make_pose(R, p - R @ p)


def frame_poses(art: Articulation) -> np.ndarray:
    return np.stack([pose_at(art, f) for f in np.linspace(0.0, 1.0, art.frames)])


def static_ids(part_ids: Sequence[str], articulations: Sequence[Articulation]) -> list[str]:
    """Parts that belong to no joint's moving assembly."""
    moving = {m for a in articulations for m in a.moving_ids}
    return [p for p in part_ids if p not in moving]


def _assembly(meshes: Mapping[str, TriMesh], ids: Sequence[str]) -> TriMesh:
    present = [meshes[i] for i in ids if i in meshes]
    return merge_meshes(present) if present else TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def _swept_box(mesh: TriMesh, poses: np.ndarray) -> Aabb | None:
    if mesh.n_triangles == 0:
        return None
    v = np.einsum("fij,vj->fvi", poses[:, :3, :3], mesh.vertices) + poses[:, None, :3, 3]
    return Aabb(v.reshape(-1, 3).min(0), v.reshape(-1, 3).max(0))


def _nearby_static(meshes: Mapping[str, TriMesh], ids: Sequence[str], box: Aabb | None, pad: float) -> list[str]:
    if box is None:
        return []
    grown = box.inflate(pad)
    return [i for i in ids if i in meshes and meshes[i].aabb().intersects(grown)]


def collision_frames(meshes: Mapping[str, TriMesh], art: Articulation, static: Sequence[str], tol: float = TOUCH_TOL) -> np.ndarray:
    poses = frame_poses(art)
    mov = _assembly(meshes, art.moving_ids)
    out = np.zeros(art.frames, dtype=bool)
    if mov.n_triangles == 0:
        return out
    # per-part tests keep the box prefilters tight
    for sid in _nearby_static(meshes, static, _swept_box(mov, poses), 1e-6):
        todo = np.nonzero(~out)[0]
        if len(todo) == 0:
            break
        out[todo] |= intersect_batch(mov, poses[todo], meshes[sid], None, tol)
    return out


def _mesh_map(parts) -> dict[str, TriMesh]:
    if isinstance(parts, Mapping):
        return dict(parts)
    out = {}
    for p in parts:
        if isinstance(p, TriMesh):
            out[p.part_id] = p
        else:
            out[p[2]] = p[0]
    return out


def collision_rate(parts, art: Articulation, attachments: Sequence[str] | None = None,
                   static: Sequence[str] | None = None) -> float:
    """Fraction of sampled frames in which the moving assembly interpenetrates the static parts."""
    meshes = _mesh_map(parts)
    if attachments is not None:
        art = Articulation(art.child, art.parents, art.kind, art.axis, art.range, art.frames, tuple(attachments))
    if static is None:
        static = static_ids(list(meshes), [art])
    return float(collision_frames(meshes, art, static).mean())


def frame_distances(meshes: Mapping[str, TriMesh], art: Articulation, static: Sequence[str], threshold: float,
                    collided: np.ndarray | None = None) -> np.ndarray:
    """Per-frame moving-to-static distance; values above ``threshold`` may be reported as inf."""
    poses = frame_poses(art)
    mov = _assembly(meshes, art.moving_ids)
    best = np.full(art.frames, np.inf)
    if mov.n_triangles == 0:
        return best
    bound = threshold + _BOUNDARY_SLACK
    for sid in _nearby_static(meshes, static, _swept_box(mov, poses), threshold + 1e-6):
        d = distance_batch(mov, poses, meshes[sid], None, bound=np.minimum(best, bound), containment=False)
        best = np.minimum(best, d)
    # interpenetrating frames have distance zero even when no surfaces cross
    if collided is None:
        collided = collision_frames(meshes, art, static)
    best[collided] = 0.0
    return best


def connectivity(parts, art: Articulation, threshold: float = CONNECT_THRESHOLD,
                 static: Sequence[str] | None = None, collided: np.ndarray | None = None) -> tuple[bool, np.ndarray]:
    """Connected iff the distance stays <= threshold at every frame (boundary inclusive)."""
    meshes = _mesh_map(parts)
    if static is None:
        static = static_ids(list(meshes), [art])
    d = frame_distances(meshes, art, static, threshold, collided)
    return bool(np.all(d <= threshold + _BOUNDARY_SLACK)), d


def _line_distance(p: np.ndarray, q: np.ndarray, d: np.ndarray) -> float:
    """Distance from point p to the line through q with unit direction d."""
    w = p - q
    return float(np.linalg.norm(w - (w @ d) * d))


def axes_match(pred: Articulation, gt: Articulation, dist_tol: float = 0.01, dot_tol: float = 0.99) -> bool:
    if pred.kind != gt.kind:
        return False
    dp = np.asarray(pred.axis.direction, dtype=float)
    dg = np.asarray(gt.axis.direction, dtype=float)
    if float(dp @ dg) < dot_tol:
        return False
    if pred.kind == "prismatic":
        return True  # a translation has no meaningful axis origin
    return _line_distance(np.asarray(pred.axis.point, float), np.asarray(gt.axis.point, float), dg) <= dist_tol


def motion_correctness(pred: Articulation, gts: Sequence[Articulation], dist_tol: float = 0.01,
                       dot_tol: float = 0.99) -> tuple[bool, bool]:
    """(gt_aligned, reasonable): match against the primary annotation, and against any annotation."""
    if not gts:
        raise SimError("motion_correctness needs at least one ground-truth articulation")
    aligned = axes_match(pred, gts[0], dist_tol, dot_tol)
    reasonable = aligned or any(axes_match(pred, g, dist_tol, dot_tol) for g in gts[1:])
    return aligned, reasonable


@dataclass
class SimReport:
    per_part_collision: dict[str, float] = field(default_factory=dict)
    per_part_connected: dict[str, bool] = field(default_factory=dict)
    collision_rate: float = 0.0
    connectivity_rate: float = 1.0
    motion: dict[str, dict[str, bool]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "per_part_collision": dict(sorted(self.per_part_collision.items())),
            "per_part_connected": dict(sorted(self.per_part_connected.items())),
            "collision_rate": self.collision_rate,
            "connectivity_rate": self.connectivity_rate,
            "motion": {k: dict(v) for k, v in sorted(self.motion.items())},
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SimReport":
        return cls(dict(doc["per_part_collision"]), dict(doc["per_part_connected"]), float(doc["collision_rate"]),
                   float(doc["connectivity_rate"]), {k: dict(v) for k, v in doc.get("motion", {}).items()},
                   list(doc.get("notes", [])))


def simulate(parts, articulations: Sequence[Articulation], threshold: float = CONNECT_THRESHOLD,
             gt: Mapping[str, Sequence[Articulation]] | None = None) -> SimReport:
    """Sweep every joint and score it against the parts that move with no joint."""
    meshes = _mesh_map(parts)
    report = SimReport()
    if not articulations:
        report.notes.append("no joints")
        return report
    for a in articulations:
        for pid in a.moving_ids:
            if pid not in meshes:
                raise SimError(f"articulation references unknown part {pid!r}")
    static = static_ids(list(meshes), articulations)
    for a in sorted(articulations, key=lambda x: x.child):
        hit = collision_frames(meshes, a, static)
        report.per_part_collision[a.child] = float(hit.mean())
        report.per_part_connected[a.child] = connectivity(meshes, a, threshold, static, hit)[0]
        if gt and a.child in gt and gt[a.child]:
            al, rs = motion_correctness(a, gt[a.child])
            report.motion[a.child] = {"gt_aligned": al, "reasonable": rs}
    n = len(report.per_part_collision)
    report.collision_rate = float(sum(report.per_part_collision.values()) / n)
    report.connectivity_rate = float(sum(report.per_part_connected.values()) / n)
    return report
