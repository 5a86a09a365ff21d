"""Frame keyframes and an animated glTF 2.0 scene for swept articulations."""
from __future__ import annotations

import base64
import json
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .meshkit import TriMesh
from .simulate import Articulation, frame_poses

FPS = 25.0


def frame_keyframes(articulations: Sequence[Articulation]) -> dict:
    """Per joint, the 4x4 world transform of its moving assembly at every frame."""
    joints = {}
    for a in sorted(articulations, key=lambda x: x.child):
        joints[a.child] = {"moving": list(a.moving_ids),
                           "transforms": [np.round(p, 12).tolist() for p in frame_poses(a)]}
    return {"schema_version": 1, "fps": FPS, "joints": joints}


class _Buffer:
    def __init__(self):
        self.data = bytearray()
        self.views: list[dict] = []
        self.accessors: list[dict] = []

    def add(self, arr: np.ndarray, component: int, kind: str, target: int | None = None, bounds: bool = False) -> int:
        while len(self.data) % 4:
            self.data.append(0)
        raw = np.ascontiguousarray(arr).tobytes()
        view = {"buffer": 0, "byteOffset": len(self.data), "byteLength": len(raw)}
        if target is not None:
            view["target"] = target
        self.data += raw
        self.views.append(view)
        acc = {"bufferView": len(self.views) - 1, "componentType": component, "count": int(arr.shape[0]), "type": kind}
        if bounds:
            acc["min"] = [float(x) for x in np.atleast_2d(arr).reshape(arr.shape[0], -1).min(axis=0)]
            acc["max"] = [float(x) for x in np.atleast_2d(arr).reshape(arr.shape[0], -1).max(axis=0)]
        self.accessors.append(acc)
        return len(self.accessors) - 1


def animated_scene(parts: Sequence[tuple[TriMesh, str, str]], articulations: Sequence[Articulation]) -> dict:
    """glTF document with one node per part and TRS channels for every moving node.

    Vertices stay in world coordinates, so a node's TRS equals the joint pose.
    All joints play simultaneously over their frames.
    """
    buf = _Buffer()
    meshes, nodes, index = [], [], {}
    for mesh, cat, pid in parts:
        if mesh.n_triangles == 0:
            continue
        pos = buf.add(mesh.vertices.astype(np.float32), 5126, "VEC3", 34962, bounds=True)
        idx = buf.add(mesh.triangles.astype(np.uint32).reshape(-1), 5125, "SCALAR", 34963)
        meshes.append({"name": pid, "primitives": [{"attributes": {"POSITION": pos}, "indices": idx}]})
        index[pid] = len(nodes)
        nodes.append({"name": pid, "mesh": len(meshes) - 1, "extras": {"category": cat}})
    animations = []
    for a in sorted(articulations, key=lambda x: x.child):
        poses = frame_poses(a)
        times = (np.arange(len(poses)) / FPS).astype(np.float32)
        t_acc = buf.add(times, 5126, "SCALAR", bounds=True)
        r_acc = buf.add(Rotation.from_matrix(poses[:, :3, :3]).as_quat().astype(np.float32), 5126, "VEC4")
        p_acc = buf.add(poses[:, :3, 3].astype(np.float32), 5126, "VEC3")
        samplers = [{"input": t_acc, "output": r_acc, "interpolation": "LINEAR"},
                    {"input": t_acc, "output": p_acc, "interpolation": "LINEAR"}]
        channels = []
        for pid in a.moving_ids:
            if pid in index:
                channels.append({"sampler": 0, "target": {"node": index[pid], "path": "rotation"}})
                channels.append({"sampler": 1, "target": {"node": index[pid], "path": "translation"}})
        if channels:
            animations.append({"name": a.child, "samplers": samplers, "channels": channels})
    doc = {
        "asset": {"version": "2.0", "generator": "funcfix"},
        "scene": 0,
        "scenes": [{"nodes": list(range(len(nodes)))}],
        "nodes": nodes,
        "meshes": meshes,
        "accessors": buf.accessors,
        "bufferViews": buf.views,
        "buffers": [{"byteLength": len(buf.data),
                     "uri": "data:application/octet-stream;base64," + base64.b64encode(bytes(buf.data)).decode("ascii")}],
    }
    if animations:
        doc["animations"] = animations
    return doc


def write_gltf(parts, articulations, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(animated_scene(parts, articulations), fh)
