"""Procedural mechanical templates with annotated snap planes.

Hinge frame: the pin is the local +z axis through the origin, local +x points
toward the door interior and local +y toward the outward front of the door.
Rail frame: local +x points from the rail toward the drawer body, +y along
the slide direction and +z up; the body's side face sits at x = 0 and its
bottom at z = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fungraph import AxisLine
from .meshkit import Plane, TriMesh, apply_pose, box_mesh, merge_meshes

HINGE_KINDS = ("c_hinge", "f_hinge", "p_hinge")
RAIL_KINDS = ("rail_corner", "rail_center")
HANDLE_STYLES = ("handle_style_0", "handle_style_1", "handle_style_2")


@dataclass(frozen=True)
class Template:
    kind: str
    static_mesh: TriMesh
    dynamic_mesh: TriMesh
    static_plane: Plane
    dynamic_plane: Plane
    rotation_axis: AxisLine | None
    handedness_anchor: np.ndarray
    mount: str
    plate: float  # plate thickness, used as the snap offset

    @property
    def mesh(self) -> TriMesh:
        return merge_meshes([self.static_mesh, self.dynamic_mesh], self.kind)

    def posed(self, pose: np.ndarray) -> "Template":
        axis = None
        if self.rotation_axis is not None:
            R = pose[:3, :3]
            axis = AxisLine(apply_pose(pose, self.rotation_axis.point[None])[0], R @ self.rotation_axis.direction,
                            self.rotation_axis.kind)
        return Template(
            self.kind,
            self.static_mesh.transformed(pose),
            self.dynamic_mesh.transformed(pose),
            self.static_plane.transformed(pose),
            self.dynamic_plane.transformed(pose),
            axis,
            apply_pose(pose, self.handedness_anchor[None])[0],
            self.mount,
            self.plate,
        )


def _check_positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive")


def hinge_template(kind: str, plate: float, leaf_static: float, leaf_dynamic: float, height: float,
                   door_thickness: float) -> Template:
    """Two-leaf hinge with its pin on the local z axis."""
    _check_positive(plate=plate, leaf_static=leaf_static, leaf_dynamic=leaf_dynamic, height=height,
                    door_thickness=door_thickness)
    tp, Ls, Ld, h2, td = plate, leaf_static, leaf_dynamic, 0.5 * height, door_thickness
    z = np.array([0.0, 0.0, 1.0])
    if kind == "c_hinge":
        # static leaf wraps the panel's outer face, dynamic leaf lies on the door front
        s = box_mesh([0, -tp - Ls, -h2], [tp, -tp, h2], "static")
        d = box_mesh([tp, -tp, -h2], [tp + Ld, 0, h2], "dynamic")
        sp = Plane([0, -tp - 0.5 * Ls, 0], [-1, 0, 0], (0.5 * Ls, h2), [0, 1, 0])
        dp = Plane([tp + 0.5 * Ld, 0, 0], [0, 1, 0], (0.5 * Ld, h2), [1, 0, 0])
        mount = "exterior"
    elif kind == "f_hinge":
        # both leaves on the common front plane, meeting at the pin
        s = box_mesh([-Ls, -tp, -h2], [0, 0, h2], "static")
        d = box_mesh([0, -tp, -h2], [Ld, 0, h2], "dynamic")
        sp = Plane([-0.5 * Ls, 0, 0], [0, 1, 0], (0.5 * Ls, h2), [1, 0, 0])
        dp = Plane([0.5 * Ld, 0, 0], [0, 1, 0], (0.5 * Ld, h2), [1, 0, 0])
        mount = "exterior"
    elif kind == "p_hinge":
        # static leaf on the panel's inner face, dynamic leaf on the door back
        s = box_mesh([0, -td - Ls, -h2], [tp, -td, h2], "static")
        d = box_mesh([tp, -td - tp, -h2], [tp + Ld, -td, h2], "dynamic")
        sp = Plane([tp, -td - 0.5 * Ls, 0], [1, 0, 0], (0.5 * Ls, h2), [0, 1, 0])
        dp = Plane([tp + 0.5 * Ld, -td - tp, 0], [0, -1, 0], (0.5 * Ld, h2), [1, 0, 0])
        mount = "interior"
    else:
        raise ValueError(f"unknown hinge kind {kind!r}")
    anchor = d.vertices.mean(axis=0)
    return Template(kind, s, d, sp, dp, AxisLine(np.zeros(3), z, "revolute"), anchor, mount, tp)


def rail_template(kind: str, thickness: float, length: float, height: float, lip: float) -> Template:
    """Left rail of a drawer pair (see the module docstring for the frame)."""
    _check_positive(thickness=thickness, length=length, height=height)
    tr, L, hr = thickness, length, height
    if kind == "rail_corner":
        if not lip > 0:
            raise ValueError("lip must be positive for a corner rail")
        dyn = merge_meshes([
            box_mesh([-tr, 0, 0], [0, L, hr]),
            box_mesh([-tr, 0, -tr], [lip, L, 0]),
        ], "dynamic")
        st = box_mesh([-2 * tr, 0, -tr], [-tr, L, hr], "static")
        side = Plane([-tr, 0.5 * L, 0.5 * hr], [-1, 0, 0], (0.5 * L, 0.5 * hr), [0, 1, 0])
        support = Plane([0.5 * lip, 0.5 * L, -tr], [0, 0, -1], (0.5 * lip, 0.5 * L), [1, 0, 0])
    elif kind == "rail_center":
        # side-mounted slide centred on the body side; its support plane is the
        # lower edge strip of the side plate
        dyn = box_mesh([-tr, 0, 0], [0, L, hr], "dynamic")
        st = box_mesh([-2 * tr, 0, 0], [-tr, L, hr], "static")
        side = Plane([-tr, 0.5 * L, 0.5 * hr], [-1, 0, 0], (0.5 * L, 0.5 * hr), [0, 1, 0])
        support = Plane([-0.5 * tr, 0.5 * L, 0.0], [0, 0, -1], (0.5 * tr, 0.5 * L), [1, 0, 0])
    else:
        raise ValueError(f"unknown rail kind {kind!r}")
    anchor = dyn.vertices.mean(axis=0)
    return Template(kind, st, dyn, side, support, None, anchor, "interior", tr)


def handle_template(style: str, width: float, height: float, depth: float) -> Template:
    """Additive handle: back face at local y = 0, protruding toward +y, centred on x and z."""
    _check_positive(width=width, height=height, depth=depth)
    w2, h2 = 0.5 * width, 0.5 * height
    if style == "handle_style_0":  # bar
        m = box_mesh([-w2, 0, -h2], [w2, depth, h2], "handle")
    elif style == "handle_style_1":  # knob: square boss
        s = min(w2, h2)
        m = box_mesh([-s, 0, -s], [s, depth, s], "handle")
    elif style == "handle_style_2":  # U pull: two posts and a grip
        t = 0.2 * min(width, height)
        g = 0.35 * depth
        if width >= height:
            posts = [box_mesh([-w2, 0, -h2], [-w2 + t, depth - g, h2]), box_mesh([w2 - t, 0, -h2], [w2, depth - g, h2])]
        else:
            posts = [box_mesh([-w2, 0, -h2], [w2, depth - g, -h2 + t]), box_mesh([-w2, 0, h2 - t], [w2, depth - g, h2])]
        grip = box_mesh([-w2, depth - g, -h2], [w2, depth, h2])
        m = merge_meshes([*posts, grip], "handle")
    else:
        raise ValueError(f"unknown handle style {style!r}")
    back = Plane([0, 0, 0], [0, 1, 0], (w2, h2), [1, 0, 0])
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), "none")
    return Template(style, m, empty, back, back, None, np.array([0.0, depth, 0.0]), "exterior", 0.0)
