"""Shared label vocabularies."""
from __future__ import annotations

CATEGORIES: tuple[str, ...] = (
    "top_panel",
    "side_panel",
    "back_panel",
    "bottom_panel",
    "face_frame",
    "shelf",
    "divider",
    "bar",
    "leg",
    "door",
    "drawer",
    "handle",
    "misc",
    "unknown",
)

EDGE_KINDS: tuple[str, ...] = ("contact", "hinge", "rail", "attached", "null")
DIRECTED_KINDS: frozenset[str] = frozenset({"hinge", "rail", "attached"})

RAIL_AXES: tuple[str, ...] = ("+x", "-x", "+y", "-y", "+z", "-z")

# parts that never move in a cabinet
STATIC_CATEGORIES: frozenset[str] = frozenset(
    {"top_panel", "side_panel", "back_panel", "bottom_panel", "face_frame", "shelf", "divider", "bar", "leg", "misc"}
)
MOVABLE_CATEGORIES: frozenset[str] = frozenset({"door", "drawer"})


def canonical_category(token: str) -> str:
    """Map a free-form category token onto the vocabulary, falling back to misc."""
    t = token.strip().lower().replace("-", "_").replace(" ", "_")
    return t if t in CATEGORIES else "misc"


def rail_axis_vector(token: str):
    import numpy as np

    if token not in RAIL_AXES:
        raise ValueError(f"bad rail axis {token!r}")
    v = np.zeros(3)
    v["xyz".index(token[1])] = 1.0 if token[0] == "+" else -1.0
    return v


def rail_axis_token(vec) -> str:
    import numpy as np

    v = np.asarray(vec, dtype=float)
    i = int(np.argmax(np.abs(v)))
    return ("+" if v[i] >= 0 else "-") + "xyz"[i]
