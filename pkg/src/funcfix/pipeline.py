"""Per-asset pipeline, external-axis rectification and corpus batches."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .complete import complete
from .config import PipelineConfig
from .corpus import load_articulations
from .corrupt import apply_strategy
from .fungraph import (
    FunctionalGraph,
    MotionAttr,
    border_geometry,
    build_contact_graph,
    load_graph,
    make_edge,
    save_graph,
)
from .labels import rail_axis_token
from .meshkit import TriMesh, load_parts, normalize_to_unit_cube, save_obj
from .metrics import EDGE_METRIC_KINDS, evaluate
from .realize import realize
from .simulate import Articulation, SimReport, simulate

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1
METRIC_FIELDS = ("node_existence_f1", "material_accuracy", "centroid_mae", "bbox_mae", "edge_accuracy_real",
                 "hinge_border4_acc", "hinge_axis_sign_acc", "rail_axis_acc", "joint_motion_acc")


class PipelineError(RuntimeError):
    pass


def write_json(doc, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_normalized(manifest: str) -> list[tuple[TriMesh, str, str]]:
    """Parts scaled into the unit cube, unless the manifest says it already is."""
    parts = load_parts(manifest)
    with open(manifest, "r", encoding="utf-8") as fh:
        if json.load(fh).get("normalized") is True:
            return parts
    meshes, _ = normalize_to_unit_cube([m for m, _, _ in parts])
    return [(m, c, pid) for m, (_, c, pid) in zip(meshes, parts)]


def write_manifest(parts: Sequence[tuple[TriMesh, str, str]], out_dir: str, name: str = "manifest.json") -> str:
    """OBJ per part plus a manifest next to them."""
    os.makedirs(os.path.join(out_dir, "parts"), exist_ok=True)
    entries = []
    for mesh, cat, pid in parts:
        rel = f"parts/{pid}.obj"
        save_obj(mesh, os.path.join(out_dir, rel))
        entries.append({"id": pid, "category": cat, "mesh": rel})
    path = os.path.join(out_dir, name)
    write_json({"schema_version": 1, "up_axis": "z", "normalized": True, "parts": entries}, path)
    return path


def articulations_doc(arts: Sequence[Articulation]) -> dict:
    return {"schema_version": 1, "joints": [a.to_dict() for a in sorted(arts, key=lambda a: a.child)]}


def input_graph(parts, config: PipelineConfig) -> FunctionalGraph:
    g = build_contact_graph(parts, config.input.contact_eps)
    if config.input.corruption:
        rng = np.random.default_rng(config.seed)
        g = apply_strategy(g, config.input.corruption, config.input.severity, rng, config.augment).graph
    return g


def _gt_articulations(asset_dir: str) -> dict[str, list[Articulation]]:
    path = os.path.join(asset_dir, "gt_articulations.json")
    if not os.path.isfile(path):
        return {}
    out: dict[str, list[Articulation]] = {}
    for a in load_articulations(path):
        out.setdefault(a.child, []).append(a)
    return out


def run_pipeline(manifest: str, config: PipelineConfig | None = None, out_dir: str | None = None,
                 name: str | None = None) -> dict:
    """parse -> complete -> realize -> simulate -> eval for one asset; returns its report entry.

    Artifacts go to ``out_dir`` and are listed relative to it. Stage failures
    are recorded in the entry instead of raised.
    """
    cfg = config or PipelineConfig()
    asset_dir = os.path.dirname(os.path.abspath(manifest))
    name = name or os.path.basename(asset_dir)
    out_dir = out_dir or os.path.join(cfg.output_dir, name)
    os.makedirs(out_dir, exist_ok=True)
    entry: dict = {"asset": name, "status": "ok", "failures": [], "artifacts": [], "sim": None, "metrics": None}

    def art(rel: str) -> str:
        entry["artifacts"].append(rel)
        return os.path.join(out_dir, rel)

    try:
        parts = load_normalized(manifest)
        g0 = input_graph(parts, cfg)
        save_graph(g0, art("input_graph.json"))
        graph, prop = complete(g0, parts, cfg.complete)
        save_graph(graph, art("completed_graph.json"))
        write_json(prop.to_dict(), art("proposals.json"))
        entry["failures"] += [f"complete: {m}" for m in prop.unresolved]
        res = realize(parts, graph, cfg.realize)
        entry["failures"] += [f"realize: {m}" for m in res.failures]
        write_manifest(res.parts, out_dir)
        entry["artifacts"].append("manifest.json")
        entry["artifacts"] += [f"parts/{pid}.obj" for _, _, pid in res.parts]
        arts = [a.with_frames(cfg.simulate.frames) for a in res.articulations]
        write_json(articulations_doc(arts), art("articulations.json"))
        rep = simulate(res.parts, arts, cfg.simulate.threshold, _gt_articulations(asset_dir))
        write_json(rep.to_dict(), art("sim_report.json"))
        entry["sim"] = rep.to_dict()
        gt_path = os.path.join(asset_dir, "gt_graph.json")
        if os.path.isfile(gt_path):
            gt = load_graph(gt_path)
            anchors = {i: i for i in res.graph.ids if i in set(gt.ids)}
            m = evaluate(res.graph, gt, anchors, cfg.weights)
            write_json(dict(m.to_dict(), schema_version=1), art("metrics.json"))
            entry["metrics"] = m.to_dict()
    except Exception as exc:  # isolate the asset; the batch goes on
        log.warning("asset %s failed: %s", name, exc)
        entry["status"] = "failed"
        entry["failures"].append(f"{type(exc).__name__}: {exc}")
        return entry
    if entry["failures"]:
        entry["status"] = "partial"
    entry["artifacts"].sort()
    return entry


# ----------------------------------------------------------------------------
# external axes


def graph_for_external_axes(graph: FunctionalGraph, arts: Sequence[Articulation]) -> tuple[FunctionalGraph, dict]:
    """Functional edges keyed to supplied axes: border and sign from the revolute line, rail token from the slide."""
    nodes = graph.node_map()
    edges = [e for e in graph.edges if not (e.kind in ("hinge", "rail") and e.dst in {a.child for a in arts})]
    origins = {}
    for a in arts:
        if a.child not in nodes:
            raise PipelineError(f"articulation references unknown part {a.child!r}")
        parent = a.parents[0] if a.parents else None
        if parent is None:
            prev = [e for e in graph.edges if e.dst == a.child and e.kind in ("hinge", "rail")]
            parent = prev[0].src if prev else None
        if parent is None or parent not in nodes:
            raise PipelineError(f"no parent for articulated part {a.child!r}")
        d = np.asarray(a.axis.direction, dtype=float)
        if a.kind == "revolute":
            box = nodes[a.child].bbox
            best = None
            for b in range(4):
                t, fixed, side, run = border_geometry(box, b)
                if abs(d[run]) < 0.5:
                    continue
                p = box.center.copy()
                p[fixed] = box.max[fixed] if side else box.min[fixed]
                w = p - a.axis.point
                dist = float(np.linalg.norm(w - (w @ d) * d))
                if best is None or dist < best[0]:
                    best = (dist, b, int(np.sign(d[run])))
            if best is None:
                raise PipelineError(f"axis of {a.child!r} runs along no door border")
            motion = MotionAttr(hinge_border=best[1], axis_sign=best[2])
            kind = "hinge"
            origins[a.child] = np.asarray(a.axis.point, dtype=float)
            nodes[a.child] = nodes[a.child].with_category("door")
        else:
            motion = MotionAttr(rail_axis=rail_axis_token(d))
            kind = "rail"
            nodes[a.child] = nodes[a.child].with_category("drawer")
        pair = {parent, a.child}
        edges = [e for e in edges if {e.src, e.dst} != pair]
        e = make_edge(parent, a.child, kind, motion)
        edges.append(e)
    g = FunctionalGraph(tuple(nodes[n.id] for n in graph.nodes), tuple(sorted(edges, key=lambda e: (e.key, e.kind))))
    return g, origins


@dataclass
class GeofixResult:
    raw: SimReport
    geofix: SimReport
    articulations: list[Articulation]
    parts: list[tuple[TriMesh, str, str]]
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA, "raw": self.raw.to_dict(), "geofix": self.geofix.to_dict(),
                "failures": list(self.failures), "joints": articulations_doc(self.articulations)["joints"]}


def run_geofix_on_external_axes(manifest: str, articulations: str | Sequence[Articulation],
                                config: PipelineConfig | None = None) -> GeofixResult:
    """Simulate the supplied axes, insert connectors keyed to them, simulate again."""
    cfg = config or PipelineConfig()
    parts = load_normalized(manifest)
    arts = load_articulations(articulations) if isinstance(articulations, str) else list(articulations)
    ids = {pid for _, _, pid in parts}
    for a in arts:
        for pid in (a.child, *a.parents, *a.attachments):
            if pid not in ids:
                raise PipelineError(f"articulation references unknown part {pid!r}")
    graph, _ = complete(build_contact_graph(parts, cfg.input.contact_eps), parts,
                        replace(cfg.complete, propose_top=False, propose_handles=False))
    handles: dict[str, list[str]] = {}
    for e in graph.edges:
        if e.kind == "attached":
            handles.setdefault(e.src, []).append(e.dst)
    raw = []
    for a in arts:
        att = tuple(sorted(set(a.attachments) | set(handles.get(a.child, []))))
        raw.append(Articulation(a.child, a.parents, a.kind, a.axis, a.range, cfg.simulate.frames, att))
    before = simulate(parts, raw, cfg.simulate.threshold)
    keyed, origins = graph_for_external_axes(graph, raw)
    res = realize(parts, keyed, cfg.realize, origins)
    fixed = [a.with_frames(cfg.simulate.frames) for a in res.articulations]
    after = simulate(res.parts, fixed, cfg.simulate.threshold)
    return GeofixResult(before, after, fixed, res.parts, list(res.failures))


# ----------------------------------------------------------------------------
# batch


def find_manifests(corpus_dir: str) -> list[str]:
    out = []
    for root, dirs, files in os.walk(corpus_dir):
        dirs.sort()
        if "manifest.json" in files:
            out.append(os.path.join(root, "manifest.json"))
    return sorted(out)


def _run_one(job):
    manifest, cfg, out_dir, name = job
    return run_pipeline(manifest, cfg, out_dir, name)


def aggregate(entries: Sequence[dict]) -> dict:
    ok = [e for e in entries if e["status"] != "failed"]
    agg: dict = {"n_assets": len(entries), "n_ok": sum(e["status"] == "ok" for e in entries),
                 "n_partial": sum(e["status"] == "partial" for e in entries),
                 "n_failed": sum(e["status"] == "failed" for e in entries)}

    def mean(vals):
        vals = [float(v) for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    agg["collision_rate_mean"] = mean(e["sim"]["collision_rate"] for e in ok if e["sim"])
    agg["connectivity_rate_mean"] = mean(e["sim"]["connectivity_rate"] for e in ok if e["sim"])
    with_m = [e for e in ok if e["metrics"]]
    for f in METRIC_FIELDS:
        agg[f"{f}_mean"] = mean(e["metrics"][f] for e in with_m)
    for k in EDGE_METRIC_KINDS:
        agg[f"edge_f1_{k}_mean"] = mean(e["metrics"]["edge_f1"][k] for e in with_m)
    return agg


def batch(corpus_dir: str, config: PipelineConfig | None = None, out_dir: str | None = None,
          parallelism: int | None = None) -> dict:
    """Run every manifest under ``corpus_dir``; the report is independent of the parallelism degree."""
    cfg = config or PipelineConfig()
    out_dir = out_dir or cfg.output_dir
    workers = parallelism or cfg.parallelism
    manifests = find_manifests(corpus_dir)
    jobs = []
    for m in manifests:
        name = os.path.relpath(os.path.dirname(m), corpus_dir).replace(os.sep, "/")
        jobs.append((m, cfg, os.path.join(out_dir, name), name))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            entries = list(ex.map(_run_one, jobs))
    else:
        entries = [_run_one(j) for j in jobs]
    entries.sort(key=lambda e: e["asset"])
    report = {
        "schema_version": REPORT_SCHEMA,
        "assets": [e for e in entries if e["status"] != "failed"],
        "aggregates": aggregate(entries),
        "failures": [{"asset": e["asset"], "status": e["status"], "errors": e["failures"]} for e in entries if e["failures"]],
        "config": cfg.to_dict() | {"parallelism": None, "output_dir": None},
    }
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


__all__ = ["run_pipeline", "run_geofix_on_external_axes", "GeofixResult", "batch", "aggregate", "dumps_report", "find_manifests",
           "graph_for_external_axes", "write_manifest", "articulations_doc", "PipelineError"]
