"""Command line entry point: ``funcfix <subcommand> ...``.

Exit codes: 0 success, 2 failed or partially failed run, 3 configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from .complete import complete
from .config import ConfigError, PipelineConfig, load_config
from .corpus import generate_corpus, load_articulations
from .corrupt import STRATEGIES, apply_strategy, curriculum_interval, mirror_flip, mirror_graph, sample_strategy
from .fungraph import build_contact_graph, dumps, load_graph, save_graph
from .gltf import frame_keyframes, write_gltf
from .metrics import EDGE_METRIC_KINDS, evaluate
from .pipeline import (
    articulations_doc,
    batch,
    dumps_report,
    load_normalized,
    run_geofix_on_external_axes,
    write_json,
    write_manifest,
)
from .realize import realize
from .simulate import simulate

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_CONFIG = 3

log = logging.getLogger("funcfix")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage mistakes count as configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit(doc: dict, out: str | None) -> None:
    if out:
        write_json(doc, out)
    else:
        sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# subcommands


def cmd_parse(args, cfg: PipelineConfig) -> int:
    parts = load_normalized(args.manifest)
    eps = cfg.input.contact_eps if args.eps is None else args.eps
    g = build_contact_graph(parts, eps)
    if args.output:
        save_graph(g, args.output)
    else:
        sys.stdout.write(dumps(g) + "\n")
    return EXIT_OK


def cmd_corrupt(args, cfg: PipelineConfig) -> int:
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    graph = load_graph(args.graph)
    strategy = args.strategy or sample_strategy(rng, cfg.augment)
    if args.severity is None:
        lo, hi = curriculum_interval(0.0, cfg.augment)
        severity = float(rng.uniform(lo, hi))
    else:
        severity = args.severity
    cor = apply_strategy(graph, strategy, severity, rng, cfg.augment)
    corrupted, target = cor.graph, graph
    flip = {"on": True, "off": False}.get(args.flip)
    if flip is None:
        flip = bool(rng.random() < cfg.augment.flip_probability)
    axis = None
    if flip:
        axis = "xy"[int(rng.integers(0, 2))]
        _, corrupted, _ = mirror_flip(None, corrupted, axis)
        target = mirror_graph(target, axis)
    name = args.name or os.path.splitext(os.path.basename(args.graph))[0]
    os.makedirs(args.out_dir, exist_ok=True)
    save_graph(corrupted, os.path.join(args.out_dir, f"{name}.corrupted.json"))
    save_graph(target, os.path.join(args.out_dir, f"{name}.target.json"))
    info = {"schema_version": 1, "strategy": strategy, "severity": severity, "flip_axis": axis,
            "removed": list(cor.removed), "inapplicable": cor.inapplicable}
    sys.stdout.write(json.dumps(info, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_complete(args, cfg: PipelineConfig) -> int:
    parts = load_normalized(args.manifest)
    g, prop = complete(load_graph(args.graph), parts, cfg.complete)
    save_graph(g, args.output)
    if args.proposals:
        write_json(prop.to_dict(), args.proposals)
    return EXIT_FAILED if prop.unresolved else EXIT_OK


def cmd_realize(args, cfg: PipelineConfig) -> int:
    parts = load_normalized(args.manifest)
    res = realize(parts, load_graph(args.graph), cfg.realize)
    write_manifest(res.parts, args.out_dir)
    save_graph(res.graph, os.path.join(args.out_dir, "realized_graph.json"))
    arts = [a.with_frames(cfg.simulate.frames) for a in res.articulations]
    write_json(articulations_doc(arts), os.path.join(args.out_dir, "articulations.json"))
    for f in res.failures:
        log.warning("realize: %s", f)
    return EXIT_FAILED if res.failures else EXIT_OK


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    parts = load_normalized(args.manifest)
    arts = [a.with_frames(args.frames or cfg.simulate.frames) for a in load_articulations(args.articulations)]
    gt = None
    if args.gt:
        gt = {}
        for a in load_articulations(args.gt):
            gt.setdefault(a.child, []).append(a)
    rep = simulate(parts, arts, cfg.simulate.threshold, gt)
    _emit(rep.to_dict(), args.output)
    if args.export_frames:
        os.makedirs(args.export_frames, exist_ok=True)
        write_json(frame_keyframes(arts), os.path.join(args.export_frames, "keyframes.json"))
        write_gltf(parts, arts, os.path.join(args.export_frames, "scene.gltf"))
    return EXIT_OK


def _read_anchors(path: str | None) -> dict[str, str] | None:
    if not path:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "anchors" in doc:
        doc = doc["anchors"]
    if isinstance(doc, list):
        doc = {str(p): str(g) for p, g in doc}
    if not isinstance(doc, dict):
        raise ValueError("anchors must map predicted ids to ground-truth ids")
    return {str(k): str(v) for k, v in doc.items() if k != "schema_version"}


def metrics_row(m) -> dict:
    d = m.to_dict()
    row = {k: v for k, v in d.items() if k not in ("edge_f1", "counts")}
    row.update({f"edge_f1_{k}": d["edge_f1"][k] for k in EDGE_METRIC_KINDS})
    return row


def cmd_eval(args, cfg: PipelineConfig) -> int:
    m = evaluate(load_graph(args.pred), load_graph(args.gt), _read_anchors(args.anchors), cfg.weights)
    _emit(dict(m.to_dict(), schema_version=1), args.output)
    if args.csv:
        row = dict(pred=args.pred, gt=args.gt, **metrics_row(m))
        fresh = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        with open(args.csv, "a", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            if fresh:
                w.writeheader()
            w.writerow(row)
    return EXIT_OK


def cmd_geofix(args, cfg: PipelineConfig) -> int:
    res = run_geofix_on_external_axes(args.manifest, args.articulations, cfg)
    _emit(res.to_dict(), args.output)
    if args.out_dir:
        write_manifest(res.parts, args.out_dir)
        write_json(articulations_doc(res.articulations), os.path.join(args.out_dir, "articulations.json"))
    return EXIT_FAILED if res.failures else EXIT_OK


def cmd_batch(args, cfg: PipelineConfig) -> int:
    out_dir = args.out_dir or cfg.output_dir
    report = batch(args.corpus, cfg, out_dir, args.parallelism)
    path = args.output or os.path.join(out_dir, "corpus_report.json")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))
    agg = report["aggregates"]
    log.info("batch: %d assets, %d failed -> %s", agg["n_assets"], agg["n_failed"], path)
    return EXIT_FAILED if report["failures"] else EXIT_OK


def cmd_gen_corpus(args, cfg: PipelineConfig) -> int:
    top = {"yes": True, "no": False, "mixed": None}[args.top]
    paths = generate_corpus(args.out_dir, args.count, cfg.seed if args.seed is None else args.seed, top,
                            args.offset_axes, args.doors, args.drawers)
    sys.stdout.write(f"{len(paths)} cabinets written to {args.out_dir}\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="funcfix", description="Functional graph completion and connector insertion for part-segmented furniture.")
    p.add_argument("--config", help="YAML/JSON config (default: $FUNCFIX_CONFIG, then built-in defaults)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse", help="manifest -> contact graph JSON")
    s.add_argument("manifest")
    s.add_argument("-o", "--output")
    s.add_argument("--eps", type=float, help="contact tolerance (overrides config)")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("corrupt", help="graph -> corrupted/target training pair")
    s.add_argument("graph")
    s.add_argument("--strategy", choices=STRATEGIES, help="default: sampled from the weight table")
    s.add_argument("--severity", type=float, help="default: drawn from the initial curriculum interval")
    s.add_argument("--seed", type=int)
    s.add_argument("--flip", choices=("auto", "on", "off"), default="auto")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--name", help="output stem (default: input file stem)")
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("complete", help="graph + manifest -> completed graph and proposal log")
    s.add_argument("graph")
    s.add_argument("manifest")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--proposals")
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("realize", help="completed graph + manifest -> augmented manifest and joints")
    s.add_argument("graph")
    s.add_argument("manifest")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_realize)

    s = sub.add_parser("simulate", help="manifest + joints -> collision/connectivity report")
    s.add_argument("manifest")
    s.add_argument("articulations")
    s.add_argument("-o", "--output")
    s.add_argument("--gt", help="ground-truth joints for motion correctness")
    s.add_argument("--frames", type=int)
    s.add_argument("--export-frames", metavar="DIR", help="write keyframes.json and scene.gltf")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval", help="graph-pair metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--anchors")
    s.add_argument("-o", "--output")
    s.add_argument("--csv", help="append one metrics row to this CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("geofix", help="raw vs connector-rectified simulation of external joints")
    s.add_argument("manifest")
    s.add_argument("articulations")
    s.add_argument("-o", "--output")
    s.add_argument("--out-dir", help="also write the rectified manifest and joints")
    s.set_defaults(func=cmd_geofix)

    s = sub.add_parser("batch", help="full pipeline over every manifest in a directory tree")
    s.add_argument("corpus")
    s.add_argument("--out-dir")
    s.add_argument("--parallelism", type=int)
    s.add_argument("-o", "--output", help="report path (default: <out-dir>/corpus_report.json)")
    s.set_defaults(func=cmd_batch)

    s = sub.add_parser("gen-corpus", help="procedural cabinets with ground truth")
    s.add_argument("out_dir")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--seed", type=int)
    s.add_argument("--top", choices=("yes", "no", "mixed"), default="yes")
    s.add_argument("--offset-axes", action="store_true", help="also write raw_articulations.json with offset door axes")
    s.add_argument("--doors", type=int)
    s.add_argument("--drawers", type=int)
    s.set_defaults(func=cmd_gen_corpus)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "parallelism", None) is not None and args.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # report, do not trace back, on bad inputs
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
