"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are printed
even when output capture is on.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import time
from collections import Counter

import numpy as np
import pytest

from funcfix.cli import main
from funcfix.complete import CompleteConfig, complete, detect_missing_top
from funcfix.config import PipelineConfig
from funcfix.corpus import generate_corpus, make_cabinet, write_cabinet
from funcfix.corrupt import (
    DEFAULT_WEIGHTS,
    STRATEGIES,
    AugConfig,
    apply_strategy,
    curriculum_interval,
    mirror_flip,
    mirror_graph,
    sample_strategy,
    strategy_probabilities,
)
from funcfix.fungraph import (
    FunctionalGraph,
    MotionAttr,
    build_contact_graph,
    dumps,
    make_edge,
    mirror_axis_line,
    motion_axis_world,
    node_from_box,
)
from funcfix.meshkit import Aabb, rotation_about_axis
from funcfix.metrics import LossWeights, assignment_cost, edge_metrics, evaluate, hungarian_assign, match_graphs
from funcfix.pipeline import run_geofix_on_external_axes
from funcfix.realize import realize, snap_residual, snap_translation
from funcfix.simulate import DEFAULT_FRAMES, simulate

N_CORPUS = 50


def _report(capsys, num: int, name: str, ok: bool, detail: str, seconds: float | None = None) -> None:
    took = f" [{seconds:.1f}s]" if seconds is not None else ""
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: {detail}{took}")


# ----------------------------------------------------------------------------
# shared 50-cabinet corpus (1-3 doors, 1-3 drawers), processed once


def _run(parts, graph):
    g, _ = complete(graph, parts)
    res = realize(parts, g)
    rep = simulate(res.parts, [a.with_frames(DEFAULT_FRAMES) for a in res.articulations])
    return res, rep


@pytest.fixture(scope="module")
def corpus_runs():
    rng = np.random.default_rng(2024)
    cabs = [make_cabinet(rng) for _ in range(N_CORPUS)]
    t0 = time.perf_counter()
    runs = [_run(c.parts, build_contact_graph(c.parts)) for c in cabs]
    return cabs, runs, time.perf_counter() - t0


def test_c01_connectivity_by_construction(corpus_runs, capsys):
    cabs, runs, seconds = corpus_runs
    assert all(1 <= c.meta["n_doors"] <= 3 and 1 <= c.meta["n_drawers"] <= 3 for c in cabs)
    joints = sum(len(rep.per_part_connected) for _, rep in runs)
    connected = sum(sum(rep.per_part_connected.values()) for _, rep in runs)
    expected = sum(c.meta["n_doors"] + c.meta["n_drawers"] for c in cabs)
    ok = joints == expected and connected == joints and seconds < 60.0
    _report(capsys, 1, "connectivity by construction", ok,
            f"{connected}/{joints} joints connected over {len(cabs)} cabinets", seconds)
    assert joints == expected
    assert connected == joints
    assert seconds < 60.0


def test_c02_motion_rectification(tmp_path, capsys):
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    rows = []
    for i in range(20):
        cab = make_cabinet(rng, offset_axes=True)
        d = str(tmp_path / f"c{i:02d}")
        m = write_cabinet(cab, d)
        res = run_geofix_on_external_axes(m, os.path.join(d, "raw_articulations.json"))
        conn_ok = all(res.geofix.per_part_connected[k] >= v for k, v in res.raw.per_part_connected.items())
        rows.append((res.raw.collision_rate, res.geofix.collision_rate, conn_ok))
    seconds = time.perf_counter() - t0
    raw_positive = sum(r > 0 for r, _, _ in rows)
    fixed_zero = sum(g == 0 for _, g, _ in rows)
    never_worse = all(g <= r and c for r, g, c in rows)
    ok = raw_positive == 20 and fixed_zero >= 19 and never_worse and seconds < 30.0
    _report(capsys, 2, "motion rectification", ok,
            f"raw collision>0 on {raw_positive}/20, geofix collision=0 on {fixed_zero}/20, never worse={never_worse}", seconds)
    assert raw_positive == 20
    assert fixed_zero >= 19
    assert never_worse
    assert seconds < 30.0


def test_c03_top_panel_completion(capsys):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    fired_open = fired_closed = 0
    for _ in range(30):
        # geometry only: no graph, so the detector cannot read category labels
        fired_open += detect_missing_top(make_cabinet(rng, top=False).parts)[0] is not None
        fired_closed += detect_missing_top(make_cabinet(rng, top=True).parts)[0] is not None
    ok = fired_open == 30 and fired_closed == 0
    _report(capsys, 3, "top-panel completion", ok,
            f"fired on {fired_open}/30 topless, {fired_closed}/30 topped", time.perf_counter() - t0)
    assert fired_open == 30
    assert fired_closed == 0


def _exhaustive_min(C: np.ndarray) -> float:
    n, m = C.shape
    if n <= m:
        return min(math.fsum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(math.fsum(C[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_c04_hungarian_oracle(capsys):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    bad = 0
    for trial in range(1000):
        n, m = (int(x) for x in rng.integers(1, 7, 2))
        if trial % 2:
            C = rng.integers(0, 10, (n, m)).astype(float)  # many ties
        else:
            C = rng.uniform(-5, 5, (n, m))
        a = hungarian_assign(C)
        got = math.fsum(C[i, j] for i, j in a.pairs)
        assert got == assignment_cost(C, a) or math.isclose(got, assignment_cost(C, a), abs_tol=1e-12)
        bad += not (len(a.pairs) == min(n, m) and got == _exhaustive_min(C))
    ok = bad == 0
    _report(capsys, 4, "Hungarian oracle", ok, f"{1000 - bad}/1000 trials equal the permutation minimum",
            time.perf_counter() - t0)
    assert bad == 0


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_c05_snap_solver(capsys):
    rng = np.random.default_rng(55)
    t0 = time.perf_counter()
    worst, done = 0.0, 0
    while done < 1000:
        n_s, n_d, a = (_unit(rng.normal(size=3)) for _ in range(3))
        if np.linalg.cond(np.array([n_s, n_d, a])) > 1e3:
            continue
        t_s, t_d = rng.uniform(-0.1, 0.1, 2)
        worst = max(worst, snap_residual(n_s, t_s, n_d, t_d, a, snap_translation(n_s, t_s, n_d, t_d, a)))
        done += 1
    # axis-aligned orthonormal frames: every signed permutation, bit-exact
    exact = 0
    frames = 0
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((-1.0, 1.0), repeat=3):
            E = np.zeros((3, 3))
            E[range(3), perm] = signs
            t_s, t_d = rng.uniform(-0.1, 0.1, 2)
            delta = snap_translation(E[0], t_s, E[1], t_d, E[2])
            frames += 1
            exact += (E @ delta).tolist() == [t_s, t_d, 0.0]
    # rotated orthonormal frames: coordinates in the constraint basis to round-off
    rot_err = 0.0
    for _ in range(200):
        Q, _r = np.linalg.qr(rng.normal(size=(3, 3)))
        t_s, t_d = rng.uniform(-0.1, 0.1, 2)
        delta = snap_translation(Q[0], t_s, Q[1], t_d, Q[2])
        rot_err = max(rot_err, float(np.max(np.abs(Q @ delta - [t_s, t_d, 0.0]))))
    ok = worst <= 1e-9 and exact == frames and rot_err <= 1e-15
    _report(capsys, 5, "snap solver", ok,
            f"max residual {worst:.2e} on 1000 instances, {exact}/{frames} axis frames exact, rotated err {rot_err:.1e}",
            time.perf_counter() - t0)
    assert worst <= 1e-9
    assert exact == frames
    assert rot_err <= 1e-15


def _random_hinge_graph(rng) -> FunctionalGraph:
    ext = rng.uniform(0.2, 0.8, 3)
    ext[rng.integers(0, 3)] = rng.uniform(0.01, 0.04)
    lo = rng.uniform(-0.5, 0.5, 3)
    door = node_from_box("d", "door", Aabb(lo, lo + ext))
    panel = node_from_box("p", "side_panel", Aabb(lo - 0.1, lo))
    e = make_edge("p", "d", "hinge", MotionAttr(int(rng.integers(0, 4)), int(rng.choice([-1, 1]))))
    return FunctionalGraph((door, panel), (e,))


def _swing(line, q, angle):
    R = rotation_about_axis(line.direction, angle)
    return line.point + R @ (q - line.point)


def test_c06_flip_involution_and_motion_consistency(capsys):
    rng = np.random.default_rng(66)
    t0 = time.perf_counter()
    involution_ok = True
    for seed in range(10):
        cab = make_cabinet(seed)
        for axis in "xy":
            parts, g, _ = mirror_flip(cab.parts, cab.gt_graph, axis)
            parts2, g2, _ = mirror_flip(parts, g, axis)
            involution_ok &= dumps(g2) == dumps(cab.gt_graph)
            involution_ok &= all(np.array_equal(a[0].vertices, b[0].vertices) and np.array_equal(a[0].triangles, b[0].triangles)
                                 for a, b in zip(cab.parts, parts2))
    worst_line = worst_swing = 0.0
    for _ in range(200):
        g = _random_hinge_graph(rng)
        ax = int(rng.integers(0, 2))
        expect = mirror_axis_line(motion_axis_world(g, g.edges[0]), ax)
        gm = mirror_graph(g, ax)
        got = motion_axis_world(gm, gm.edges[0])
        off = got.point - expect.point
        off_perp = off - np.dot(off, expect.direction) * expect.direction
        worst_line = max(worst_line, float(np.max(np.abs(got.direction - expect.direction))), float(np.linalg.norm(off_perp)))
        # second route: reflecting a swept point equals sweeping the reflected point
        M = np.ones(3)
        M[ax] = -1.0
        line = motion_axis_world(g, g.edges[0])
        q = g.node("d").bbox.center + rng.normal(0, 0.1, 3)
        for ang in (0.4, 1.3):
            worst_swing = max(worst_swing, float(np.max(np.abs(M * _swing(line, q, ang) - _swing(got, M * q, ang)))))
    ok = involution_ok and worst_line <= 1e-9 and worst_swing <= 1e-9
    _report(capsys, 6, "flip involution and motion consistency", ok,
            f"involution bit-exact={involution_ok}, line err {worst_line:.1e}, swept-point err {worst_swing:.1e}",
            time.perf_counter() - t0)
    assert involution_ok
    assert worst_line <= 1e-9
    assert worst_swing <= 1e-9


AUG_TABLE = {
    "drop_handles": 0.15, "drop_top": 0.15, "drop_bottom": 0.10, "drop_doors": 0.08, "drop_drawers": 0.08,
    "drop_completion": 0.10, "random": 0.05, "fully_anonymized": 0.05, "mask_materials_keep_edges": 0.04,
    "mask_random_edges_keep_types": 0.10, "drop_nodes_keep_edge_types": 0.05, "fully_functional_drop": 0.20,
    "isolate_door": 0.05,
}


def test_c07_constants(capsys):
    cfg = AugConfig()
    checks = {
        "curriculum(0)": curriculum_interval(0) == (0.30, 0.50),
        "curriculum(1)": curriculum_interval(1) == (0.10, 0.20),
        "subweights": LossWeights().node_subweights() == (1, 3, 1, 1, 1, 0.5, 0.3, 0.3),
        "weight table": DEFAULT_WEIGHTS == AUG_TABLE and cfg.weights == AUG_TABLE and set(STRATEGIES) == set(AUG_TABLE),
        "free_slot_cap": cfg.free_slot_cap == 16 and CompleteConfig().free_slot_cap == 16,
        "flip probability": cfg.flip_probability == 0.5,
        "frames": DEFAULT_FRAMES == 50 and PipelineConfig().simulate.frames == 50,
    }
    failed = [k for k, v in checks.items() if not v]
    _report(capsys, 7, "constants", not failed, f"{len(checks) - len(failed)}/{len(checks)} exact" +
            (f", mismatched: {failed}" if failed else ""))
    assert not failed


def _n(pid, cat, c, h=0.05):
    c = np.asarray(c, float)
    return node_from_box(pid, cat, Aabb(c - h, c + h))


def test_c08_metrics_identity_and_hand_confusion(capsys):
    identity_ok = True
    for seed in range(5):
        g = make_cabinet(seed).gt_graph
        m = evaluate(g, g, {i: i for i in g.ids})
        identity_ok &= m.as_tuple() == (1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    nodes = (_n("p", "side_panel", [0, 0, 0]), _n("d", "door", [1, 0, 0]), _n("s", "shelf", [0, 1, 0]),
             _n("b", "bottom_panel", [0, 0, 1]), _n("h", "handle", [1, 1, 1]))
    gt_edges = (make_edge("p", "d", "hinge", MotionAttr(0, 1)), make_edge("p", "s", "contact"),
                make_edge("p", "b", "contact"), make_edge("d", "h", "attached"))
    pred = FunctionalGraph(nodes, (make_edge("p", "d", "contact"),) + gt_edges[1:])
    gt = FunctionalGraph(nodes, gt_edges)
    _, f1 = edge_metrics(pred, gt, match_graphs(pred, gt, {i: i for i in gt.ids}))
    ok = identity_ok and f1["contact"] == 0.8 and f1["hinge"] == 0.0
    _report(capsys, 8, "metrics identity and hand confusion", ok,
            f"identity perfect={identity_ok}, contact F1={f1['contact']}, hinge F1={f1['hinge']}")
    assert identity_ok
    assert f1["contact"] == 0.8
    assert f1["hinge"] == 0.0


def test_c09_augmentation_distribution(capsys):
    N = 100_000
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    counts = Counter(sample_strategy(rng) for _ in range(N))
    p = strategy_probabilities()
    z = {s: (counts[s] / N - p[i]) / math.sqrt(p[i] * (1 - p[i]) / N) for i, s in enumerate(STRATEGIES)}
    # independent normalisation of the frozen table
    total = math.fsum(AUG_TABLE.values())
    norm_ok = all(abs(p[i] - AUG_TABLE[s] / total) < 1e-15 for i, s in enumerate(STRATEGIES))
    worst = max(abs(v) for v in z.values())
    ok = worst <= 3.0 and norm_ok and sum(counts.values()) == N
    _report(capsys, 9, "augmentation distribution", ok, f"max |z| = {worst:.2f} over {len(STRATEGIES)} strategies",
            time.perf_counter() - t0)
    assert norm_ok
    assert worst <= 3.0


def test_c10_completer_on_procedural_gt(corpus_runs, capsys):
    cabs, runs, _ = corpus_runs
    t0 = time.perf_counter()
    motion, rail = [], []
    for cab, (res, _) in zip(cabs, runs):
        gt = cab.gt_graph
        m = evaluate(res.graph, gt, {i: i for i in res.graph.ids if i in set(gt.ids)})
        motion.append(m.joint_motion_acc)
        rail.append(m.rail_axis_acc)
    # 100% label corruption: every category unknown, in the graph and in the parts
    joints = connected = 0
    rng = np.random.default_rng(10)
    for cab in cabs:
        parts = [(mesh, "unknown", pid) for mesh, _, pid in cab.parts]
        g0 = apply_strategy(build_contact_graph(parts), "fully_anonymized", 1.0, rng).graph
        assert all(n.category == "unknown" for n in g0.nodes)
        _, rep = _run(parts, g0)
        joints += cab.meta["n_doors"] + cab.meta["n_drawers"]  # undiscovered joints count as disconnected
        connected += sum(rep.per_part_connected.values())
    conn = connected / joints
    ok = min(motion) == 1.0 and min(rail) == 1.0 and conn >= 0.96
    _report(capsys, 10, "completer on procedural GT", ok,
            f"joint motion acc min {min(motion):.3f}, rail acc min {min(rail):.3f}, anonymized connectivity {conn:.3f}",
            time.perf_counter() - t0)
    assert min(motion) == 1.0
    assert min(rail) == 1.0
    assert conn >= 0.96


def test_c11_batch_determinism(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    generate_corpus(str(corpus), 16, seed=11, top=None)
    t0 = time.perf_counter()
    codes = [main(["batch", str(corpus), "--parallelism", str(p), "--out-dir", str(tmp_path / f"p{p}")]) for p in (1, 8)]
    with open(tmp_path / "p1" / "corpus_report.json", "rb") as fh:
        a = fh.read()
    with open(tmp_path / "p8" / "corpus_report.json", "rb") as fh:
        b = fh.read()
    n_assets = len(json.loads(a)["assets"])
    ok = codes == [0, 0] and a == b and n_assets == 16
    _report(capsys, 11, "batch determinism", ok, f"reports byte-identical={a == b} ({len(a)} bytes, {n_assets} assets)",
            time.perf_counter() - t0)
    assert codes == [0, 0]
    assert a == b
    assert n_assets == 16
