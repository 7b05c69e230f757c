"""Embedded oracle checks behind ``rtdetbench selfcheck``.

Each check returns ``(passed, detail)``. Implementations are looked up
through their modules at call time so a patched function is what gets
checked.
"""

from __future__ import annotations

import json
import random
import time
from importlib import import_module
from importlib.resources import files
from typing import Callable

import numpy as np

from . import core, headnum, matching, reference

# The package re-exports the rtop() function under the submodule's name.
rtop = import_module(".rtop", __package__)

CheckResult = tuple[bool, str]


def check_rtop_published() -> CheckResult:
    rows = rtop.published_rows()
    worst = max(abs(rtop.rtop(r.map, r.fps).rtop - r.rtop) for r in rows)
    return worst <= 0.1, f"{len(rows)} rows, max |error| {worst:.4f}"


def check_leaderboard_order() -> CheckResult:
    rows = rtop.published_rows()
    bad = []
    for ds in dict.fromkeys(r.dataset for r in rows):
        block = [r for r in rows if r.dataset == ds]
        ours = [e.run_name for e in rtop.rank_leaderboard([(r.method, r.map, r.fps) for r in block])]
        # published order: by printed RTOP, stable on input order
        theirs = [r.method for r in sorted(block, key=lambda r: -r.rtop)]
        if ours != theirs:
            bad.append(ds)
    return not bad, "all blocks match" if not bad else f"mismatch in {bad}"


def check_weight_curve() -> CheckResult:
    for b in (2.0, 4.0, 8.0):
        cfg = rtop.RtopConfig(30.0, b)
        fps = list(np.linspace(0.0, 45.0, 91))
        curve = rtop.weight_curve(cfg, fps)
        ws = [w for _, w in curve]
        if abs(ws[0] - 1 / b) > 1e-12 or rtop.weight(30.0, cfg) != 1.0:
            return False, f"endpoint failure at b={b}"
        if any(b2 < a for a, b2 in zip(ws, ws[1:])):
            return False, f"non-monotone at b={b}"
        if any(w != 1.0 for f, w in curve if f >= 30.0):
            return False, f"not constant beyond T at b={b}"
    return True, "b in {2,4,8}"


def check_iou_examples() -> CheckResult:
    B = core.BoundingBox
    cases = [
        (B(0, 0, 10, 10), B(0, 0, 10, 10), 1.0),
        (B(0, 0, 10, 10), B(20, 20, 5, 5), 0.0),
        (B(0, 0, 10, 10), B(5, 0, 10, 10), 50 / 150),
    ]
    ok = all(abs(core.iou(a, b) - want) < 1e-12 for a, b, want in cases)
    return ok, f"{len(cases)} cases"


def check_map_bruteforce(n: int = 150, seed: int = 7) -> CheckResult:
    rng = random.Random(seed)
    cfg = matching.EvalConfig()
    worst = 0.0
    for _ in range(n):
        bundle, run = reference.random_instance(rng)
        got = matching.evaluate(bundle, run, cfg)
        want = reference.reference_evaluate(bundle, run, cfg)
        worst = max(worst, abs(got.map - want["map"]))
        for key, ap in want["per_class_ap"].items():
            worst = max(worst, abs(got.per_class_ap.get(key, -1.0) - ap))
    return worst <= 1e-9, f"{n} instances, max |diff| {worst:.2e}"


def check_threshold_monotonicity(n: int = 150, seed: int = 11) -> CheckResult:
    rng = random.Random(seed)
    for _ in range(n):
        bundle, run = reference.random_instance(rng)
        s = matching.evaluate(bundle, run)
        if s.map50 is not None and s.map75 is not None and s.map50 < s.map75:
            return False, "map50 < map75"
        for c in s.gt_counts:
            aps = s.class_ap(c)
            if any(b > a for a, b in zip(aps, aps[1:])):
                return False, f"class {c} AP increases with threshold"
    return True, f"{n} instances"


def _random_loss_case(rng: np.random.Generator, C: int, H: int, W: int):
    y = rng.uniform(0.0, 0.95, size=(C, H, W))
    pos = np.zeros((C, H, W), dtype=bool)
    for c in range(C):
        k = rng.integers(0, 4)
        for _ in range(k):
            pos[c, rng.integers(H), rng.integers(W)] = True
    y[pos] = 1.0
    counts = pos.reshape(C, -1).sum(axis=1)
    tgt = headnum.TargetMaps(y, np.zeros((2, H, W)), np.zeros((2, H, W)), pos, counts, C, 4.0)
    pred = headnum.HeatmapBatch(rng.uniform(0.02, 0.98, size=(C, H, W)), np.zeros((2, H, W)), np.zeros((2, H, W)), 4.0)
    return pred, tgt


def check_center_loss_naive(n: int = 10, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        pred, tgt = _random_loss_case(rng, int(rng.integers(1, 5)), int(rng.integers(2, 17)), int(rng.integers(2, 17)))
        total, per = headnum.center_loss(pred, tgt)
        ref_total, ref_per = reference.naive_center_loss(
            pred.centers.tolist(), tgt.y.tolist(), tgt.positive_mask.tolist(), tgt.counts.tolist()
        )
        for a, b in zip([total, *per], [ref_total, *ref_per]):
            worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return worst <= 1e-10, f"{n} grids, max rel diff {worst:.2e}"


def check_center_loss_gradient(seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    pred, tgt = _random_loss_case(rng, 2, 5, 6)
    analytic = headnum.center_loss_grad(pred, tgt)

    def f(x):
        return headnum.center_loss(headnum.HeatmapBatch(x, pred.scales, pred.offsets, pred.stride), tgt)[0]

    numeric = reference.finite_difference_grad(f, pred.centers, 1e-4)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    worst = float(rel.max())
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_class_balance() -> CheckResult:
    rng = np.random.default_rng(17)
    tile_p = rng.uniform(0.05, 0.95, size=(6, 6))
    tile_y = rng.uniform(0.0, 0.9, size=(6, 6))
    tile_y[2, 3] = 1.0
    values = []
    for m in (1, 2, 4):
        p = np.tile(tile_p, (1, m))[None]
        y = np.tile(tile_y, (1, m))[None]
        pos = y == 1.0
        tgt = headnum.TargetMaps(y, np.zeros((2, 6, 6 * m)), np.zeros((2, 6, 6 * m)), pos, np.array([m]), 1, 1.0)
        pred = headnum.HeatmapBatch(p, np.zeros((2, 6, 6 * m)), np.zeros((2, 6, 6 * m)), 1.0)
        values.append(headnum.center_loss(pred, tgt)[1][0])
    return len(set(values)) == 1, f"per-class terms {values}"


def check_roundtrip(n: int = 60, seed: int = 23) -> CheckResult:
    scenes = [
        headnum.scene_from_dict(d)
        for d in json.loads(files("rtdetbench").joinpath("data/scenes.json").read_text(encoding="utf-8"))
    ]
    rng = random.Random(seed)
    scenes += [reference.random_scene(rng) for _ in range(n)]
    for scene in scenes:
        tgt = headnum.encode_scene(scene)
        peaks = headnum.decode_peaks(headnum.ideal_prediction(tgt), headnum.DecodeConfig(top_k=1000))
        if len(peaks) != len(scene.objects):
            return False, f"{len(peaks)} peaks for {len(scene.objects)} objects"
        by_center = {pk.center: pk for pk in peaks}
        for obj in scene.objects:
            pk = by_center.get(obj.box.center)
            if pk is None or pk.class_index != obj.class_id:
                return False, f"object {obj.box} not recovered"
            if abs(pk.extent[0] / obj.box.w - 1) >= 1e-6 or abs(pk.extent[1] / obj.box.h - 1) >= 1e-6:
                return False, f"extent error for {obj.box}"
    return True, f"{len(scenes)} scenes"


def check_nms_chain() -> CheckResult:
    B, D = core.BoundingBox, core.Detection
    # a-b and b-c at IoU 0.6, a-c at 0.2 (the smallest value the triangle
    # inequality on 1 - IoU allows)
    a = D(0, 1, B(0, 0, 12, 10), 0.9)
    b = D(0, 1, B(0, 0, 20, 10), 0.8)
    c = D(0, 1, B(8, 0, 12, 10), 0.7)
    kept = headnum.nms([a, b, c], 0.5)
    return kept == [a, c], f"kept {len(kept)} boxes"


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "rtop_published_values": check_rtop_published,
    "rtop_leaderboard_order": check_leaderboard_order,
    "rtop_weight_curve": check_weight_curve,
    "iou_examples": check_iou_examples,
    "map_vs_bruteforce": check_map_bruteforce,
    "map_threshold_monotonicity": check_threshold_monotonicity,
    "center_loss_vs_naive": check_center_loss_naive,
    "center_loss_gradient": check_center_loss_gradient,
    "center_loss_class_balance": check_class_balance,
    "encode_decode_roundtrip": check_roundtrip,
    "nms_chain": check_nms_chain,
}


def run_all(echo: Callable[[str], None] = print) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name:<30} {detail} ({time.perf_counter() - t0:.2f}s)")
    return all_ok
