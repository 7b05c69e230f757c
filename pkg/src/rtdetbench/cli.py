"""Command-line front end.

Exit codes: 0 success, 1 selfcheck failure, 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InputError, MalformedFile, SchemaViolation
from .ingest import (
    DatasetBundle,
    ThroughputStats,
    load_detections,
    load_ground_truth,
    load_latency_log,
    summarize_dataset,
)
from .matching import COCO_IOU_THRESHOLDS, EvalConfig, evaluate
from .rtop import RtopConfig, rank_leaderboard, rtop, weight_curve

PROG = "rtdetbench"


def _jobs(value: Optional[int]) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("RTDETBENCH_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"RTDETBENCH_JOBS must be an integer, got {env!r}") from None
    return 1


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``"0.5:0.05:0.95"`` (inclusive range) or ``"0.5,0.75"``."""
    try:
        if ":" in text:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(round((stop - start) / step)) + 1
            return tuple(round(start + i * step, 10) for i in range(n))
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad IoU threshold list {text!r}") from None


def _table(headers: Sequence[str], rows: Sequence[Sequence], aligns: Optional[str] = None) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    aligns = aligns or "l" + "r" * (len(headers) - 1)

    def fmt(row):
        return "  ".join(c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(row, widths, aligns)).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(cells[0]), rule] + [fmt(r) for r in cells[1:]])


def _csv(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    w.writerows(rows)
    return buf.getvalue().rstrip("\n")


def _structured(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _emit(fmt: str, headers, rows, structured) -> None:
    if fmt == "structured":
        print(_structured(structured))
    elif fmt == "csv":
        print(_csv(headers, rows))
    else:
        print(_table(headers, rows))


def _add_rtop_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--T", dest="T", type=float, default=30.0, help="real-time frame rate (default 30)")
    p.add_argument("--b", dest="b", type=float, default=2.0, help="weight base (default 2)")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iou-thresholds", type=parse_thresholds, default=COCO_IOU_THRESHOLDS)
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--score-floor", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (env RTDETBENCH_JOBS)")
    p.add_argument("--fps-from", choices=("mean", "p99"), default="mean",
                   help="which latency statistic feeds RTOP (default mean)")


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("table", "csv", "structured"), default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Latency-aware detection evaluation.")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="mAP and RTOP of one detection run")
    ev.add_argument("gt", type=Path, help="COCO-format ground truth")
    ev.add_argument("detections", type=Path, help="flat detection list")
    src = ev.add_mutually_exclusive_group()
    src.add_argument("--latency", type=Path, help="per-frame latency log (ms)")
    src.add_argument("--fps", type=float, help="throughput in frames/second")
    ev.add_argument("--name", default=None, help="run name (default: file stem)")
    ev.add_argument("--out", type=Path, help="write the structured report here")
    _add_rtop_flags(ev)
    _add_eval_flags(ev)
    _add_format(ev)

    rt = sub.add_parser("rtop", help="RTOP of a single (p, fps) pair")
    rt.add_argument("p", type=float, help="performance, e.g. mAP in percentage points")
    rt.add_argument("fps", type=float)
    _add_rtop_flags(rt)
    _add_format(rt)

    cmp_ = sub.add_parser("compare", help="RTOP leaderboard over run manifests")
    cmp_.add_argument("manifests", type=Path, nargs="+")
    cmp_.add_argument("--gt", type=Path, help="ground truth for manifests naming detection files")
    cmp_.add_argument("--plot", type=Path, help="output prefix for scatter data (.csv) and --svg image")
    cmp_.add_argument("--svg", action="store_true", help="also render <plot>.svg")
    _add_rtop_flags(cmp_)
    _add_eval_flags(cmp_)
    _add_format(cmp_)

    cv = sub.add_parser("curve", help="RTOP weight w against FPS for several bases")
    cv.add_argument("--T", dest="T", type=float, default=30.0)
    cv.add_argument("--b", dest="b", type=float, nargs="+", default=[2.0, 4.0, 8.0])
    cv.add_argument("--samples", type=int, default=91)
    cv.add_argument("--out", type=Path, help="write long-format CSV (b,fps,w) here")
    cv.add_argument("--svg", type=Path, help="render the curves to this SVG file")

    sm = sub.add_parser("summarize", help="dataset summary table")
    sm.add_argument("gt", type=Path)
    _add_format(sm)

    sub.add_parser("selfcheck", help="run embedded oracle checks")
    return parser


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        iou_thresholds=tuple(args.iou_thresholds),
        max_dets_per_image=args.max_dets,
        score_floor=args.score_floor,
    )


def _fps_of(stats: ThroughputStats, which: str) -> float:
    return stats.fps_p99 if which == "p99" else stats.fps_mean


def _fmt(v: Optional[float], digits: int = 4) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    rcfg = RtopConfig(args.T, args.b)
    bundle = load_ground_truth(args.gt)
    run = load_detections(args.detections, bundle, args.name)
    stats = load_latency_log(args.latency) if args.latency else None
    summary = evaluate(bundle, run, cfg, jobs=_jobs(args.jobs))
    fps = _fps_of(stats, args.fps_from) if stats else args.fps
    p = 100.0 * summary.map
    result = rtop(p, fps, rcfg) if fps is not None else None

    report = {
        "tool": PROG,
        "version": __version__,
        "config": {
            "eval": cfg.to_dict(),
            "rtop": {"T": rcfg.T, "b": rcfg.b, "fps_source": "scalar" if args.fps is not None else args.fps_from},
            "inputs": {"ground_truth": str(args.gt), "detections": str(args.detections),
                       "latency": str(args.latency) if args.latency else None},
        },
        "dataset": summarize_dataset(bundle).to_dict(),
        "runs": [{
            "name": run.run_name,
            "ap": summary.to_dict(),
            "throughput": stats.to_dict() if stats else ({"fps": fps} if fps is not None else None),
            "rtop": result.to_dict() if result else None,
        }],
    }
    if args.out:
        args.out.write_text(_structured(report) + "\n", encoding="utf-8")

    headers = ["run", "mAP", "mAP50", "mAP75", "FPS", "RTOP"]
    pct = lambda v: None if v is None else 100.0 * v  # noqa: E731
    rows = [[run.run_name, _fmt(pct(summary.map), 2), _fmt(pct(summary.map50), 2), _fmt(pct(summary.map75), 2),
             _fmt(fps, 1), _fmt(result.rtop if result else None, 2)]]
    _emit(args.format, headers, rows, report)
    return 0


def cmd_rtop(args) -> int:
    res = rtop(args.p, args.fps, RtopConfig(args.T, args.b))
    headers = ["p", "fps", "phi", "w", "rtop"]
    row = [f"{v:.4f}" for v in (res.p, res.fps, res.phi, res.w, res.rtop)]
    if args.format == "table":
        for h, v in zip(headers, row):
            print(f"{h:<5} {v}")
    else:
        _emit(args.format, headers, [row], res.to_dict() | {"T": args.T, "b": args.b})
    return 0


@dataclass
class _ManifestRun:
    name: str
    p: float
    fps: float
    source: str


def _read_manifest(path: Path) -> list[dict]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFile(f"{path}: cannot read manifest ({exc.strerror})") from None
    if path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(text.splitlines()))
        return [{k: v for k, v in r.items() if v not in (None, "")} for r in rows]
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None
    if isinstance(data, dict) and "runs" in data:
        data = data["runs"]
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not all(isinstance(d, dict) for d in data):
        raise SchemaViolation(f"{path}: manifest must be a run object or a list of them")
    return data


def _resolve_run(entry: dict, base: Path, where: str, args, cfg: EvalConfig, gt_cache: dict) -> _ManifestRun:
    name = entry.get("name")
    if not name:
        raise SchemaViolation(f"{where}: run needs a 'name'")

    def num(key):
        try:
            return float(entry[key])
        except (TypeError, ValueError):
            raise SchemaViolation(f"{where}: {key!r} must be numeric") from None

    if "latency_log" in entry:
        fps = _fps_of(load_latency_log(base / entry["latency_log"]), args.fps_from)
    elif "fps" in entry:
        fps = num("fps")
    else:
        raise SchemaViolation(f"{where}: run {name!r} needs 'fps' or 'latency_log'")

    if "map" in entry or "p" in entry:
        p = num("map" if "map" in entry else "p")
        return _ManifestRun(str(name), p, fps, "precomputed")
    if "detections" not in entry:
        raise SchemaViolation(f"{where}: run {name!r} needs 'map' or 'detections'")
    gt_path = base / entry["ground_truth"] if "ground_truth" in entry else args.gt
    if gt_path is None:
        raise SchemaViolation(f"{where}: run {name!r} names detections but no ground truth (use --gt)")
    key = str(gt_path)
    if key not in gt_cache:
        gt_cache[key] = load_ground_truth(gt_path)
    bundle: DatasetBundle = gt_cache[key]
    run = load_detections(base / entry["detections"], bundle, str(name))
    summary = evaluate(bundle, run, cfg, jobs=_jobs(args.jobs))
    return _ManifestRun(str(name), 100.0 * summary.map, fps, "evaluated")


def write_scatter(prefix: Path, runs, T: float, svg: bool) -> list[Path]:
    written = [prefix.with_suffix(".csv")]
    rows = [[r.name, repr(r.fps), repr(r.p)] for r in runs]
    written[0].write_text(_csv(["name", "fps", "map"], rows) + "\n", encoding="utf-8")
    if svg:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter([r.fps for r in runs], [r.p for r in runs])
        for r in runs:
            ax.annotate(r.name, (r.fps, r.p), textcoords="offset points", xytext=(4, 4), fontsize=8)
        ax.axvline(T, linestyle=":", color="goldenrod", label=f"real-time ({T:g} FPS)")
        ax.set_xlabel("FPS")
        ax.set_ylabel("mAP")
        ax.legend(loc="lower right")
        path = prefix.with_suffix(".svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def cmd_compare(args) -> int:
    cfg = _eval_config(args)
    rcfg = RtopConfig(args.T, args.b)
    gt_cache: dict = {}
    runs = []
    for path in args.manifests:
        for i, entry in enumerate(_read_manifest(path)):
            runs.append(_resolve_run(entry, path.parent, f"{path}: run {i}", args, cfg, gt_cache))
    board = rank_leaderboard([(r.name, r.p, r.fps) for r in runs], rcfg)
    if args.plot:
        write_scatter(args.plot, runs, rcfg.T, args.svg)
    headers = ["rank", "run", "mAP", "FPS", "RTOP"]
    rows = [[i + 1, e.run_name, f"{e.p:.2f}", f"{e.fps:.1f}", f"{e.rtop:.2f}"] for i, e in enumerate(board)]
    structured = {
        "config": {"T": rcfg.T, "b": rcfg.b, "eval": cfg.to_dict()},
        "leaderboard": [{"run": e.run_name, "p": e.p, "fps": e.fps, "rtop": e.rtop} for e in board],
    }
    if args.format == "table":
        print(_table(headers, rows, "rlrrr"))
    else:
        _emit(args.format, headers, rows, structured)
    return 0


def curve_samples(T: float, n: int) -> list[float]:
    """``n`` uniform samples on [0, 1.5 T], plus T itself if missed."""
    fps = [float(v) for v in np.linspace(0.0, 1.5 * T, max(n, 2))]
    if T not in fps:
        fps = sorted(fps + [T])
    return fps


def cmd_curve(args) -> int:
    fps = curve_samples(args.T, args.samples)
    series = {b: weight_curve(RtopConfig(args.T, b), fps) for b in args.b}
    rows = [[f"{b:g}", repr(f), repr(w)] for b, pts in series.items() for f, w in pts]
    text = _csv(["b", "fps", "w"], rows) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.svg:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        for b, pts in series.items():
            ax.plot([f for f, _ in pts], [w for _, w in pts], label=f"b = {b:g}")
        ax.axvline(args.T, linestyle=":", color="goldenrod")
        ax.set_xlabel("FPS")
        ax.set_ylabel("w")
        ax.legend(loc="lower right")
        fig.savefig(args.svg, format="svg", metadata={"Date": None})
        plt.close(fig)
    return 0


def cmd_summarize(args) -> int:
    s = summarize_dataset(load_ground_truth(args.gt))
    if args.format == "structured":
        print(_structured(s.to_dict()))
        return 0
    headers = ["field", "value"]
    rows = [["images", s.image_count], ["objects", s.object_count]]
    rows += [[f"class:{name}", n] for name, n in s.per_class_counts.items()]
    rows += [[f"resolution:{w}x{h}", n] for w, h, n in s.resolution_modes]
    _emit(args.format, headers, rows, None)
    return 0


def cmd_selfcheck(args) -> int:
    from . import selfcheck

    ok = selfcheck.run_all()
    print(f"selfcheck: {'all checks passed' if ok else 'FAILED'} ({len(selfcheck.CHECKS)} checks)")
    return 0 if ok else 1


COMMANDS = {
    "eval": cmd_eval,
    "rtop": cmd_rtop,
    "compare": cmd_compare,
    "curve": cmd_curve,
    "summarize": cmd_summarize,
    "selfcheck": cmd_selfcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
