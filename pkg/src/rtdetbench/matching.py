"""COCO-style mAP: greedy IoU matching, PR curves and interpolated AP.

Detections are ranked by descending score with ties broken by their position
in the loaded :class:`~rtdetbench.ingest.DetectionRun` (stable load order).
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import Detection, GroundTruthObject, ImageId, iou
from .errors import InvalidConfig
from .ingest import DatasetBundle, DetectionRun

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
COCO_RECALL_GRID = tuple(i / 100 for i in range(101))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
    recall_grid: tuple[float, ...] = COCO_RECALL_GRID
    max_dets_per_image: int = 100
    score_floor: float = 0.0

    def __post_init__(self) -> None:
        t = tuple(float(v) for v in self.iou_thresholds)
        g = tuple(float(v) for v in self.recall_grid)
        object.__setattr__(self, "iou_thresholds", t)
        object.__setattr__(self, "recall_grid", g)
        if not t or any(not (0.0 < v <= 1.0) for v in t):
            raise InvalidConfig("IoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise InvalidConfig("IoU thresholds must be strictly increasing")
        if not g or any(not (0.0 <= v <= 1.0) for v in g):
            raise InvalidConfig("recall grid must lie in [0, 1]")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise InvalidConfig("recall grid must be strictly increasing")
        if self.max_dets_per_image < 1:
            raise InvalidConfig("max_dets_per_image must be >= 1")
        if not (0.0 <= self.score_floor <= 1.0):
            raise InvalidConfig("score_floor must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "recall_grid_points": len(self.recall_grid),
            "recall_grid": list(self.recall_grid),
            "max_dets_per_image": self.max_dets_per_image,
            "score_floor": self.score_floor,
        }


@dataclass(frozen=True)
class MatchRecord:
    det_index: int
    score: float
    gt_index: Optional[int]
    iou_threshold: float
    is_ignored: bool = False

    @property
    def is_tp(self) -> bool:
        return self.gt_index is not None

    @property
    def is_fp(self) -> bool:
        return self.gt_index is None and not self.is_ignored


@dataclass(frozen=True)
class PrCurve:
    points: tuple[tuple[float, float], ...]
    class_id: int
    iou_threshold: float


@dataclass(frozen=True)
class ApSummary:
    per_class_ap: dict[tuple[int, float], float]
    map: float
    map50: Optional[float]
    map75: Optional[float]
    excluded_classes: tuple[int, ...] = ()
    gt_counts: dict[int, int] = field(default_factory=dict)

    def class_ap(self, class_id: int) -> list[float]:
        return [ap for (c, _), ap in sorted(self.per_class_ap.items()) if c == class_id]

    def to_dict(self) -> dict:
        per_class: dict[str, dict[str, float]] = {}
        for (c, t), ap in sorted(self.per_class_ap.items()):
            per_class.setdefault(str(c), {})[f"{t:.2f}"] = ap
        return {
            "map": self.map,
            "map50": self.map50,
            "map75": self.map75,
            "per_class_ap": per_class,
            "excluded_classes": list(self.excluded_classes),
            "gt_counts": {str(k): v for k, v in sorted(self.gt_counts.items())},
        }


def match_class_image(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    t: float,
    det_indices: Optional[Sequence[int]] = None,
    ious: Optional[Sequence[Sequence[float]]] = None,
) -> list[MatchRecord]:
    """Greedily match one class on one image at IoU threshold ``t``.

    ``dets`` must already be in ranking order. Each detection takes the
    unmatched, non-ignored ground truth with the highest IoU >= t (first in
    ``gts`` order on ties). Failing that, a detection overlapping an ignore
    region at >= t is absorbed (``is_ignored``); otherwise it is a false
    positive. Ignore regions may absorb any number of detections.
    """
    if det_indices is None:
        det_indices = range(len(dets))
    if ious is None:
        ious = [[iou(d.box, g.box) for g in gts] for d in dets]
    taken = [False] * len(gts)
    out = []
    for k, det in enumerate(dets):
        row = ious[k]
        best, best_j = -1.0, None
        for j, gt in enumerate(gts):
            if gt.ignore or taken[j]:
                continue
            if row[j] >= t and row[j] > best:
                best, best_j = row[j], j
        if best_j is not None:
            taken[best_j] = True
            out.append(MatchRecord(det_indices[k], det.score, best_j, t))
            continue
        ignored = any(gt.ignore and row[j] >= t for j, gt in enumerate(gts))
        out.append(MatchRecord(det_indices[k], det.score, None, t, is_ignored=ignored))
    return out


def pr_curve(
    records: Sequence[MatchRecord],
    n_gt: int,
    class_id: int = -1,
    iou_threshold: Optional[float] = None,
) -> PrCurve:
    """Precision/recall at every rank of the pooled, score-ranked records.

    Ignored records produce no point. The curve is empty when ``n_gt == 0``.
    """
    t = iou_threshold
    if t is None:
        t = records[0].iou_threshold if records else float("nan")
    if n_gt <= 0:
        return PrCurve((), class_id, t)
    ranked = sorted(records, key=lambda r: (-r.score, r.det_index))
    tp = fp = 0
    points = []
    for rec in ranked:
        if rec.is_ignored:
            continue
        if rec.is_tp:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    return PrCurve(tuple(points), class_id, t)


def average_precision(curve: PrCurve, grid: Sequence[float] = COCO_RECALL_GRID) -> float:
    """Mean over ``grid`` of the max precision at recall >= each grid value."""
    pts = curve.points
    if not grid:
        return 0.0
    # precision envelope from the right: env[i] = max precision over points[i:]
    env = [0.0] * (len(pts) + 1)
    for i in range(len(pts) - 1, -1, -1):
        env[i] = max(pts[i][1], env[i + 1])
    total = 0.0
    i = 0
    for r in grid:
        # recall is non-decreasing along the curve, so the pointer only advances
        while i < len(pts) and pts[i][0] < r:
            i += 1
        total += env[i]
    return total / len(grid)


def _select_detections(run: DetectionRun, cfg: EvalConfig) -> dict[ImageId, list[int]]:
    """Indices into ``run.detections`` kept per image: score floor, then top-N."""
    per_image: dict[ImageId, list[int]] = defaultdict(list)
    for idx, det in enumerate(run.detections):
        if det.score >= cfg.score_floor:
            per_image[det.image_id].append(idx)
    dets = run.detections
    for image_id, idxs in per_image.items():
        idxs.sort(key=lambda i: (-dets[i].score, i))
        del idxs[cfg.max_dets_per_image:]
    return per_image


@dataclass(frozen=True)
class _ClassTask:
    class_id: int
    thresholds: tuple[float, ...]
    grid: tuple[float, ...]
    n_gt: int
    # per image with detections: (run indices, detections, ground truth, IoU rows)
    cells: tuple


def _run_class_task(task: _ClassTask) -> list[float]:
    aps = []
    for t in task.thresholds:
        pooled: list[MatchRecord] = []
        for idxs, dets, gts, ious in task.cells:
            pooled.extend(match_class_image(dets, gts, t, det_indices=idxs, ious=ious))
        curve = pr_curve(pooled, task.n_gt, task.class_id, t)
        aps.append(average_precision(curve, task.grid))
    return aps


def _build_tasks(bundle: DatasetBundle, run: DetectionRun, cfg: EvalConfig) -> tuple[list[_ClassTask], list[int]]:
    kept = _select_detections(run, cfg)
    gts_by: dict[tuple[ImageId, int], list[GroundTruthObject]] = defaultdict(list)
    for gt in bundle.ground_truth:
        gts_by[(gt.image_id, gt.class_id)].append(gt)
    dets_by: dict[tuple[ImageId, int], list[int]] = defaultdict(list)
    for image in bundle.images:
        for idx in kept.get(image.image_id, ()):
            dets_by[(image.image_id, run.detections[idx].class_id)].append(idx)

    tasks, excluded = [], []
    for cls in bundle.class_map:
        n_gt = sum(
            1 for gt in bundle.ground_truth if gt.class_id == cls.id and not gt.ignore
        )
        if n_gt == 0:
            excluded.append(cls.id)
            continue
        cells = []
        for image in bundle.images:
            key = (image.image_id, cls.id)
            idxs = dets_by.get(key, [])
            gts = gts_by.get(key, [])
            if not idxs:
                continue
            dets = [run.detections[i] for i in idxs]
            ious = tuple(tuple(iou(d.box, g.box) for g in gts) for d in dets)
            cells.append((tuple(idxs), tuple(dets), tuple(gts), ious))
        tasks.append(_ClassTask(cls.id, cfg.iou_thresholds, cfg.recall_grid, n_gt, tuple(cells)))
    return tasks, excluded


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def evaluate(
    bundle: DatasetBundle,
    run: DetectionRun,
    cfg: Optional[EvalConfig] = None,
    jobs: int = 1,
) -> ApSummary:
    """Score ``run`` against ``bundle`` under the COCO box protocol.

    Classes without non-ignored ground truth are excluded from every mean and
    listed in ``excluded_classes``. With ``jobs > 1`` classes are scored in a
    process pool; results are reduced in class-map order so the summary is
    bit-identical for any worker count.
    """
    cfg = cfg or EvalConfig()
    tasks, excluded = _build_tasks(bundle, run, cfg)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_run_class_task, tasks))
    else:
        results = [_run_class_task(task) for task in tasks]

    per_class: dict[tuple[int, float], float] = {}
    for task, aps in zip(tasks, results):
        for t, ap in zip(cfg.iou_thresholds, aps):
            per_class[(task.class_id, t)] = ap

    def at(threshold: float) -> Optional[float]:
        if not any(math.isclose(t, threshold) for t in cfg.iou_thresholds):
            return None
        vals = [ap for (c, t), ap in per_class.items() if math.isclose(t, threshold)]
        return _mean(vals) if vals else 0.0

    gt_counts = {task.class_id: task.n_gt for task in tasks}
    return ApSummary(
        per_class_ap=per_class,
        map=_mean(list(per_class.values())) if per_class else 0.0,
        map50=at(0.5),
        map75=at(0.75),
        excluded_classes=tuple(excluded),
        gt_counts=gt_counts,
    )


__all__ = [
    "ApSummary",
    "COCO_IOU_THRESHOLDS",
    "COCO_RECALL_GRID",
    "EvalConfig",
    "MatchRecord",
    "PrCurve",
    "average_precision",
    "evaluate",
    "match_class_image",
    "pr_curve",
]
