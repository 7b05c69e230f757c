"""Independent reference implementations used as oracles.

Everything here is deliberately naive and shares no code path with the
production evaluator or loss: plain loops, exact rational recall comparisons,
scalar ``math`` calls. The self-check command and the test suite compare the
fast implementations against these.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .core import BoundingBox, ClassId, Detection, GroundTruthObject, ImageInfo
from .ingest import DatasetBundle, DetectionRun, sort_detections


def _corner_iou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.x, a.y, a.x + a.w, a.y + a.h
    bx1, by1, bx2, by2 = b.x, b.y, b.x + b.w, b.y + b.h
    left, top = max(ax1, bx1), max(ay1, by1)
    right, bottom = min(ax2, bx2), min(ay2, by2)
    inter = max(0.0, right - left) * max(0.0, bottom - top)
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, inter / union) if union > 0 else 0.0


def reference_evaluate(bundle: DatasetBundle, run: DetectionRun, cfg) -> dict:
    """Brute-force mAP. Returns ``{"per_class_ap", "map", "map50", "map75"}``."""
    dets = list(enumerate(run.detections))
    dets = [(i, d) for i, d in dets if d.score >= cfg.score_floor]
    kept = []
    for image in bundle.images:
        mine = [(i, d) for i, d in dets if d.image_id == image.image_id]
        mine.sort(key=lambda item: (-item[1].score, item[0]))
        kept.extend(mine[: cfg.max_dets_per_image])

    # compare recall against the decimal the grid value was written as
    grid = [Fraction(repr(float(r))) for r in cfg.recall_grid]

    per_class = {}
    for cls in bundle.class_map:
        n_gt = len([g for g in bundle.ground_truth if g.class_id == cls.id and not g.ignore])
        if n_gt == 0:
            continue
        for t in cfg.iou_thresholds:
            outcomes = []  # (score, run index, "tp" | "fp" | "ign")
            for image in bundle.images:
                gts = [g for g in bundle.ground_truth if g.image_id == image.image_id and g.class_id == cls.id]
                mine = [(i, d) for i, d in kept if d.image_id == image.image_id and d.class_id == cls.id]
                mine.sort(key=lambda item: (-item[1].score, item[0]))
                used = set()
                for i, d in mine:
                    cands = [
                        (_corner_iou(d.box, g.box), -j)
                        for j, g in enumerate(gts)
                        if not g.ignore and j not in used and _corner_iou(d.box, g.box) >= t
                    ]
                    if cands:
                        used.add(-max(cands)[1])
                        outcomes.append((d.score, i, "tp"))
                    elif any(g.ignore and _corner_iou(d.box, g.box) >= t for g in gts):
                        outcomes.append((d.score, i, "ign"))
                    else:
                        outcomes.append((d.score, i, "fp"))
            outcomes.sort(key=lambda o: (-o[0], o[1]))
            tp = fp = 0
            pts = []
            for _, _, kind in outcomes:
                if kind == "ign":
                    continue
                if kind == "tp":
                    tp += 1
                else:
                    fp += 1
                pts.append((Fraction(tp, n_gt), tp / (tp + fp)))
            total = 0.0
            for r in grid:
                total += max([p for rec, p in pts if rec >= r], default=0.0)
            per_class[(cls.id, t)] = total / len(grid)

    def mean_at(t):
        vals = [v for (c, tt), v in per_class.items() if abs(tt - t) < 1e-9]
        return sum(vals) / len(vals) if vals else 0.0

    return {
        "per_class_ap": per_class,
        "map": sum(per_class.values()) / len(per_class) if per_class else 0.0,
        "map50": mean_at(0.5),
        "map75": mean_at(0.75),
    }


def naive_center_loss(centers, y, positive, counts, gamma=2.0, beta=4.0, eps=1e-4):
    """Scalar-loop center loss. Returns ``(total, per_class)``."""
    C, H, W = len(centers), len(centers[0]), len(centers[0][0])
    per_class = []
    for c in range(C):
        s = 0.0
        for i in range(H):
            for j in range(W):
                p = min(max(float(centers[c][i][j]), eps), 1.0 - eps)
                if positive[c][i][j]:
                    s += -math.pow(1.0 - p, gamma) * math.log(p)
                else:
                    s += -math.pow(1.0 - float(y[c][i][j]), beta) * math.pow(p, gamma) * math.log(1.0 - p)
        per_class.append(s / max(int(counts[c]), 1))
    return sum(per_class) / C, per_class


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``."""
    grad = np.zeros_like(x, dtype=float)
    xp = x.astype(float).copy()
    for idx in np.ndindex(x.shape):
        orig = xp[idx]
        xp[idx] = orig + h
        up = f(xp)
        xp[idx] = orig - h
        down = f(xp)
        xp[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def random_instance(
    rng: random.Random,
    max_images: int = 4,
    max_classes: int = 3,
    max_boxes: int = 10,
    ignore_rate: float = 0.1,
) -> tuple[DatasetBundle, DetectionRun]:
    """A small random evaluation problem with plenty of partial overlaps.

    Detections are mostly jittered copies of ground truth plus some clutter;
    scores are drawn on a coarse grid so equal-score ties occur.
    """
    n_img = rng.randint(1, max_images)
    n_cls = rng.randint(1, max_classes)
    images = tuple(ImageInfo(i + 1, 64, 48) for i in range(n_img))
    classes = tuple(ClassId(c + 1, f"class{c + 1}") for c in range(n_cls))

    def rand_box():
        w, h = rng.uniform(4, 24), rng.uniform(4, 24)
        return BoundingBox(rng.uniform(0, 64 - w), rng.uniform(0, 48 - h), w, h)

    gts = []
    for _ in range(rng.randint(0, max_boxes)):
        gts.append(
            GroundTruthObject(
                rng.choice(images).image_id,
                rng.choice(classes).id,
                rand_box(),
                rng.random() < ignore_rate,
            )
        )
    dets = []
    for _ in range(rng.randint(0, max_boxes)):
        if gts and rng.random() < 0.7:
            g = rng.choice(gts)
            j = rng.uniform(0, 0.35)
            box = BoundingBox(
                g.box.x + rng.uniform(-j, j) * g.box.w,
                g.box.y + rng.uniform(-j, j) * g.box.h,
                g.box.w * rng.uniform(1 - j, 1 + j),
                g.box.h * rng.uniform(1 - j, 1 + j),
            )
            cls = g.class_id if rng.random() < 0.85 else rng.choice(classes).id
            image_id = g.image_id
        else:
            box, cls, image_id = rand_box(), rng.choice(classes).id, rng.choice(images).image_id
        dets.append(Detection(image_id, cls, box, round(rng.random(), 1)))
    return DatasetBundle(images, tuple(gts), classes), DetectionRun("random", sort_detections(dets))


def random_scene(rng: random.Random, num_classes: Optional[int] = None, max_objects: int = 6):
    """Random synthetic scene with pairwise-distinct center cells.

    Box corners are integers and the stride is a power of two, so center and
    offset arithmetic is exact in binary floating point.
    """
    from .headnum import SyntheticScene

    stride = rng.choice([2, 4, 8])
    W, H = rng.randint(8, 24) * stride, rng.randint(8, 24) * stride
    C = num_classes or rng.randint(1, 4)
    image = ImageInfo(0, W, H)
    used = set()
    objs = []
    for _ in range(rng.randint(0, max_objects)):
        w, h = rng.randint(2, max(3, W // 3)), rng.randint(2, max(3, H // 3))
        x, y = rng.randint(0, W - w), rng.randint(0, H - h)
        cell = (int((y + h / 2) // stride), int((x + w / 2) // stride))
        if cell in used:
            continue
        used.add(cell)
        objs.append(GroundTruthObject(0, rng.randrange(C), BoundingBox(x, y, w, h)))
    return SyntheticScene(image, stride, C, tuple(objs))
