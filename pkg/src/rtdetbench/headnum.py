"""Numerics of a multi-class center/scale/offset detection head.

Grids are numpy arrays laid out channel-first. Scale and offset maps have two
channels ordered ``(y, x)``: ``scales = (log h, log w)`` and
``offsets = (dy, dx)``, the sub-cell remainder of the object center.

The center loss normalizes each class plane by its own instance count before
averaging over classes, so dense classes do not dominate sparse ones.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import BoundingBox, Detection, GroundTruthObject, ImageId, ImageInfo, iou
from .errors import InvalidConfig, InvalidInput, MalformedFile, SchemaViolation, ShapeMismatch


@dataclass(frozen=True)
class HeatmapBatch:
    centers: np.ndarray
    scales: np.ndarray
    offsets: np.ndarray
    stride: float

    def __post_init__(self) -> None:
        if self.centers.ndim != 3:
            raise ShapeMismatch(f"centers must be C x H x W, got shape {self.centers.shape}")
        hw = self.centers.shape[1:]
        for name in ("scales", "offsets"):
            arr = getattr(self, name)
            if arr.shape != (2, *hw):
                raise ShapeMismatch(f"{name} must be 2 x {hw[0]} x {hw[1]}, got {arr.shape}")
        if self.stride <= 0:
            raise InvalidConfig("stride must be positive")

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class TargetMaps:
    y: np.ndarray
    scale_targets: np.ndarray
    offset_targets: np.ndarray
    positive_mask: np.ndarray
    counts: np.ndarray
    num_classes: int
    stride: float = 1.0


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    beta: float = 4.0
    eps: float = 1e-4
    weights: tuple[float, float, float] = (0.01, 1.0, 0.1)

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.beta < 0:
            raise InvalidConfig("gamma and beta must be non-negative")
        if not (0.0 < self.eps < 0.5):
            raise InvalidConfig("eps must lie in (0, 0.5)")
        if len(self.weights) != 3:
            raise InvalidConfig("weights are (center, scale, offset)")


@dataclass(frozen=True)
class DecodeConfig:
    top_k: int = 100
    score_threshold: float = 0.3
    nms_iou: Optional[float] = None
    stride: Optional[float] = None

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise InvalidConfig("top_k must be >= 1")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise InvalidConfig("score_threshold must lie in [0, 1]")
        if self.nms_iou is not None and not (0.0 <= self.nms_iou <= 1.0):
            raise InvalidConfig("nms_iou must lie in [0, 1]")


@dataclass(frozen=True)
class DecodedPeak:
    """A heatmap peak before conversion to a corner-anchored box."""

    class_index: int
    cell: tuple[int, int]
    center: tuple[float, float]
    extent: tuple[float, float]
    score: float


@dataclass(frozen=True)
class SyntheticScene:
    image: ImageInfo
    stride: int
    num_classes: int
    objects: tuple[GroundTruthObject, ...] = field(default_factory=tuple)


def gaussian_sigma(h: float, w: float, stride: float, min_sigma: float = 1.0, divisor: float = 6.0) -> float:
    """Per-object Gaussian standard deviation in cells."""
    return max(min_sigma, min(h, w) / (divisor * stride))


def _clip_box(box: BoundingBox, image: ImageInfo) -> BoundingBox:
    x1, y1 = max(box.x, 0.0), max(box.y, 0.0)
    x2, y2 = min(box.x2, float(image.width)), min(box.y2, float(image.height))
    return BoundingBox(x1, y1, max(0.0, x2 - x1), max(0.0, y2 - y1))


def encode_targets(
    gts: Sequence[GroundTruthObject],
    image: ImageInfo,
    stride: int,
    num_classes: int,
    class_index: Optional[Mapping[int, int]] = None,
    min_sigma: float = 1.0,
    sigma_divisor: float = 6.0,
) -> TargetMaps:
    """Build dense training targets for one image.

    ``class_index`` maps annotation class ids to planes; without it the class
    id is the plane index. Boxes are clipped to the image first. Objects
    sharing a center cell are all counted; scale and offset targets at that
    cell come from the later object.
    """
    if stride <= 0:
        raise InvalidConfig("stride must be positive")
    H, W = int(image.height // stride), int(image.width // stride)
    if H < 1 or W < 1:
        raise InvalidInput(f"image {image.width}x{image.height} is smaller than one {stride}px cell")
    y = np.zeros((num_classes, H, W))
    scale_t = np.zeros((2, H, W))
    offset_t = np.zeros((2, H, W))
    mask = np.zeros((num_classes, H, W), dtype=bool)
    counts = np.zeros(num_classes, dtype=np.int64)
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]

    for obj in gts:
        plane = class_index[obj.class_id] if class_index is not None else obj.class_id
        if not (0 <= plane < num_classes):
            raise InvalidInput(f"class {obj.class_id} maps outside {num_classes} planes")
        box = _clip_box(obj.box, image)
        if box.w <= 0 or box.h <= 0:
            raise InvalidInput(f"object {obj.box} has zero area inside the image")
        cx, cy = box.center
        fx, fy = cx / stride, cy / stride
        ix = min(int(math.floor(fx)), W - 1)
        iy = min(int(math.floor(fy)), H - 1)

        sigma = gaussian_sigma(box.h, box.w, stride, min_sigma, sigma_divisor)
        r = int(math.ceil(3 * sigma))
        y0, y1 = max(0, iy - r), min(H, iy + r + 1)
        x0, x1 = max(0, ix - r), min(W, ix + r + 1)
        d2 = (rows[y0:y1] - iy) ** 2 + (cols[:, x0:x1] - ix) ** 2
        g = np.exp(-d2 / (2 * sigma * sigma))
        np.maximum(y[plane, y0:y1, x0:x1], g, out=y[plane, y0:y1, x0:x1])
        y[plane, iy, ix] = 1.0

        mask[plane, iy, ix] = True
        counts[plane] += 1
        scale_t[:, iy, ix] = (math.log(box.h), math.log(box.w))
        offset_t[:, iy, ix] = (fy - iy, fx - ix)

    return TargetMaps(y, scale_t, offset_t, mask, counts, num_classes, float(stride))


def ideal_prediction(tgt: TargetMaps) -> HeatmapBatch:
    """The prediction a perfect head would emit for ``tgt``."""
    return HeatmapBatch(tgt.y.copy(), tgt.scale_targets.copy(), tgt.offset_targets.copy(), tgt.stride)


def _check_shapes(pred: HeatmapBatch, tgt: TargetMaps) -> None:
    if pred.centers.shape != tgt.y.shape:
        raise ShapeMismatch(f"prediction {pred.centers.shape} vs target {tgt.y.shape}")
    if tgt.positive_mask.shape != tgt.y.shape or len(tgt.counts) != tgt.num_classes:
        raise ShapeMismatch("target maps are internally inconsistent")
    if tgt.num_classes != tgt.y.shape[0]:
        raise ShapeMismatch("num_classes does not match the target plane count")


def _class_term(p_raw: np.ndarray, y: np.ndarray, pos: np.ndarray, k: int, cfg: LossConfig) -> float:
    p = np.clip(p_raw, cfg.eps, 1.0 - cfg.eps)
    pos_terms = -((1.0 - p[pos]) ** cfg.gamma) * np.log(p[pos])
    neg = ~pos
    neg_terms = -((1.0 - y[neg]) ** cfg.beta) * (p[neg] ** cfg.gamma) * np.log1p(-p[neg])
    # fsum makes the plane sum independent of summation order
    total = math.fsum(pos_terms.tolist()) + math.fsum(neg_terms.tolist())
    return total / max(int(k), 1)


def center_loss(
    pred: HeatmapBatch,
    tgt: TargetMaps,
    cfg: LossConfig = LossConfig(),
    jobs: int = 1,
) -> tuple[float, list[float]]:
    """Per-class-normalized penalty-reduced focal loss on the center heatmaps.

    Returns ``(total, per_class)`` where ``per_class[c]`` is class ``c``'s
    summed focal term divided by ``max(K_c, 1)`` and ``total`` is their mean
    over all ``C`` planes. Classes absent from the batch still contribute
    their background term.
    """
    _check_shapes(pred, tgt)
    args = [
        (pred.centers[c], tgt.y[c], tgt.positive_mask[c], int(tgt.counts[c]), cfg)
        for c in range(tgt.num_classes)
    ]
    if jobs > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_class = list(pool.map(lambda a: _class_term(*a), args))
    else:
        per_class = [_class_term(*a) for a in args]
    return math.fsum(per_class) / tgt.num_classes, per_class


def center_loss_grad(pred: HeatmapBatch, tgt: TargetMaps, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic d(total center loss)/d(pred.centers). Zero where clamped."""
    _check_shapes(pred, tgt)
    p_raw = pred.centers
    p = np.clip(p_raw, cfg.eps, 1.0 - cfg.eps)
    g, b = cfg.gamma, cfg.beta
    # d/dp of -(1-p)^g log p  and  -(1-y)^b p^g log(1-p)
    if g > 0:
        d_pos = g * (1.0 - p) ** (g - 1.0) * np.log(p) - (1.0 - p) ** g / p
        d_neg = -((1.0 - tgt.y) ** b) * (g * p ** (g - 1.0) * np.log1p(-p) - p ** g / (1.0 - p))
    else:
        d_pos = -1.0 / p
        d_neg = (1.0 - tgt.y) ** b / (1.0 - p)
    grad = np.where(tgt.positive_mask, d_pos, d_neg)
    norm = 1.0 / (tgt.num_classes * np.maximum(tgt.counts, 1).astype(float))
    grad = grad * norm[:, None, None]
    inside = (p_raw > cfg.eps) & (p_raw < 1.0 - cfg.eps)
    return np.where(inside, grad, 0.0)


def scale_offset_loss(pred: HeatmapBatch, tgt: TargetMaps) -> tuple[float, float]:
    """Class-agnostic L1 losses at positive cells, averaged over those cells."""
    _check_shapes(pred, tgt)
    if pred.scales.shape != tgt.scale_targets.shape or pred.offsets.shape != tgt.offset_targets.shape:
        raise ShapeMismatch("scale/offset maps do not match targets")
    mask = tgt.positive_mask.any(axis=0)
    n = int(mask.sum())
    if n == 0:
        return 0.0, 0.0
    scale = math.fsum(np.abs(pred.scales[:, mask] - tgt.scale_targets[:, mask]).ravel().tolist()) / n
    offset = math.fsum(np.abs(pred.offsets[:, mask] - tgt.offset_targets[:, mask]).ravel().tolist()) / n
    return scale, offset


def combined_loss(pred: HeatmapBatch, tgt: TargetMaps, cfg: LossConfig = LossConfig()) -> float:
    wc, ws, wo = cfg.weights
    center, _ = center_loss(pred, tgt, cfg)
    scale, offset = scale_offset_loss(pred, tgt)
    return wc * center + ws * scale + wo * offset


def _local_peaks(plane: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, 1, mode="constant", constant_values=-np.inf)
    H, W = plane.shape
    neigh = np.max(
        np.stack([padded[dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)]),
        axis=0,
    )
    return plane >= neigh


def decode_peaks(pred: HeatmapBatch, cfg: DecodeConfig = DecodeConfig()) -> list[DecodedPeak]:
    """Top-k local maxima (3x3, ties kept) scoring at least the threshold."""
    stride = cfg.stride if cfg.stride is not None else pred.stride
    found = []
    for c in range(pred.num_classes):
        plane = pred.centers[c]
        hits = _local_peaks(plane) & (plane >= cfg.score_threshold)
        for iy, ix in zip(*np.nonzero(hits)):
            found.append((float(plane[iy, ix]), c, int(iy), int(ix)))
    found.sort(key=lambda f: (-f[0], f[1], f[2], f[3]))
    peaks = []
    for score, c, iy, ix in found[: cfg.top_k]:
        cy = (iy + float(pred.offsets[0, iy, ix])) * stride
        cx = (ix + float(pred.offsets[1, iy, ix])) * stride
        h = math.exp(float(pred.scales[0, iy, ix]))
        w = math.exp(float(pred.scales[1, iy, ix]))
        peaks.append(DecodedPeak(c, (iy, ix), (cx, cy), (w, h), score))
    return peaks


def decode(
    pred: HeatmapBatch,
    cfg: DecodeConfig = DecodeConfig(),
    image_id: ImageId = 0,
    class_ids: Optional[Sequence[int]] = None,
) -> list[Detection]:
    """Turn heatmap peaks into detections, optionally followed by class-wise NMS."""
    dets = []
    for pk in decode_peaks(pred, cfg):
        (cx, cy), (w, h) = pk.center, pk.extent
        cls = class_ids[pk.class_index] if class_ids is not None else pk.class_index
        score = min(1.0, max(0.0, pk.score))
        dets.append(Detection(image_id, cls, BoundingBox(cx - w / 2, cy - h / 2, w, h), score))
    if cfg.nms_iou is not None:
        dets = nms(dets, cfg.nms_iou)
    return dets


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy class-wise suppression; a box is dropped when IoU > iou_thresh
    with an already kept box of the same class. Output is in score order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(k.class_id != d.class_id or iou(k.box, d.box) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def scene_from_dict(data: dict, source: str = "<memory>") -> SyntheticScene:
    try:
        image = ImageInfo(data.get("image_id", 0), int(data["width"]), int(data["height"]))
        objects = tuple(
            GroundTruthObject(image.image_id, int(o["class"]), BoundingBox.from_list(o["bbox"]))
            for o in data.get("objects", [])
        )
        return SyntheticScene(image, int(data["stride"]), int(data["num_classes"]), objects)
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"{source}: bad synthetic scene ({exc})") from None


def scene_to_dict(scene: SyntheticScene) -> dict:
    return {
        "image_id": scene.image.image_id,
        "width": scene.image.width,
        "height": scene.image.height,
        "stride": scene.stride,
        "num_classes": scene.num_classes,
        "objects": [{"class": o.class_id, "bbox": o.box.to_list()} for o in scene.objects],
    }


def load_scenes(path) -> list[SyntheticScene]:
    """Read a JSON file holding one scene object or a list of them."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    items = data if isinstance(data, list) else [data]
    return [scene_from_dict(d, str(path)) for d in items]


def encode_scene(scene: SyntheticScene) -> TargetMaps:
    return encode_targets(scene.objects, scene.image, scene.stride, scene.num_classes)


__all__ = [
    "DecodeConfig",
    "DecodedPeak",
    "HeatmapBatch",
    "LossConfig",
    "SyntheticScene",
    "TargetMaps",
    "center_loss",
    "center_loss_grad",
    "combined_loss",
    "decode",
    "decode_peaks",
    "encode_scene",
    "encode_targets",
    "gaussian_sigma",
    "ideal_prediction",
    "load_scenes",
    "nms",
    "scale_offset_loss",
    "scene_from_dict",
    "scene_to_dict",
]
