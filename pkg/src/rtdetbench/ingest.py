"""Loaders for COCO-style annotations, flat detection lists and latency logs."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .core import BoundingBox, ClassId, Detection, GroundTruthObject, ImageId, ImageInfo
from .errors import (
    EmptyLog,
    InputError,
    InvalidGeometry,
    MalformedFile,
    NonPositiveLatency,
    SchemaViolation,
    ScoreOutOfRange,
    UnknownClass,
    UnknownImage,
)


@dataclass(frozen=True)
class DatasetBundle:
    images: tuple[ImageInfo, ...]
    ground_truth: tuple[GroundTruthObject, ...]
    class_map: tuple[ClassId, ...]

    def __post_init__(self) -> None:
        image_ids = {im.image_id for im in self.images}
        if len(image_ids) != len(self.images):
            raise SchemaViolation("duplicate image ids")
        class_ids = {c.id for c in self.class_map}
        if len(class_ids) != len(self.class_map):
            raise SchemaViolation("duplicate category ids")
        for gt in self.ground_truth:
            if gt.image_id not in image_ids:
                raise UnknownImage(f"annotation references unknown image {gt.image_id!r}")
            if gt.class_id not in class_ids:
                raise UnknownClass(f"annotation references undeclared category {gt.class_id!r}")

    def class_name(self, class_id: int) -> str:
        for c in self.class_map:
            if c.id == class_id:
                return c.name
        raise UnknownClass(f"unknown category {class_id!r}")


@dataclass(frozen=True)
class ThroughputStats:
    per_frame_ms: tuple[float, ...]
    fps_mean: float
    fps_p99: float

    @classmethod
    def from_samples(cls, samples: Iterable[float]) -> "ThroughputStats":
        values = tuple(float(s) for s in samples)
        if not values:
            raise EmptyLog("latency log has no samples")
        for v in values:
            if not math.isfinite(v) or v <= 0:
                raise NonPositiveLatency(f"latency sample {v} is not a positive finite value")
        mean_ms = math.fsum(values) / len(values)
        p99_ms = float(np.percentile(np.asarray(values), 99))
        return cls(per_frame_ms=values, fps_mean=1000.0 / mean_ms, fps_p99=1000.0 / p99_ms)

    def to_dict(self) -> dict:
        return {
            "frames": len(self.per_frame_ms),
            "mean_ms": math.fsum(self.per_frame_ms) / len(self.per_frame_ms),
            "fps_mean": self.fps_mean,
            "fps_p99": self.fps_p99,
        }


@dataclass(frozen=True)
class DetectionRun:
    run_name: str
    detections: tuple[Detection, ...]
    throughput: Optional[ThroughputStats] = None


@dataclass(frozen=True)
class DatasetSummary:
    image_count: int
    object_count: int
    per_class_counts: dict[str, int] = field(default_factory=dict)
    resolution_modes: list[tuple[int, int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "image_count": self.image_count,
            "object_count": self.object_count,
            "per_class_counts": dict(self.per_class_counts),
            "resolution_modes": [list(m) for m in self.resolution_modes],
        }


def _image_sort_key(image_id: ImageId) -> tuple:
    # ints before strings so mixed id types still sort deterministically
    return (isinstance(image_id, str), image_id)


def sort_detections(dets: Sequence[Detection]) -> tuple[Detection, ...]:
    """Stable sort by (image id, descending score)."""
    return tuple(sorted(dets, key=lambda d: (_image_sort_key(d.image_id), -d.score)))


def _read_json(path: Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFile(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from exc


def _require(record: dict, key: str, where: str) -> Any:
    if not isinstance(record, dict):
        raise SchemaViolation(f"{where}: expected an object, got {type(record).__name__}")
    if key not in record:
        raise SchemaViolation(f"{where}: missing required field {key!r}")
    return record[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}: expected a number, got {value!r}")
    return float(value)


def _image_id(value: Any, where: str) -> ImageId:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise SchemaViolation(f"{where}: image id must be an integer or string")
    return value


def _bbox(value: Any, where: str) -> BoundingBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise SchemaViolation(f"{where}: bbox must be a list [x, y, w, h]")
    nums = [_number(v, where) for v in value]
    try:
        return BoundingBox(*nums)
    except InvalidGeometry as exc:
        raise InvalidGeometry(f"{where}: {exc}") from None


def bundle_from_dict(data: Any, source: str = "<memory>") -> DatasetBundle:
    if not isinstance(data, dict):
        raise SchemaViolation(f"{source}: top level must be an object")
    for key in ("images", "categories"):
        if not isinstance(_require(data, key, source), list):
            raise SchemaViolation(f"{source}: {key!r} must be a list")
    annotations = data.get("annotations", [])
    if not isinstance(annotations, list):
        raise SchemaViolation(f"{source}: 'annotations' must be a list")

    classes = []
    for i, cat in enumerate(data["categories"]):
        where = f"{source}: categories[{i}]"
        cid = _require(cat, "id", where)
        name = _require(cat, "name", where)
        if isinstance(cid, bool) or not isinstance(cid, int) or not isinstance(name, str):
            raise SchemaViolation(f"{where}: id must be an integer and name a string")
        classes.append(ClassId(cid, name))

    images = []
    for i, im in enumerate(data["images"]):
        where = f"{source}: images[{i}]"
        iid = _image_id(_require(im, "id", where), where)
        width = _number(_require(im, "width", where), where)
        height = _number(_require(im, "height", where), where)
        try:
            images.append(ImageInfo(iid, int(width), int(height)))
        except InvalidGeometry as exc:
            raise InvalidGeometry(f"{where}: {exc}") from None

    image_ids = {im.image_id for im in images}
    class_ids = {c.id for c in classes}
    gts = []
    for i, ann in enumerate(annotations):
        where = f"{source}: annotations[{i}]"
        iid = _image_id(_require(ann, "image_id", where), where)
        cid = _require(ann, "category_id", where)
        box = _bbox(_require(ann, "bbox", where), where)
        if iid not in image_ids:
            raise UnknownImage(f"{where}: unknown image id {iid!r}")
        if cid not in class_ids:
            raise UnknownClass(f"{where}: undeclared category {cid!r}")
        ignore = bool(ann.get("ignore", ann.get("iscrowd", False)))
        gts.append(GroundTruthObject(iid, cid, box, ignore))

    return DatasetBundle(tuple(images), tuple(gts), tuple(classes))


def load_ground_truth(path) -> DatasetBundle:
    """Load a COCO-format annotation file. Unknown fields are ignored."""
    return bundle_from_dict(_read_json(Path(path)), str(path))


def run_from_records(
    records: Any,
    bundle: DatasetBundle,
    run_name: str = "run",
    source: str = "<memory>",
    throughput: Optional[ThroughputStats] = None,
) -> DetectionRun:
    if not isinstance(records, list):
        raise SchemaViolation(f"{source}: detections must be a list of records")
    image_ids = {im.image_id for im in bundle.images}
    class_ids = {c.id for c in bundle.class_map}
    dets = []
    for i, rec in enumerate(records):
        where = f"{source}: detections[{i}]"
        iid = _image_id(_require(rec, "image_id", where), where)
        cid = _require(rec, "category_id", where)
        box = _bbox(_require(rec, "bbox", where), where)
        score = _number(_require(rec, "score", where), where)
        if iid not in image_ids:
            raise UnknownImage(f"{where}: unknown image id {iid!r}")
        if cid not in class_ids:
            raise UnknownClass(f"{where}: undeclared category {cid!r}")
        if not (0.0 <= score <= 1.0):
            raise ScoreOutOfRange(f"{where}: score {score} outside [0, 1]")
        dets.append(Detection(iid, cid, box, score))
    return DetectionRun(run_name, sort_detections(dets), throughput)


def load_detections(path, bundle: DatasetBundle, run_name: Optional[str] = None) -> DetectionRun:
    """Load a flat detection list and validate it against ``bundle``.

    The file is either a JSON list of ``{image_id, category_id, bbox, score}``
    records or an object ``{"run_name": ..., "detections": [...]}``.
    """
    path = Path(path)
    data = _read_json(path)
    name = run_name or path.stem
    if isinstance(data, dict):
        name = run_name or data.get("run_name", name)
        data = _require(data, "detections", str(path))
    return run_from_records(data, bundle, name, str(path))


def parse_latency_lines(lines: Iterable[str], source: str = "<memory>") -> ThroughputStats:
    samples = []
    header_allowed = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedFile(f"{source}:{lineno}: invalid JSON record ({exc.msg})") from exc
            value = next((rec[k] for k in ("latency_ms", "ms", "latency") if k in rec), None)
            if value is None:
                raise MalformedFile(f"{source}:{lineno}: record has no latency_ms field")
            try:
                samples.append(float(value))
            except (TypeError, ValueError):
                raise MalformedFile(f"{source}:{lineno}: latency {value!r} is not numeric") from None
            header_allowed = False
            continue
        fields = line.replace(",", " ").replace(";", " ").split()
        if len(fields) not in (1, 2):
            raise MalformedFile(f"{source}:{lineno}: expected 'latency' or 'frame latency', got {line!r}")
        try:
            samples.append(float(fields[-1]))
        except ValueError:
            if header_allowed:
                header_allowed = False
                continue
            raise MalformedFile(f"{source}:{lineno}: latency {fields[-1]!r} is not numeric") from None
        header_allowed = False
    try:
        return ThroughputStats.from_samples(samples)
    except (EmptyLog, NonPositiveLatency) as exc:
        raise type(exc)(f"{source}: {exc}") from None


def load_latency_log(path) -> ThroughputStats:
    """Read per-frame latencies in milliseconds.

    Accepted lines: ``frame_id,latency_ms`` (comma or whitespace separated),
    a bare ``latency_ms`` column, or JSON records with a ``latency_ms`` key.
    Blank lines, ``#`` comments and one leading header row are skipped.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFile(f"{path}: cannot read file ({exc.strerror})") from exc
    return parse_latency_lines(text.splitlines(), str(path))


def summarize_dataset(bundle: DatasetBundle) -> DatasetSummary:
    names = {c.id: c.name for c in bundle.class_map}
    counts = Counter(names[g.class_id] for g in bundle.ground_truth)
    per_class = {c.name: counts.get(c.name, 0) for c in bundle.class_map}
    res = Counter((im.width, im.height) for im in bundle.images)
    modes = sorted(((w, h, n) for (w, h), n in res.items()), key=lambda m: (-m[2], m[0], m[1]))
    return DatasetSummary(
        image_count=len(bundle.images),
        object_count=len(bundle.ground_truth),
        per_class_counts=per_class,
        resolution_modes=modes,
    )


__all__ = [
    "DatasetBundle",
    "DatasetSummary",
    "DetectionRun",
    "InputError",
    "ThroughputStats",
    "bundle_from_dict",
    "load_detections",
    "load_ground_truth",
    "load_latency_log",
    "parse_latency_lines",
    "run_from_records",
    "sort_detections",
    "summarize_dataset",
]
