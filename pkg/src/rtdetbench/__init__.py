"""Latency-aware object-detection evaluation: COCO-style mAP, the RTOP
throughput-discounted KPI, and center/scale/offset head numerics."""

from .core import BoundingBox, ClassId, Detection, GroundTruthObject, ImageInfo, box_area, iou
from .ingest import (
    DatasetBundle,
    DatasetSummary,
    DetectionRun,
    ThroughputStats,
    load_detections,
    load_ground_truth,
    load_latency_log,
    summarize_dataset,
)
from .matching import ApSummary, EvalConfig, average_precision, evaluate, match_class_image, pr_curve
from .rtop import LeaderboardEntry, RtopConfig, RtopResult, rank_leaderboard, rtop, weight_curve

__version__ = "0.1.0"

__all__ = [
    "ApSummary",
    "BoundingBox",
    "ClassId",
    "DatasetBundle",
    "DatasetSummary",
    "Detection",
    "DetectionRun",
    "EvalConfig",
    "GroundTruthObject",
    "ImageInfo",
    "LeaderboardEntry",
    "RtopConfig",
    "RtopResult",
    "ThroughputStats",
    "__version__",
    "average_precision",
    "box_area",
    "evaluate",
    "iou",
    "load_detections",
    "load_ground_truth",
    "load_latency_log",
    "match_class_image",
    "pr_curve",
    "rank_leaderboard",
    "rtop",
    "summarize_dataset",
    "weight_curve",
]
