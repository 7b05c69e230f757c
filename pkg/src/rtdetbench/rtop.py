"""Real-time objective performance: a throughput-discounted accuracy KPI.

``rtop = p * b ** (min(fps / T, 1) - 1)``. Below the real-time rate ``T`` the
performance ``p`` is scaled down geometrically, reaching ``p / b`` at zero
throughput; at or above ``T`` it is left untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidConfig, InvalidInput


@dataclass(frozen=True)
class RtopConfig:
    T: float = 30.0
    b: float = 2.0

    def __post_init__(self) -> None:
        for name in ("T", "b"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise InvalidConfig(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class RtopResult:
    p: float
    fps: float
    phi: float
    w: float
    rtop: float

    def to_dict(self) -> dict:
        return {"p": self.p, "fps": self.fps, "phi": self.phi, "w": self.w, "rtop": self.rtop}


@dataclass(frozen=True)
class LeaderboardEntry:
    run_name: str
    p: float
    fps: float
    rtop: float


def _check_input(name: str, value: float) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidInput(f"{name} must be numeric, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise InvalidInput(f"{name} must be finite and non-negative, got {value}")
    return value


def frame_rate_ratio(fps: float, cfg: RtopConfig) -> float:
    return min(fps / cfg.T, 1.0)


def weight(fps: float, cfg: RtopConfig) -> float:
    phi = frame_rate_ratio(fps, cfg)
    # exact 1.0 at and above the threshold, independent of pow() rounding
    return 1.0 if phi >= 1.0 else cfg.b ** (phi - 1.0)


def rtop(p: float, fps: float, cfg: RtopConfig = RtopConfig()) -> RtopResult:
    p = _check_input("p", p)
    fps = _check_input("fps", fps)
    phi = frame_rate_ratio(fps, cfg)
    w = weight(fps, cfg)
    return RtopResult(p=p, fps=fps, phi=phi, w=w, rtop=p * w)


def weight_curve(cfg: RtopConfig, fps_samples: Iterable[float]) -> list[tuple[float, float]]:
    out = []
    for f in fps_samples:
        f = _check_input("fps", f)
        out.append((f, weight(f, cfg)))
    return out


def rank_leaderboard(
    entries: Sequence[tuple[str, float, float]],
    cfg: RtopConfig = RtopConfig(),
) -> list[LeaderboardEntry]:
    """Score ``(run_name, p, fps)`` triples and sort by descending RTOP.

    ``sorted`` is stable, so equal scores keep their input order.
    """
    scored = []
    for name, p, fps in entries:
        res = rtop(p, fps, cfg)
        scored.append(LeaderboardEntry(name, res.p, res.fps, res.rtop))
    return sorted(scored, key=lambda e: -e.rtop)


__all__ = [
    "LeaderboardEntry",
    "RtopConfig",
    "RtopResult",
    "frame_rate_ratio",
    "rank_leaderboard",
    "rtop",
    "weight",
    "weight_curve",
]


@dataclass(frozen=True)
class PublishedRow:
    dataset: str
    method: str
    map: float
    fps: float
    rtop: float


def published_rows() -> list[PublishedRow]:
    """Published traffic-detection results bundled with the package.

    Each row holds a model's mAP, throughput and the RTOP value printed
    alongside them (T=30, b=2), in percentage points.
    """
    import csv
    from importlib.resources import files

    text = files("rtdetbench").joinpath("data/traffic_benchmarks.csv").read_text(encoding="utf-8")
    return [
        PublishedRow(r["dataset"], r["method"], float(r["map"]), float(r["fps"]), float(r["rtop"]))
        for r in csv.DictReader(text.splitlines())
    ]


__all__ += ["PublishedRow", "published_rows"]
