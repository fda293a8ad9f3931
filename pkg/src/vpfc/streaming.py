"""Tile-prefetch simulation driven by any viewport predictor.

The trace is cut into consecutive prefetch segments of ``horizon`` frames.
At the start of each segment the predictor forecasts the next ``horizon``
orientations; the delivered tile set is the union of the tiles under each
predicted viewport widened by ``margin_deg`` on every side. Each frame of the
segment then scores the actual viewport's tiles against that delivered set.
Bandwidth is proportional to the delivered tile count.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .dataset import HeadTrace, make_windows
from .errors import TraceTooShort
from .geometry import TileGrid, Viewport


@dataclass(frozen=True)
class SimConfig:
    grid: TileGrid = TileGrid(4, 8)
    h_fov: float = 110.0
    v_fov: float = 90.0
    horizon: int = 1  # prefetch segment length in frames
    margin_deg: float = 0.0

    def __post_init__(self):
        if self.margin_deg < 0:
            raise ValueError("margin_deg must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (self.h_fov > 0 and self.v_fov > 0):
            raise ValueError("FoV must be positive")


@dataclass
class SimRecord:
    video_id: str
    user_id: str
    frame: int
    predicted_tiles: frozenset
    actual_tiles: frozenset
    hit_ratio: float
    delivered_fraction: float


@dataclass
class SimSummary:
    video_id: str
    mean_hit_ratio: float
    mean_delivered_fraction: float
    bandwidth_saving: float
    records: int = field(default=0)


def _tiles(gaze, h_fov, v_fov, grid):
    return geometry.tiles_covered(Viewport(gaze, h_fov, v_fov), grid)


def simulate(trace: HeadTrace, predictor, cfg: SimConfig, n: int, model_horizon: int | None = None):
    """Run the prefetch loop over one trace; returns ``(records, summary)``.

    ``predictor(windows) -> (B, T, 4)`` is called on windows of ``n`` inputs
    and ``model_horizon`` (default ``cfg.horizon``) targets.
    """
    model_horizon = cfg.horizon if model_horizon is None else model_horizon
    if cfg.horizon > model_horizon:
        raise ValueError(f"prefetch horizon {cfg.horizon} exceeds predictor horizon {model_horizon}")
    if len(trace) < n + model_horizon:
        raise TraceTooShort(f"trace of {len(trace)} samples is shorter than one window ({n}+{model_horizon})")
    windows = make_windows(trace, n, model_horizon, 0, stride=cfg.horizon)
    pred = np.asarray(predictor(windows))
    grid = cfg.grid
    h_pad = min(cfg.h_fov + 2 * cfg.margin_deg, 360.0)
    v_pad = min(cfg.v_fov + 2 * cfg.margin_deg, 180.0)
    records = []
    for w, q in zip(windows, pred):
        pg = geometry.quat_to_gaze(q[:cfg.horizon])
        delivered = frozenset().union(*(
            _tiles(geometry.GazeAngle(float(a), float(b)), h_pad, v_pad, grid)
            for a, b in zip(np.atleast_1d(pg.lat), np.atleast_1d(pg.lon))
        ))
        ag = geometry.quat_to_gaze(w.target_orientations[:cfg.horizon])
        for j, (a, b) in enumerate(zip(np.atleast_1d(ag.lat), np.atleast_1d(ag.lon))):
            actual = _tiles(geometry.GazeAngle(float(a), float(b)), cfg.h_fov, cfg.v_fov, grid)
            records.append(SimRecord(
                w.video_id, w.user_id, int(w.target_frames[j]), delivered, actual,
                len(actual & delivered) / len(actual), len(delivered) / grid.n_tiles,
            ))
    return records, summarize(records)[-1]


def _summary(video_id, recs):
    hit = float(np.mean([r.hit_ratio for r in recs]))
    frac = float(np.mean([r.delivered_fraction for r in recs]))
    return SimSummary(video_id, hit, frac, 1.0 - frac, len(recs))


def summarize(records) -> list[SimSummary]:
    """Per-video summaries in sorted video order, then an ``ALL`` row."""
    if not records:
        raise ValueError("no simulation records to summarize")
    by_video: dict[str, list] = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(r)
    out = [_summary(v, by_video[v]) for v in sorted(by_video)]
    out.append(_summary("ALL", records))
    return out


SUMMARY_HEADER = ["video_id", "mean_hit_ratio", "mean_delivered_fraction", "bandwidth_saving"]


def summary_report(records):
    """Human-readable text and CSV string for ``records``."""
    rows = summarize(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    lines = [f"{'video':<12} {'hit':>8} {'delivered':>10} {'saving':>8} {'frames':>7}"]
    for s in rows:
        w.writerow([s.video_id, repr(s.mean_hit_ratio), repr(s.mean_delivered_fraction), repr(s.bandwidth_saving)])
        lines.append(f"{s.video_id:<12} {s.mean_hit_ratio:8.4f} {s.mean_delivered_fraction:10.4f} "
                     f"{s.bandwidth_saving:8.4f} {s.records:7d}")
    return "\n".join(lines) + "\n", buf.getvalue()


def write_records_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "hit_ratio", "delivered_fraction"])
        for r in records:
            w.writerow([r.frame, repr(r.hit_ratio), repr(r.delivered_fraction)])


def write_summary_csv(records, path):
    _, text = summary_report(records)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
