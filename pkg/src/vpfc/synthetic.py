"""Seeded content-driven stand-in data.

Each video shows a bright Gaussian blob travelling between random waypoints
on the equirectangular canvas. Every user's gaze tracks the blob with a
per-user lag plus isotropic angular noise, so the current frame carries
information about where the user will look ``lag`` seconds later.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .dataset import FrameStore, HeadTrace

# Waypoints stay inside this box so paths never cross the ±180° seam.
LON_RANGE = (-120.0, 120.0)
LAT_RANGE = (-40.0, 40.0)


@dataclass(frozen=True)
class SyntheticConfig:
    videos: int = 3
    users: int = 8
    duration_s: float = 60.0
    rate_hz: float = 5.0
    frame_h: int = 32
    blob_speed: float = 30.0  # deg/s along the path
    gaze_noise_deg: float = 5.0  # per-axis std of the tangent-plane offset
    lag_s: float = 1.0
    lag_jitter_s: float = 0.2  # per-user lag ~ U[lag_s - jitter, lag_s + jitter]
    blob_sigma_deg: float = 12.0
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("videos", "users", "duration_s", "rate_hz", "frame_h", "channels"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("blob_speed", "gaze_noise_deg", "lag_s", "lag_jitter_s", "blob_sigma_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lag_jitter_s > self.lag_s:
            raise ValueError("lag_jitter_s cannot exceed lag_s")


def _leg_length(a, b, pieces=64):
    """Arc length (deg) of the straight lat/lon segment from ``a`` to ``b``."""
    u = np.linspace(0.0, 1.0, pieces + 1)
    g = geometry.GazeAngle(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]))
    return float(np.sum(geometry.angle_error(geometry.GazeAngle(g.lat[:-1], g.lon[:-1]),
                                             geometry.GazeAngle(g.lat[1:], g.lon[1:]))))


def blob_path(rng, t_end, speed):
    """Callable ``t -> (lat, lon)``: eased legs between random waypoints.

    Times before 0 clamp to the start; ``speed == 0`` gives a stationary blob.
    """
    start = (rng.uniform(*LAT_RANGE), rng.uniform(*LON_RANGE))
    legs = [(0.0, start)]
    if speed > 0:
        while legs[-1][0] <= t_end:
            t, here = legs[-1]
            nxt = (rng.uniform(*LAT_RANGE), rng.uniform(*LON_RANGE))
            legs.append((t + max(_leg_length(here, nxt) / speed, 0.5), nxt))
    knots = np.array([t for t, _ in legs])
    pts = np.array([p for _, p in legs])

    def at(times):
        times = np.asarray(times, dtype=np.float64)
        if len(knots) == 1:
            return np.full(times.shape, pts[0, 0]), np.full(times.shape, pts[0, 1])
        seg = np.clip(np.searchsorted(knots, times, side="right") - 1, 0, len(knots) - 2)
        u = np.clip((times - knots[seg]) / (knots[seg + 1] - knots[seg]), 0.0, 1.0)
        ease = 0.5 - 0.5 * np.cos(np.pi * u)
        lat = pts[seg, 0] + ease * (pts[seg + 1, 0] - pts[seg, 0])
        lon = pts[seg, 1] + ease * (pts[seg + 1, 1] - pts[seg, 1])
        return lat, lon

    return at


def perturb_gaze(rng, lat, lon, noise_deg):
    """Move each direction by a 2-D Gaussian tangent offset (std ``noise_deg`` per axis)."""
    if noise_deg == 0:
        return np.asarray(lat, dtype=np.float64), np.asarray(lon, dtype=np.float64)
    offs = rng.normal(0.0, np.radians(noise_deg), size=(len(lat), 2))
    rho = np.hypot(offs[:, 0], offs[:, 1])
    phi = np.arctan2(offs[:, 1], offs[:, 0])
    local = np.stack([np.cos(rho), np.sin(rho) * np.cos(phi), np.sin(rho) * np.sin(phi)], axis=-1)
    rot = geometry.quat_to_matrix(geometry.gaze_to_quat(geometry.GazeAngle(lat, lon)))
    g = geometry.vector_to_gaze(np.einsum("nij,nj->ni", rot, local))
    return np.atleast_1d(g.lat), np.atleast_1d(g.lon)


def pixel_directions(height, width):
    """Unit vectors of equirectangular pixel centers, shape (H, W, 3)."""
    lat = 90.0 - (np.arange(height) + 0.5) * 180.0 / height
    lon = -180.0 + (np.arange(width) + 0.5) * 360.0 / width
    lat, lon = np.meshgrid(lat, lon, indexing="ij")
    return geometry.gaze_to_vector(geometry.GazeAngle(lat, lon))


def render_frames(rng, lat, lon, height, channels, sigma_deg):
    width = 2 * height
    dirs = pixel_directions(height, width)
    # Static low-contrast background so only the blob moves.
    fy, fx = rng.integers(1, 4, size=2)
    py, px = rng.uniform(0, 2 * np.pi, size=2)
    yy, xx = np.meshgrid(np.linspace(0, 2 * np.pi, height), np.linspace(0, 2 * np.pi, width), indexing="ij")
    background = 0.15 + 0.05 * np.sin(fy * yy + py) * np.cos(fx * xx + px)
    tint = rng.uniform(0.6, 1.0, size=channels)
    centers = geometry.gaze_to_vector(geometry.GazeAngle(lat, lon))  # (F, 3)
    cosd = np.clip(np.einsum("hwk,fk->fhw", dirs, centers), -1.0, 1.0)
    blob = np.exp(-0.5 * (np.degrees(np.arccos(cosd)) / sigma_deg) ** 2)
    frames = background[None, :, :, None] + 0.8 * blob[..., None] * tint
    return np.clip(frames, 0.0, 1.0)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()):
    """Returns ``(frame_stores, traces)`` with one frame per trace sample."""
    rng = np.random.default_rng(cfg.seed)
    count = int(round(cfg.duration_s * cfg.rate_hz))
    times = np.arange(count) / cfg.rate_hz
    stores, traces = [], []
    for v in range(cfg.videos):
        vid = f"video{v:02d}"
        vrng = np.random.default_rng(rng.integers(2**63))
        path = blob_path(vrng, times[-1], cfg.blob_speed)
        blat, blon = path(times)
        stores.append(FrameStore(vid, render_frames(vrng, blat, blon, cfg.frame_h, cfg.channels,
                                                    cfg.blob_sigma_deg)))
        for u in range(cfg.users):
            lag = cfg.lag_s + vrng.uniform(-cfg.lag_jitter_s, cfg.lag_jitter_s)
            glat, glon = path(times - lag)
            glat, glon = perturb_gaze(vrng, glat, glon, cfg.gaze_noise_deg)
            quats = geometry.gaze_to_quat(geometry.GazeAngle(glat, glon))
            traces.append(HeadTrace(vid, f"user{u:02d}", times.copy(), np.arange(count), quats))
    return stores, traces
