"""Quaternion and viewing-sphere geometry.

Conventions
-----------
- Quaternions are ``(w, x, y, z)`` arrays of shape ``(..., 4)``.
- Right-handed world frame: +X is the reference forward direction, +Z is up.
- Gaze is ``(lat, lon)`` in degrees. ``lat = asin(v_z)``, ``lon = atan2(v_y, v_x)``
  where ``v`` is the forward vector rotated by the head quaternion.
- ``q`` and ``-q`` encode the same rotation. The canonical representative has
  ``w >= 0``; when ``w == 0`` the first nonzero of ``(x, y, z)`` is positive.

Everything here is vectorized: scalar inputs give scalar outputs, arrays give
arrays.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ZeroNorm

NORM_EPS = 1e-12
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# Sampling density of the viewport interior when computing tile coverage.
COVERAGE_SAMPLES = 64
# Per-edge density of the viewport boundary; thin edge slivers of a tile are
# otherwise missed between interior samples.
EDGE_SAMPLES = 1024


class GazeAngle(NamedTuple):
    lat: float | np.ndarray
    lon: float | np.ndarray


class Viewport(NamedTuple):
    center: GazeAngle
    h_fov: float
    v_fov: float


class TileGrid(NamedTuple):
    rows: int
    cols: int
    frame_width: int = 1920
    frame_height: int = 960

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols


def canonicalize(q):
    """Flip signs so each quaternion is the canonical member of its ±pair."""
    q = np.asarray(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    # Sign of the first nonzero component decides; all-zero rows keep sign +1.
    nz = flat != 0.0
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), 0)
    lead = flat[np.arange(flat.shape[0]), first]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return (flat * sign[:, None]).reshape(q.shape)


def normalize(q):
    """Unit-normalize and canonicalize. Raises ZeroNorm for ‖q‖ <= 1e-12."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= NORM_EPS):
        raise ZeroNorm(f"quaternion norm {float(np.min(norm)):.3g} <= {NORM_EPS}")
    return canonicalize(q / norm)


def quat_multiply(a, b):
    """Hamilton product ``a ⊗ b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q):
    """Rotation matrix (…, 3, 3) of a unit quaternion."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def forward_vector(q):
    """The +X axis rotated by ``q``; first column of the rotation matrix."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)], axis=-1
    )


def vector_to_gaze(v) -> GazeAngle:
    v = np.asarray(v, dtype=np.float64)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(v[..., 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    return GazeAngle(_maybe_scalar(lat), _maybe_scalar(lon))


def gaze_to_vector(g: GazeAngle):
    lat = np.radians(np.asarray(g.lat, dtype=np.float64))
    lon = np.radians(np.asarray(g.lon, dtype=np.float64))
    return np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def quat_to_gaze(q) -> GazeAngle:
    """Gaze direction (lat, lon in degrees) of a unit head quaternion."""
    return vector_to_gaze(forward_vector(q))


def gaze_to_quat(g: GazeAngle):
    """Zero-roll quaternion ``yaw(lon about +Z) ⊗ pitch(-lat about +Y)``."""
    half_lat = np.radians(np.asarray(g.lat, dtype=np.float64)) / 2.0
    half_lon = np.radians(np.asarray(g.lon, dtype=np.float64)) / 2.0
    cy, sy = np.cos(half_lon), np.sin(half_lon)
    cp, sp = np.cos(half_lat), np.sin(half_lat)
    # Expanded product of (cy, 0, 0, sy) ⊗ (cp, 0, -sp, 0).
    q = np.stack([cy * cp, sy * sp, -cy * sp, sy * cp], axis=-1)
    return normalize(q)


def angle_error(actual: GazeAngle, predicted: GazeAngle):
    """Great-circle angle in degrees between two gaze directions.

    ``arccos(sin x sin x' + cos x cos x' cos|y - y'|)`` with ``x`` the latitude
    and ``y`` the longitude; the arccos argument is clamped to [-1, 1].
    """
    x = np.radians(np.asarray(actual.lat, dtype=np.float64))
    xh = np.radians(np.asarray(predicted.lat, dtype=np.float64))
    dy = np.radians(np.abs(np.asarray(actual.lon, dtype=np.float64) - np.asarray(predicted.lon, dtype=np.float64)))
    arg = np.sin(x) * np.sin(xh) + np.cos(x) * np.cos(xh) * np.cos(dy)
    return _maybe_scalar(np.degrees(np.arccos(np.clip(arg, -1.0, 1.0))))


def slerp(a, b, t):
    """Shortest-path spherical interpolation between unit quaternions.

    ``t`` may be a scalar or broadcast against the leading dims of ``a``/``b``.
    Falls back to normalized lerp when the quaternions are nearly parallel.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)[..., None]
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    near = dot > 1.0 - 1e-6
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.where(near, 1.0, np.sin(theta))
    wa = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / sin_theta)
    wb = np.where(near, t, np.sin(t * theta) / sin_theta)
    return normalize(wa * a + wb * b)


def tiles_covered(viewport: Viewport, grid: TileGrid, samples: int = COVERAGE_SAMPLES,
                  edge_samples: int = EDGE_SAMPLES) -> frozenset:
    """Row-major indices of equirectangular tiles touched by the viewport.

    The viewport is sampled on a ``samples × samples`` grid of (azimuth,
    elevation) offsets in its local frame plus ``edge_samples`` points along
    each of its four edges. Each sample is rotated into the world by the
    viewport's zero-roll orientation and mapped to its nearest pixel on the
    ``frame_width × frame_height`` canvas.
    """
    h = np.radians(min(float(viewport.h_fov), 360.0)) / 2.0
    v = np.radians(min(float(viewport.v_fov), 180.0)) / 2.0
    az, el = np.meshgrid(np.linspace(-h, h, samples), np.linspace(-v, v, samples), indexing="ij")
    az, el = az.ravel(), el.ravel()
    if edge_samples:
        ea = np.linspace(-h, h, edge_samples)
        ee = np.linspace(-v, v, edge_samples)
        az = np.concatenate([az, ea, ea, np.full_like(ee, -h), np.full_like(ee, h)])
        el = np.concatenate([el, np.full_like(ea, -v), np.full_like(ea, v), ee, ee])
    local = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    rot = quat_to_matrix(gaze_to_quat(viewport.center))
    return frozenset(np.unique(_tile_index(local @ rot.T, grid)).tolist())


def _tile_index(dirs, grid: TileGrid):
    """Tile index of unit direction vectors on the equirectangular canvas."""
    W, H = grid.frame_width, grid.frame_height
    lat = np.degrees(np.arcsin(np.clip(dirs[:, 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(dirs[:, 1], dirs[:, 0]))
    px = np.rint((lon + 180.0) / 360.0 * W).astype(np.int64) % W
    py = np.clip(np.rint((90.0 - lat) / 180.0 * H).astype(np.int64), 0, H - 1)
    col = px * grid.cols // W
    row = py * grid.rows // H
    return row * grid.cols + col


def _maybe_scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x
