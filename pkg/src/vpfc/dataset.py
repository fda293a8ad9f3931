"""Head traces, frame stores, windowing, user splits.

Trace CSV (UTF-8, LF, header required)::

    video_id,user_id,timestamp_s,frame_index,q0,q1,q2,q3

Frame store directory: ``manifest.txt`` with ``width=``, ``height=``,
``channels=``, ``count=`` lines plus ``frame_000000.bin`` … holding raw
row-major interleaved uint8 samples.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .errors import (
    DataError,
    InvalidWindowConfig,
    NonMonotonicTimestamps,
    ParseError,
    TooFewUsers,
    TraceTooShort,
    ZeroNormQuaternion,
)

TRACE_HEADER = ["video_id", "user_id", "timestamp_s", "frame_index", "q0", "q1", "q2", "q3"]


@dataclass
class HeadTrace:
    video_id: str
    user_id: str
    timestamps: np.ndarray
    frame_index: np.ndarray
    orientations: np.ndarray  # (N, 4) unit canonical

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.orientations = np.asarray(self.orientations, dtype=np.float64).reshape(-1, 4)

    def __len__(self):
        return len(self.timestamps)

    def take(self, idx) -> "HeadTrace":
        return HeadTrace(self.video_id, self.user_id, self.timestamps[idx], self.frame_index[idx],
                         self.orientations[idx])


@dataclass
class FrameStore:
    video_id: str
    frames: np.ndarray  # (count, H, W, C) in [0, 1]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 3:
            self.frames = self.frames[..., None]
        if self.width != 2 * self.height:
            raise DataError(f"equirectangular frames need width = 2*height, got {self.width}x{self.height}")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise DataError("frame intensities must lie in [0, 1]")

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def channels(self):
        return self.frames.shape[3]

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class WindowSample:
    video_id: str
    user_id: str
    start: int
    input_frames: np.ndarray  # (n,)
    input_orientations: np.ndarray  # (n, 4)
    reduce_mask: np.ndarray  # (n,) True = kept
    target_orientations: np.ndarray  # (T, 4)
    target_frames: np.ndarray = field(default=None)

    @property
    def n(self):
        return len(self.input_frames)

    @property
    def horizon(self):
        return len(self.target_orientations)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fr}")


# -- axis remap ---------------------------------------------------------------

def parse_axis_map(spec: str = "w,x,y,z"):
    """Parse ``quat_axis_map`` like ``"w,-y,x,z"`` into (source indices, signs).

    Output component ``i`` is ``sign_i * input[source_i]``.
    """
    names = {"w": 0, "x": 1, "y": 2, "z": 3}
    tokens = [t.strip() for t in spec.split(",")]
    if len(tokens) != 4:
        raise ValueError(f"axis map needs 4 comma-separated entries: {spec!r}")
    src, signs = [], []
    for tok in tokens:
        sign = -1.0 if tok.startswith("-") else 1.0
        name = tok.lstrip("+-")
        if name not in names:
            raise ValueError(f"unknown axis {tok!r} in {spec!r}")
        src.append(names[name])
        signs.append(sign)
    if sorted(src) != [0, 1, 2, 3]:
        raise ValueError(f"axis map must be a permutation: {spec!r}")
    return np.array(src), np.array(signs)


def apply_axis_map(q, spec="w,x,y,z"):
    src, signs = parse_axis_map(spec)
    return np.asarray(q)[..., src] * signs


# -- trace IO -----------------------------------------------------------------

def _read_rows(path):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file, header required") from None
        if [h.strip() for h in header] != TRACE_HEADER:
            raise ParseError(path, 1, f"header must be {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise ParseError(path, lineno, f"expected {len(TRACE_HEADER)} fields, got {len(row)}")
            try:
                ts = float(row[2])
                fi = int(row[3])
                q = [float(v) for v in row[4:8]]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in [ts, *q]):
                raise ParseError(path, lineno, "non-finite value")
            if fi < 0:
                raise ParseError(path, lineno, "frame_index must be >= 0")
            yield lineno, row[0], row[1], ts, fi, q


def _build_trace(path, video_id, user_id, rows, axis_map):
    ts = np.array([r[2] for r in rows])
    fi = np.array([r[3] for r in rows], dtype=np.int64)
    q = apply_axis_map(np.array([r[4] for r in rows], dtype=np.float64).reshape(-1, 4), axis_map)
    bad = np.nonzero(np.diff(ts) <= 0)[0]
    if bad.size:
        raise NonMonotonicTimestamps(f"{path}:{rows[bad[0] + 1][0]}: timestamps must strictly increase")
    bad = np.nonzero(np.diff(fi) < 0)[0]
    if bad.size:
        raise ParseError(path, rows[bad[0] + 1][0], "frame_index must be nondecreasing")
    norms = np.linalg.norm(q, axis=1)
    bad = np.nonzero(norms <= geometry.NORM_EPS)[0]
    if bad.size:
        raise ZeroNormQuaternion(f"{path}:{rows[bad[0]][0]}: zero-norm quaternion")
    return HeadTrace(video_id, user_id, ts, fi, geometry.normalize(q))


def load_traces(path, axis_map="w,x,y,z") -> list[HeadTrace]:
    """All (video, user) traces in a CSV, in first-appearance order."""
    groups: dict[tuple[str, str], list] = {}
    for lineno, vid, uid, ts, fi, q in _read_rows(path):
        groups.setdefault((vid, uid), []).append((lineno, None, ts, fi, q))
    return [_build_trace(path, vid, uid, rows, axis_map) for (vid, uid), rows in groups.items()]


def load_trace(path, axis_map="w,x,y,z") -> HeadTrace:
    traces = load_traces(path, axis_map)
    if len(traces) != 1:
        raise DataError(f"{path}: expected exactly one (video_id, user_id) trace, found {len(traces)}")
    return traces[0]


def write_traces(traces, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for tr in traces:
            for ts, fi, q in zip(tr.timestamps, tr.frame_index, tr.orientations):
                writer.writerow([tr.video_id, tr.user_id, repr(float(ts)), int(fi), *(repr(float(v)) for v in q)])


def write_trace(trace, path):
    write_traces([trace], path)


# -- frame store IO -----------------------------------------------------------

def save_frame_store(store: FrameStore, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.txt").write_text(
        f"width={store.width}\nheight={store.height}\nchannels={store.channels}\ncount={len(store)}\n"
        f"video_id={store.video_id}\n",
        encoding="utf-8",
    )
    quant = np.rint(store.frames * 255.0).astype(np.uint8)
    for i, frame in enumerate(quant):
        (d / f"frame_{i:06d}.bin").write_bytes(frame.tobytes())


def load_frame_store(directory, resize_to: tuple[int, int] | None = None) -> FrameStore:
    """Read a frame store; optionally area-resize every frame to ``(h, w)``."""
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"{d}: missing manifest.txt")
    meta = {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(manifest, lineno, "expected key=value")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    try:
        w, h, c, count = (int(meta[k]) for k in ("width", "height", "channels", "count"))
    except (KeyError, ValueError) as exc:
        raise ParseError(manifest, 0, f"bad or missing field: {exc}") from None
    frames = np.empty((count, h, w, c))
    for i in range(count):
        f = d / f"frame_{i:06d}.bin"
        if not f.exists():
            raise DataError(f"{d}: missing {f.name}")
        raw = np.frombuffer(f.read_bytes(), dtype=np.uint8)
        if raw.size != h * w * c:
            raise DataError(f"{f}: expected {h * w * c} bytes, got {raw.size}")
        frames[i] = raw.reshape(h, w, c) / 255.0
    if resize_to is not None and tuple(resize_to) != (h, w):
        frames = resize_area(frames, *resize_to)
    return FrameStore(meta.get("video_id", d.name), frames)


def _area_matrix(n_in, n_out):
    """(n_out, n_in) averaging weights from exact interval overlaps."""
    edges_in = np.arange(n_in + 1) / n_in
    edges_out = np.arange(n_out + 1) / n_out
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    m = np.clip(hi - lo, 0.0, None)
    return m / m.sum(axis=1, keepdims=True)


def resize_area(frames, out_h, out_w):
    """Area-average resize of ``(..., H, W, C)`` frames."""
    frames = np.asarray(frames, dtype=np.float64)
    rh = _area_matrix(frames.shape[-3], out_h)
    rw = _area_matrix(frames.shape[-2], out_w)
    return np.einsum("ah,...hwc,bw->...abc", rh, frames, rw, optimize=True)


# -- trace transforms ---------------------------------------------------------

def downsample(trace: HeadTrace, keep_every: int) -> HeadTrace:
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    return trace.take(slice(0, None, keep_every))


def resample(trace: HeadTrace, rate_hz: float) -> HeadTrace:
    """Uniform re-timing by slerp between the bracketing samples."""
    if not rate_hz > 0:
        raise ValueError(f"rate_hz must be positive, got {rate_hz}")
    if len(trace) < 2:
        raise TraceTooShort("resampling needs at least 2 samples")
    t0, t1 = trace.timestamps[0], trace.timestamps[-1]
    count = int(math.floor((t1 - t0) * rate_hz + 1e-9)) + 1
    times = t0 + np.arange(count) / rate_hz
    hi = np.clip(np.searchsorted(trace.timestamps, times, side="right"), 1, len(trace) - 1)
    lo = hi - 1
    ta, tb = trace.timestamps[lo], trace.timestamps[hi]
    frac = np.clip((times - ta) / (tb - ta), 0.0, 1.0)
    quats = geometry.slerp(trace.orientations[lo], trace.orientations[hi], frac)
    nearest = np.where(frac <= 0.5, lo, hi)
    return HeadTrace(trace.video_id, trace.user_id, times, trace.frame_index[nearest], quats)


def center_mask(n: int, k: int) -> np.ndarray:
    """Keep-mask of length ``n`` with ``k`` contiguous center samples removed."""
    mask = np.ones(n, dtype=bool)
    start = (n - k) // 2
    mask[start:start + k] = False
    return mask


def make_windows(trace: HeadTrace, n: int, horizon: int, k: int = 0, stride: int = 1) -> list[WindowSample]:
    """Sliding (n inputs → horizon targets) windows; partial windows dropped."""
    if n < 2 or horizon < 1 or not 0 <= k <= n - 2 or stride < 1:
        raise InvalidWindowConfig(f"invalid window config n={n} T={horizon} k={k} stride={stride}")
    mask = center_mask(n, k)
    out = []
    for s in range(0, len(trace) - n - horizon + 1, stride):
        out.append(WindowSample(
            trace.video_id, trace.user_id, s,
            trace.frame_index[s:s + n].copy(),
            trace.orientations[s:s + n].copy(),
            mask.copy(),
            trace.orientations[s + n:s + n + horizon].copy(),
            trace.frame_index[s + n:s + n + horizon].copy(),
        ))
    return out


def with_reduction(windows, k):
    """Copies of ``windows`` whose reduce_mask removes ``k`` center samples."""
    return [replace(w, reduce_mask=center_mask(w.n, k)) for w in windows]


def split_users(traces, spec: SplitSpec = SplitSpec()):
    """Per-video user partition into (train, val, test) trace lists.

    Users are shuffled with the split seed; val and test receive
    ``round(fraction * users)`` users (at least one each when the fraction is
    positive), train gets the rest.
    """
    rng = np.random.default_rng(spec.seed)
    by_video: dict[str, dict[str, list]] = {}
    for tr in traces:
        by_video.setdefault(tr.video_id, {}).setdefault(tr.user_id, []).append(tr)
    train, val, test = [], [], []
    for vid in sorted(by_video):
        users = sorted(by_video[vid])
        if len(users) < 3:
            raise TooFewUsers(f"video {vid!r} has {len(users)} users; need >= 3")
        users = [users[i] for i in rng.permutation(len(users))]
        n_val = _share(spec.val_fraction, len(users))
        n_test = _share(spec.test_fraction, len(users))
        n_train = len(users) - n_val - n_test
        if spec.train_fraction > 0 and n_train < 1:
            raise TooFewUsers(f"video {vid!r}: no users left for training")
        for bucket, chosen in ((train, users[:n_train]), (val, users[n_train:n_train + n_val]),
                               (test, users[n_train + n_val:])):
            for u in chosen:
                bucket.extend(by_video[vid][u])
    return train, val, test


def _share(fraction, total):
    if fraction <= 0:
        return 0
    return max(1, int(math.floor(fraction * total + 0.5)))
