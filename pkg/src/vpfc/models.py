"""Viewport predictors.

``ViewportPredictor`` is the CNN + stacked-LSTM network. Each input step is
``[frame features, orientation, missing flag]`` (or ``[orientation, missing
flag]`` without content); two LSTM layers read the ``n`` steps and one dense
layer maps the final hidden state to ``horizon`` quaternions. Static and
linear-regression baselines share the same ``predictor(windows) -> (B, T, 4)``
calling convention.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .dataset import FrameStore, WindowSample, resize_area
from .errors import GraphInconsistent, ShapeMismatch, TooFewPoints
from .nn import Conv2D, Dense, GlobalAvgPool, LSTM, ReLU, Sequential, seed_rng

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-8
QUAT_DIM = 4


@dataclass(frozen=True)
class FeatureExtractorConfig:
    conv_blocks: tuple = ((8, 3, 2), (16, 3, 2), (32, 3, 2))  # (out_channels, kernel, stride)
    fc_widths: tuple = (64, 64, 32)
    input_hw: tuple = (32, 64)
    # Fixed sin(lon), cos(lon), sin(lat) planes appended to the frame so that
    # global pooling keeps track of where content sits on the sphere.
    coord_channels: bool = True

    def __post_init__(self):
        if len(self.fc_widths) != 3:
            raise ValueError("feature extractor needs exactly 3 FC layers")
        if self.fc_widths[-1] < 1:
            raise ValueError("feature_dim must be >= 1")

    @property
    def feature_dim(self):
        return self.fc_widths[-1]


@dataclass(frozen=True)
class PredictorConfig:
    n_input_steps: int = 5
    horizon_T: int = 5
    lstm_layers: int = 2
    hidden_size: int = 256
    use_content: bool = True
    feature: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)

    def __post_init__(self):
        if min(self.n_input_steps, self.horizon_T, self.lstm_layers, self.hidden_size) < 1:
            raise ValueError("predictor sizes must be positive")

    @property
    def step_width(self):
        return (self.feature.feature_dim if self.use_content else 0) + QUAT_DIM + 1

    @property
    def output_dim(self):
        return QUAT_DIM * self.horizon_T


# -- frames -------------------------------------------------------------------

def coordinate_planes(height, width):
    lat = np.radians(90.0 - (np.arange(height) + 0.5) * 180.0 / height)
    lon = np.radians(-180.0 + (np.arange(width) + 0.5) * 360.0 / width)
    lat, lon = np.meshgrid(lat, lon, indexing="ij")
    return np.stack([np.sin(lon), np.cos(lon), np.sin(lat)])


def prepare_frames(frames, cfg: FeatureExtractorConfig):
    """``(F, H, W, C)`` intensities -> ``(F, C', h, w)`` network input."""
    frames = np.asarray(frames, dtype=np.float64)
    h, w = cfg.input_hw
    if frames.shape[1:3] != (h, w):
        frames = resize_area(frames, h, w)
    x = frames.transpose(0, 3, 1, 2)
    if cfg.coord_channels:
        planes = np.broadcast_to(coordinate_planes(h, w), (x.shape[0], 3, h, w))
        x = np.concatenate([x, planes], axis=1)
    return np.ascontiguousarray(x)


class FrameBank:
    """All videos' frames preprocessed once, addressed by (video_id, frame_index)."""

    def __init__(self, stores: list[FrameStore], cfg: FeatureExtractorConfig):
        self.cfg = cfg
        self.offsets = {}
        arrays = []
        pos = 0
        for st in stores:
            self.offsets[st.video_id] = (pos, len(st))
            arrays.append(prepare_frames(st.frames, cfg))
            pos += len(st)
        self.inputs = np.concatenate(arrays) if arrays else np.empty((0, 0, *cfg.input_hw))

    @property
    def channels(self):
        return self.inputs.shape[1]

    def ids(self, video_id, frame_index):
        start, count = self.offsets[video_id]
        frame_index = np.asarray(frame_index)
        if frame_index.size and (frame_index.min() < 0 or frame_index.max() >= count):
            raise ShapeMismatch(f"frame index out of range for {video_id!r} ({count} frames)")
        return start + frame_index


# -- network ------------------------------------------------------------------

class FeatureExtractor(Sequential):
    """conv blocks (stride, ReLU) -> global average pool -> 3 dense layers."""

    def __init__(self, cfg: FeatureExtractorConfig, in_channels, rng):
        layers = []
        c = in_channels
        for i, (out_c, k, stride) in enumerate(cfg.conv_blocks):
            layers += [Conv2D(c, out_c, k, stride, k // 2, rng=rng, name=f"cnn.conv{i}"), ReLU()]
            c = out_c
        layers.append(GlobalAvgPool())
        for i, width in enumerate(cfg.fc_widths):
            layers.append(Dense(c, width, rng=rng, name=f"cnn.fc{i}"))
            if i < len(cfg.fc_widths) - 1:
                layers.append(ReLU())
            c = width
        super().__init__(*layers)
        self.cfg = cfg


def extract_features(frame, extractor: FeatureExtractor):
    """Feature vector of one ``H×W×C`` frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[:2] != tuple(extractor.cfg.input_hw):
        raise ShapeMismatch(f"frame must be {extractor.cfg.input_hw} x C, got {frame.shape}")
    out = extractor.forward(prepare_frames(frame[None], extractor.cfg))
    for layer in extractor.layers:
        layer._cache = None
    return out[0]


@dataclass
class WindowBatch:
    video_ids: list
    input_frames: np.ndarray  # (B, n)
    inputs: np.ndarray  # (B, n, 4) canonical
    mask: np.ndarray  # (B, n) True = kept
    targets: np.ndarray  # (B, T, 4)

    @classmethod
    def from_windows(cls, windows: list[WindowSample]):
        return cls(
            [w.video_id for w in windows],
            np.stack([w.input_frames for w in windows]),
            geometry.canonicalize(np.stack([w.input_orientations for w in windows])),
            np.stack([w.reduce_mask for w in windows]).astype(bool),
            np.stack([w.target_orientations for w in windows]),
        )

    def __len__(self):
        return len(self.video_ids)


class ViewportPredictor:
    def __init__(self, cfg: PredictorConfig, in_channels=6, seed=0):
        rng = seed_rng(seed)
        self.cfg = cfg
        self.in_channels = in_channels
        self.extractor = FeatureExtractor(cfg.feature, in_channels, rng) if cfg.use_content else None
        self.lstms = []
        width = cfg.step_width
        for i in range(cfg.lstm_layers):
            self.lstms.append(LSTM(width, cfg.hidden_size, rng=rng, name=f"lstm{i}"))
            width = cfg.hidden_size
        self.head = Dense(cfg.hidden_size, cfg.output_dim, rng=rng, name="head")
        self._cache = None

    def parameters(self):
        ps = self.extractor.parameters() if self.extractor else []
        for lstm in self.lstms:
            ps += lstm.parameters()
        return ps + self.head.parameters()

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # step inputs ----------------------------------------------------------

    def _step_inputs(self, batch: WindowBatch, features):
        """``features`` is ``(B, n, feature_dim)`` or None for position-only."""
        keep = batch.mask[..., None].astype(np.float64)
        parts = []
        if self.cfg.use_content:
            parts.append(features * keep)
        parts.append(batch.inputs * keep)
        parts.append(1.0 - keep)
        return np.concatenate(parts, axis=-1)

    def _check(self, batch):
        if batch.inputs.shape[1] != self.cfg.n_input_steps:
            raise ShapeMismatch(f"model expects n={self.cfg.n_input_steps}, window has {batch.inputs.shape[1]}")

    def forward(self, batch: WindowBatch, bank: FrameBank | None = None, features=None):
        """Raw ``(B, 4T)`` outputs. Pass either a frame bank or precomputed ``features``."""
        self._check(batch)
        uniq = inv = None
        if self.cfg.use_content and features is None:
            if bank is None:
                raise ShapeMismatch("content model needs a frame bank or frame features")
            ids = np.stack([bank.ids(v, f) for v, f in zip(batch.video_ids, batch.input_frames)])
            uniq, inv = np.unique(ids[batch.mask], return_inverse=True)
            uniq_feats = self.extractor.forward(bank.inputs[uniq])
            features = np.zeros((len(batch), self.cfg.n_input_steps, self.cfg.feature.feature_dim))
            features[batch.mask] = uniq_feats[inv]
        x = self._step_inputs(batch, features)
        for lstm in self.lstms:
            x = lstm.forward(x)
        self._cache = (batch, uniq, inv, x.shape)
        return self.head.forward(x[:, -1])

    def backward(self, dout):
        if self._cache is None:
            raise GraphInconsistent("ViewportPredictor.backward() without a matching forward()")
        batch, uniq, inv, hshape = self._cache
        self._cache = None
        dlast = self.head.backward(dout)
        dx = np.zeros(hshape)
        dx[:, -1] = dlast
        for lstm in reversed(self.lstms):
            dx = lstm.backward(dx)
        if self.cfg.use_content:
            dfeat = dx[..., :self.cfg.feature.feature_dim]
            if uniq is not None:
                duniq = np.zeros((len(uniq), dfeat.shape[-1]))
                np.add.at(duniq, inv, dfeat[batch.mask])
                self.extractor.backward(duniq)
            return dfeat * batch.mask[..., None]
        return None

    def predict_batch(self, batch: WindowBatch, bank: FrameBank | None = None, features=None):
        """``(quats (B, T, 4), degenerate (B,) bool)``."""
        raw = self.forward(batch, bank, features)
        self._cache = None
        for layer in self._layers():
            layer._cache = None
        return quats_from_raw(raw, self.cfg.horizon_T)

    def _layers(self):
        layers = list(self.extractor.layers) if self.extractor else []
        return layers + list(self.lstms) + [self.head]


def quats_from_raw(raw, horizon):
    """Normalize each 4-tuple; near-zero tuples become identity and are flagged."""
    q = np.asarray(raw, dtype=np.float64).reshape(len(raw), horizon, QUAT_DIM)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    bad = norms[..., 0] < DEGENERATE_NORM
    safe = np.where(bad[..., None], geometry.IDENTITY, q / np.where(norms == 0, 1.0, norms))
    degenerate = bad.any(axis=1)
    if degenerate.any():
        log.warning("%d sample(s) produced degenerate quaternions; emitted identity", int(degenerate.sum()))
    return geometry.canonicalize(safe), degenerate


def predict(window: WindowSample, frame_features, model: ViewportPredictor):
    """Forecast ``T`` quaternions for one window from precomputed ``n×feature_dim`` features."""
    batch = WindowBatch.from_windows([window])
    feats = None
    if model.cfg.use_content:
        feats = np.asarray(frame_features, dtype=np.float64)
        if feats.shape != (model.cfg.n_input_steps, model.cfg.feature.feature_dim):
            raise ShapeMismatch(f"frame_features must be {(model.cfg.n_input_steps, model.cfg.feature.feature_dim)}")
        feats = feats[None]
    quats, _ = model.predict_batch(batch, features=feats)
    return quats[0]


def predict_position_only(window: WindowSample, model: ViewportPredictor):
    if model.cfg.use_content:
        raise ShapeMismatch("predict_position_only needs a model built with use_content=False")
    return predict(window, None, model)


# -- baselines ----------------------------------------------------------------

def _last_kept(window):
    idx = np.nonzero(window.reduce_mask)[0]
    return window.input_orientations[idx[-1]]


def predict_static(window: WindowSample, horizon: int | None = None):
    """Repeat the last observed orientation ``horizon`` times."""
    horizon = window.horizon if horizon is None else horizon
    return np.repeat(geometry.normalize(_last_kept(window))[None], horizon, axis=0)


def unwrap_degrees(lon):
    """Add multiples of 360 so consecutive longitudes differ by at most 180."""
    return np.degrees(np.unwrap(np.radians(np.asarray(lon, dtype=np.float64))))


def predict_linreg(window: WindowSample, horizon: int | None = None):
    """Least-squares lines through kept lat(t) and unwrapped lon(t), extrapolated."""
    horizon = window.horizon if horizon is None else horizon
    idx = np.nonzero(window.reduce_mask)[0]
    if len(idx) < 2:
        raise TooFewPoints("linear regression needs >= 2 observed samples")
    g = geometry.quat_to_gaze(window.input_orientations[idx])
    lat = np.atleast_1d(g.lat)
    lon = unwrap_degrees(np.atleast_1d(g.lon))
    t = idx.astype(np.float64)
    future = window.n + np.arange(horizon, dtype=np.float64)
    lat_hat = np.polyval(np.polyfit(t, lat, 1), future)
    lon_hat = np.polyval(np.polyfit(t, lon, 1), future)
    lat_hat = np.clip(lat_hat, -90.0, 90.0)
    lon_hat = (lon_hat + 180.0) % 360.0 - 180.0
    return geometry.gaze_to_quat(geometry.GazeAngle(lat_hat, lon_hat))


class StaticPredictor:
    name = "static"

    def __call__(self, windows):
        return np.stack([predict_static(w) for w in windows])


class LinRegPredictor:
    name = "linreg"

    def __call__(self, windows):
        return np.stack([predict_linreg(w) for w in windows])


class OraclePredictor:
    """Returns the true targets; an upper bound for plumbing tests."""

    name = "oracle"

    def __call__(self, windows):
        return np.stack([geometry.normalize(w.target_orientations) for w in windows])


class NeuralPredictor:
    """Adapter giving a trained network the ``windows -> (B, T, 4)`` convention."""

    def __init__(self, model: ViewportPredictor, bank: FrameBank | None = None, batch_size=256, name=None):
        self.model = model
        self.bank = bank
        self.batch_size = batch_size
        self.name = name or ("content" if model.cfg.use_content else "position")
        self.degenerate = 0

    def __call__(self, windows):
        out = []
        for i in range(0, len(windows), self.batch_size):
            batch = WindowBatch.from_windows(windows[i:i + self.batch_size])
            q, bad = self.model.predict_batch(batch, self.bank)
            self.degenerate += int(bad.sum())
            out.append(q)
        return np.concatenate(out) if out else np.empty((0, self.model.cfg.horizon_T, QUAT_DIM))


def composite_gradcheck(seed=0, max_checks=200):
    """Finite-difference check of the feature extractor + stacked LSTM + head.

    Uses a deliberately small network and random frames; returns the max
    relative error over sampled parameter coordinates.
    """
    from .nn.gradcheck import check_gradients
    from .nn import mse_loss

    rng = np.random.default_rng(seed)
    cfg = PredictorConfig(
        n_input_steps=3, horizon_T=2, hidden_size=5,
        feature=FeatureExtractorConfig(conv_blocks=((3, 3, 2), (4, 3, 2)), fc_widths=(6, 5, 4), input_hw=(8, 16)),
    )
    stores = [FrameStore("v", rng.uniform(0, 1, size=(6, 8, 16, 2)))]
    bank = FrameBank(stores, cfg.feature)
    model = ViewportPredictor(cfg, bank.channels, seed=seed)
    for p in model.parameters():
        p.value += 0.1 * rng.standard_normal(p.shape)
    windows = []
    for s in range(3):
        q = geometry.normalize(rng.standard_normal((5, 4)))
        mask = np.array([True, s != 1, True])
        windows.append(WindowSample("v", "u", s, np.arange(s, s + 3), q[:3], mask, q[3:]))
    batch = WindowBatch.from_windows(windows)
    target = batch.targets.reshape(len(batch), -1)

    def loss():
        out = model.forward(batch, bank)
        model._cache = None
        for layer in model._layers():
            layer._cache = None
        return mse_loss(out, target)[0]

    def backward():
        _, g = mse_loss(model.forward(batch, bank), target)
        model.backward(g)
        return []

    return check_gradients(loss, backward, model.parameters(), rng, max_checks=max_checks)
