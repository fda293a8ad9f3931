"""Flat ``key=value`` run configuration.

Lines are ``key=value``; ``#`` starts a comment. Precedence is command-line
flag > config file > default. Unknown keys are rejected.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pair(sep):
    def parse(text):
        a, b = str(text).lower().split(sep)
        return (float(a), float(b))
    return parse


def _grid(text):
    r, c = _pair("x")(text)
    if r != int(r) or c != int(c) or r < 1 or c < 1:
        raise ValueError(f"grid must be ROWSxCOLS positive integers: {text!r}")
    return (int(r), int(c))


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in u64")
    return v


def _values(text):
    return [float(v) if "." in v else int(v) for v in str(text).split(",") if v.strip()]


# key -> (parser, default, help)
SCHEMA = {
    "seed": (_u64, 0, "master seed for all randomness"),
    "out": (str, "vpfc_out", "output directory"),
    "data": (str, None, "data directory (traces.csv + frames/)"),
    "jobs": (int, 1, "parallel sweep workers"),
    "quat_axis_map": (str, "w,x,y,z", "quaternion component remap applied at ingestion"),
    # synthetic data
    "videos": (int, 3, "synthetic videos"),
    "users": (int, 8, "synthetic users per video"),
    "duration_s": (float, 60.0, "synthetic duration (s)"),
    "rate_hz": (float, None, "trace sample rate; synthetic generation rate or resampling target"),
    "keep_every": (int, 1, "keep one sample out of every N before windowing"),
    "frame_h": (int, 32, "synthetic frame height (width = 2*height)"),
    "blob_speed": (float, 30.0, "synthetic blob speed (deg/s)"),
    "gaze_noise_deg": (float, 5.0, "per-axis gaze noise std (deg)"),
    "lag_s": (float, 1.0, "mean gaze lag behind the blob (s)"),
    "lag_jitter_s": (float, 0.2, "per-user lag spread (s)"),
    "blob_sigma_deg": (float, 12.0, "blob angular radius (deg)"),
    "channels": (int, 3, "synthetic frame channels"),
    # model / windows
    "n": (int, 5, "input window length"),
    "horizon": (int, 5, "prediction horizon T"),
    "k": (int, 0, "center samples removed from each input window"),
    "hidden_size": (int, 256, "LSTM units per layer"),
    "lstm_layers": (int, 2, "stacked LSTM layers"),
    "use_content": (_bool, True, "feed frame features to the LSTM"),
    "input_h": (int, 32, "network frame height (width = 2*height)"),
    # training
    "batch_size": (int, 32, "mini-batch size"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "weight_decay": (float, 5e-4, "decoupled weight decay"),
    "epochs": (int, 500, "training epochs"),
    "mask_augment_k_max": (int, 0, "random center removal up to k during training"),
    "train_stride": (int, 1, "stride between training windows"),
    "train_fraction": (float, 0.7, "share of users for training"),
    "val_fraction": (float, 0.1, "share of users for validation"),
    "test_fraction": (float, 0.2, "share of users for testing"),
    "run_name": (str, None, "training run directory name"),
    # evaluation
    "checkpoint": (str, None, "trained checkpoint (best.ckpt)"),
    "predictor": (str, "model", "model | static | linreg"),
    "sweep": (str, "rate", "rate | k | horizon | input"),
    "values": (_values, None, "comma-separated sweep values"),
    # simulation
    "grid": (_grid, (4, 8), "tile grid ROWSxCOLS"),
    "fov": (_pair("x"), (110.0, 90.0), "viewport FoV HxV degrees"),
    "margin_deg": (float, 0.0, "FoV padding before tile selection"),
    "sim_horizon": (int, 1, "prefetch segment length in frames"),
}


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key][0](text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def resolve(file_values: dict, flag_values: dict) -> dict:
    """Defaults, overlaid by config file values, overlaid by explicit flags."""
    merged = {key: default for key, (_, default, _) in SCHEMA.items()}
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def format_value(value):
    if isinstance(value, tuple):
        return "x".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)
