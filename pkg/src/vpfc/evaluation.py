"""Angle-error metrics and the experiment sweeps.

All outputs are plain CSV:

- errors: ``video_id,user_id,window_start,step,sigma_deg``
- CDF: ``sigma_deg,cum_fraction``
- sweep: ``param,value,mae_deg,errors_file``
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .dataset import FrameStore, HeadTrace, SplitSpec, make_windows, resample, split_users, with_reduction
from .errors import InvalidWindowConfig, PredictionError
from .models import FrameBank, NeuralPredictor, PredictorConfig
from .training import TrainConfig, save_run, train

log = logging.getLogger(__name__)

ERRORS_HEADER = ["video_id", "user_id", "window_start", "step", "sigma_deg"]


@dataclass(frozen=True)
class ErrorSample:
    video_id: str
    user_id: str
    window_start: int
    step: int  # 1-based horizon step
    sigma_deg: float


def _sigmas(errors):
    if isinstance(errors, np.ndarray):
        return errors.astype(np.float64).ravel()
    return np.array([e.sigma_deg for e in errors], dtype=np.float64)


def mae(errors) -> float:
    """Mean angle error (degrees) over all samples and horizon steps."""
    s = _sigmas(errors)
    if s.size == 0:
        raise ValueError("mae of an empty error set")
    return float(np.mean(s))


def cdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF at the sorted unique error values."""
    s = np.sort(_sigmas(errors))
    if s.size == 0:
        return []
    values, counts = np.unique(s, return_counts=True)
    frac = np.cumsum(counts) / s.size
    frac[-1] = 1.0
    return list(zip(values.tolist(), frac.tolist()))


def _predict_all(predictor, windows, chunk=512):
    out = []
    for i in range(0, len(windows), chunk):
        part = windows[i:i + chunk]
        try:
            out.append(np.asarray(predictor(part)))
        except Exception as exc:
            # Re-run one window at a time to name the culprit.
            for w in part:
                try:
                    predictor([w])
                except Exception as inner:
                    raise PredictionError(w.video_id, w.user_id, w.start, inner) from inner
            raise
    return np.concatenate(out) if out else np.empty((0, 0, 4))


def evaluate_predictor(predictor, windows) -> list[ErrorSample]:
    """Angle error for every window and horizon step (``len(windows) * T`` samples)."""
    if not windows:
        return []
    pred = _predict_all(predictor, windows)
    actual = np.stack([w.target_orientations for w in windows])
    if pred.shape != actual.shape:
        raise ValueError(f"predictor returned {pred.shape}, expected {actual.shape}")
    sig = geometry.angle_error(geometry.quat_to_gaze(actual), geometry.quat_to_gaze(pred))
    sig = np.asarray(sig).reshape(actual.shape[:2])
    return [ErrorSample(w.video_id, w.user_id, int(w.start), j + 1, float(sig[i, j]))
            for i, w in enumerate(windows) for j in range(sig.shape[1])]


# -- CSV ------------------------------------------------------------------------

def write_errors_csv(errors, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERRORS_HEADER)
        for e in errors:
            w.writerow([e.video_id, e.user_id, e.window_start, e.step, repr(e.sigma_deg)])


def read_errors_csv(path) -> list[ErrorSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [ErrorSample(r["video_id"], r["user_id"], int(r["window_start"]), int(r["step"]),
                            float(r["sigma_deg"])) for r in reader]


def write_cdf_csv(errors, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_deg", "cum_fraction"])
        for s, f in cdf(errors):
            w.writerow([repr(s), repr(f)])


# -- experiments ----------------------------------------------------------------

@dataclass
class Experiment:
    """Everything a sweep point needs to train and score one model."""

    stores: list[FrameStore]
    traces: list[HeadTrace]  # at the native rate
    model: PredictorConfig = field(default_factory=PredictorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    window_s: float = 1.0  # input span and horizon span for the sample-rate sweep
    train_stride: int = 1
    out_dir: str | None = None
    jobs: int = 1

    def splits(self, traces=None):
        return split_users(self.traces if traces is None else traces, self.split)


@dataclass
class SweepResult:
    param: str
    values: list
    mae_deg: list
    errors_files: list
    errors: dict = field(default_factory=dict, repr=False)  # value -> list[ErrorSample]

    def rows(self):
        return [(self.param, v, m, f) for v, m, f in zip(self.values, self.mae_deg, self.errors_files)]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "value", "mae_deg", "errors_file"])
            for p, v, m, f in self.rows():
                w.writerow([p, v, repr(m), f])


def _windows(traces, n, horizon, k=0, stride=1):
    return [w for tr in traces for w in make_windows(tr, n, horizon, k, stride)]


def run_point(exp: Experiment, traces, n, horizon, run_name, eval_ks=(0,)):
    """Train one content model on ``traces`` and score it on the test users.

    Returns ``{k: errors}`` for each reduction level in ``eval_ks``.
    """
    train_tr, val_tr, test_tr = exp.splits(traces)
    mcfg = replace(exp.model, n_input_steps=n, horizon_T=horizon)
    bank = FrameBank(exp.stores, mcfg.feature) if mcfg.use_content else None
    ckpt = train(_windows(train_tr, n, horizon, stride=exp.train_stride), _windows(val_tr, n, horizon),
                 mcfg, exp.train, bank)
    if exp.out_dir:
        save_run(ckpt, exp.out_dir, run_name)
    predictor = NeuralPredictor(ckpt.build_model(), bank)
    test = _windows(test_tr, n, horizon)
    return {k: evaluate_predictor(predictor, with_reduction(test, k)) for k in eval_ks}


def _finish(param, values, per_value, out_dir):
    files = []
    for v, errs in zip(values, per_value):
        name = ""
        if out_dir:
            name = f"errors_{param}_{v}.csv"
            write_errors_csv(errs, Path(out_dir) / name)
        files.append(name)
    result = SweepResult(param, list(values), [mae(e) for e in per_value], files,
                         dict(zip(values, per_value)))
    if out_dir:
        result.write_csv(Path(out_dir) / f"sweep_{param}.csv")
    return result


def _map(jobs, fn, args):
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _rate_point(exp, rate):
    steps = max(2, int(round(rate * exp.window_s)))
    traces = [resample(tr, rate) for tr in exp.traces]
    return run_point(exp, traces, steps, steps, f"rate_{rate}")[0]


def sweep_sample_rate(exp: Experiment, rates=(2, 5, 10, 15, 30)) -> SweepResult:
    """Per rate: resample, window ``n = T = round(rate * window_s)``, retrain, score."""
    if exp.out_dir:
        Path(exp.out_dir).mkdir(parents=True, exist_ok=True)
    per = _map(exp.jobs, _rate_point, [(exp, r) for r in rates])
    return _finish("rate_hz", list(rates), per, exp.out_dir)


def sweep_reduced_k(exp: Experiment, ks=(0, 1, 2, 3)) -> SweepResult:
    """One model trained with mask augmentation up to ``max(ks)``, scored per k."""
    n = exp.model.n_input_steps
    if max(ks) > n - 2 or min(ks) < 0:
        raise InvalidWindowConfig(f"k values {ks} invalid for n={n}")
    if exp.out_dir:
        Path(exp.out_dir).mkdir(parents=True, exist_ok=True)
    aug = replace(exp, train=replace(exp.train, mask_augment_k_max=max(exp.train.mask_augment_k_max, max(ks))))
    by_k = run_point(aug, exp.traces, n, exp.model.horizon_T, "reduced_k", eval_ks=tuple(ks))
    return _finish("k", list(ks), [by_k[k] for k in ks], exp.out_dir)


def _horizon_point(exp, horizon):
    return run_point(exp, exp.traces, exp.model.n_input_steps, horizon, f"horizon_{horizon}")[0]


def sweep_horizon(exp: Experiment, horizons=tuple(range(1, 11))) -> SweepResult:
    """Per horizon T: rebuild windows, retrain, score."""
    if exp.out_dir:
        Path(exp.out_dir).mkdir(parents=True, exist_ok=True)
    per = _map(exp.jobs, _horizon_point, [(exp, t) for t in horizons])
    return _finish("horizon", list(horizons), per, exp.out_dir)


def _input_point(exp, n):
    return run_point(exp, exp.traces, n, exp.model.horizon_T, f"input_{n}")[0]


def sweep_input_length(exp: Experiment, lengths=(2, 3, 5, 8, 10)) -> SweepResult:
    """Per input length n at fixed horizon: retrain, score."""
    if exp.out_dir:
        Path(exp.out_dir).mkdir(parents=True, exist_ok=True)
    per = _map(exp.jobs, _input_point, [(exp, n) for n in lengths])
    return _finish("n", list(lengths), per, exp.out_dir)


def export_latitude_trace(predictor, trace: HeadTrace, n, horizon, path=None):
    """Rows ``(t, actual_lat, predicted_lat)`` of 1-step-ahead predictions per window."""
    windows = make_windows(trace, n, horizon)
    rows = []
    if windows:
        pred = _predict_all(predictor, windows)[:, 0]
        actual = np.stack([w.target_orientations[0] for w in windows])
        lat_a = np.atleast_1d(geometry.quat_to_gaze(actual).lat)
        lat_p = np.atleast_1d(geometry.quat_to_gaze(pred).lat)
        times = trace.timestamps[[w.start + n for w in windows]]
        rows = list(zip(times.tolist(), lat_a.tolist(), lat_p.tolist()))
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "actual_lat", "predicted_lat"])
            for r in rows:
                w.writerow([repr(v) for v in r])
    return rows
