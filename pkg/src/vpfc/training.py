"""Mini-batch training with min-validation-loss checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import center_mask
from .errors import DataError, EmptyDataset, NonFiniteLoss
from .models import FeatureExtractorConfig, FrameBank, PredictorConfig, ViewportPredictor, WindowBatch
from .nn import Adam, dump_params, load_params, mse_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 5e-4
    epochs: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Each epoch every training window drops k ~ U{0..max} center samples.
    mask_augment_k_max: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError(f"invalid training config {self}")


@dataclass
class Checkpoint:
    params: dict
    model_cfg: PredictorConfig
    in_channels: int
    train_cfg: TrainConfig
    best_epoch: int
    best_val_loss: float
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss)

    def build_model(self) -> ViewportPredictor:
        model = ViewportPredictor(self.model_cfg, self.in_channels, seed=self.train_cfg.seed)
        named = model.named_parameters()
        if set(named) != set(self.params):
            raise DataError("checkpoint parameters do not match the configured architecture")
        for name, p in named.items():
            if p.shape != self.params[name].shape:
                raise DataError(f"checkpoint parameter {name} has shape {self.params[name].shape}, expected {p.shape}")
            p.value[...] = self.params[name]
        return model


def _batch(windows, idx, masks=None):
    batch = WindowBatch.from_windows([windows[i] for i in idx])
    if masks is not None:
        batch.mask = masks[idx]
    return batch


def evaluate_loss(model: ViewportPredictor, windows, bank: FrameBank | None = None, batch_size=256):
    """Mean per-window MSE of raw network outputs against canonical targets."""
    if not windows:
        raise EmptyDataset("evaluate_loss on an empty window set")
    losses = per_window_losses(model, windows, bank, batch_size)
    return float(np.mean(losses))


def per_window_losses(model, windows, bank=None, batch_size=256):
    out = []
    for i in range(0, len(windows), batch_size):
        batch = WindowBatch.from_windows(windows[i:i + batch_size])
        raw = model.forward(batch, bank)
        model._cache = None
        for layer in model._layers():
            layer._cache = None
        diff = raw - batch.targets.reshape(len(batch), -1)
        out.append(np.mean(diff * diff, axis=1))
    return np.concatenate(out)


def train(train_windows, val_windows, model_cfg: PredictorConfig, cfg: TrainConfig,
          bank: FrameBank | None = None, in_channels: int | None = None) -> Checkpoint:
    """Adam on mini-batch MSE; returns parameters from the best validation epoch."""
    if not train_windows or not val_windows:
        raise EmptyDataset("train and validation window sets must be nonempty")
    if in_channels is None:
        in_channels = bank.channels if bank is not None else 0
    model = ViewportPredictor(model_cfg, in_channels, seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])
    n = model_cfg.n_input_steps
    masks = np.stack([w.reduce_mask for w in train_windows]).astype(bool)
    aug_masks = np.stack([center_mask(n, k) for k in range(cfg.mask_augment_k_max + 1)])

    def snapshot():
        return {p.name: p.value.copy() for p in params}

    best = snapshot()
    best_epoch = 0
    best_val = evaluate_loss(model, val_windows, bank, cfg.eval_batch_size) if cfg.epochs == 0 else math.inf
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(train_windows))
        if cfg.mask_augment_k_max > 0:
            masks = aug_masks[order_rng.integers(0, cfg.mask_augment_k_max + 1, size=len(train_windows))]
        total = 0.0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            batch = _batch(train_windows, idx, masks)
            opt.zero_grad()
            raw = model.forward(batch, bank)
            loss, grad = mse_loss(raw, batch.targets.reshape(len(batch), -1))
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
        train_loss = total / len(perm)
        val_loss = evaluate_loss(model, val_windows, bank, cfg.eval_batch_size)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch, -1, val_loss)
        curve.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, best = val_loss, epoch, snapshot()
    return Checkpoint(best, model_cfg, in_channels, cfg, best_epoch, best_val, curve)


# -- persistence --------------------------------------------------------------

def _config_lines(ckpt: Checkpoint):
    m = ckpt.model_cfg
    lines = [
        f"in_channels={ckpt.in_channels}",
        f"seed={ckpt.train_cfg.seed}",
        f"best_epoch={ckpt.best_epoch}",
        f"best_val_loss={ckpt.best_val_loss!r}",
    ]
    for f in fields(PredictorConfig):
        if f.name != "feature":
            lines.append(f"model.{f.name}={getattr(m, f.name)}")
    feat = m.feature
    lines.append("feature.conv_blocks=" + ";".join("x".join(map(str, b)) for b in feat.conv_blocks))
    lines.append("feature.fc_widths=" + ",".join(map(str, feat.fc_widths)))
    lines.append("feature.input_hw=" + "x".join(map(str, feat.input_hw)))
    lines.append(f"feature.coord_channels={feat.coord_channels}")
    for key, value in asdict(ckpt.train_cfg).items():
        lines.append(f"train.{key}={value!r}" if isinstance(value, float) else f"train.{key}={value}")
    lines.append("curve=" + ";".join(f"{e},{t!r},{v!r}" for e, t, v in ckpt.curve))
    return lines


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    return dump_params(ckpt.params) + ("\n".join(_config_lines(ckpt)) + "\n").encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))


def _parse_value(text, kind):
    if kind is bool:
        return text == "True"
    return kind(text)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    params, offset = load_params(blob)
    kv = {}
    for line in blob[offset:].decode("utf-8").splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            kv[key] = value
    try:
        feat = FeatureExtractorConfig(
            conv_blocks=tuple(tuple(int(v) for v in b.split("x")) for b in kv["feature.conv_blocks"].split(";")),
            fc_widths=tuple(int(v) for v in kv["feature.fc_widths"].split(",")),
            input_hw=tuple(int(v) for v in kv["feature.input_hw"].split("x")),
            coord_channels=kv["feature.coord_channels"] == "True",
        )
        model_kw = {f.name: _parse_value(kv[f"model.{f.name}"], bool if f.name == "use_content" else int)
                    for f in fields(PredictorConfig) if f.name != "feature"}
        train_kw = {}
        for f in fields(TrainConfig):
            kind = {"float": float, "int": int}[f.type] if isinstance(f.type, str) else f.type
            train_kw[f.name] = kind(kv[f"train.{f.name}"])
        curve = []
        if kv.get("curve"):
            for item in kv["curve"].split(";"):
                e, t, v = item.split(",")
                curve.append((int(e), float(t), float(v)))
        return Checkpoint(params, PredictorConfig(**model_kw, feature=feat), int(kv["in_channels"]),
                          TrainConfig(**train_kw), int(kv["best_epoch"]), float(kv["best_val_loss"]), curve)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed checkpoint config block ({exc})") from None


def write_curve(ckpt: Checkpoint, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, t, v in ckpt.curve:
            w.writerow([e, repr(t), repr(v)])


def save_run(ckpt: Checkpoint, out_dir, run_name):
    """Write ``<out_dir>/<run_name>/best.ckpt`` and ``curve.csv``; returns the run dir."""
    run_dir = Path(out_dir) / run_name
    save_checkpoint(ckpt, run_dir / "best.ckpt")
    write_curve(ckpt, run_dir / "curve.csv")
    return run_dir


def with_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    return replace(cfg, epochs=epochs)
