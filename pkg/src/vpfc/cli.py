"""Command-line entry point: ``vpfc <subcommand> [flags]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (non-finite training loss or a failed gradient check).
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import SCHEMA, format_value, parse_value, read_config, resolve
from .dataset import (SplitSpec, downsample, load_frame_store, load_traces, make_windows, resample,
                      save_frame_store, split_users, with_reduction, write_traces)
from .errors import ConfigError, DataError, EmptyDataset, NonFiniteLoss, PredictionError, VpfcError
from .geometry import TileGrid

log = logging.getLogger("vpfc")

COMMANDS = ("gen-synthetic", "train", "eval", "sweep", "simulate", "gradcheck")
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _flag_type(key):
    def parse(text):
        try:
            return parse_value(key, text)
        except ConfigError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    parse.__name__ = key
    return parse


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value config file")
    for key, (_, default, text) in SCHEMA.items():
        shown = "" if default is None else f" (default {format_value(default)})"
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=_flag_type(key),
                            default=None, metavar=key.upper(), help=text + shown)
    parser = _Parser(prog="vpfc", description="Viewport prediction and tile-prefetch toolkit.")
    parser.add_argument("--version", action="version", version=f"vpfc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "gen-synthetic": "write a seeded synthetic dataset (traces.csv + frames/)",
        "train": "train a predictor and save <out>/<run>/best.ckpt",
        "eval": "score a checkpoint or baseline on the test users",
        "sweep": "retrain and score across one parameter",
        "simulate": "tile-prefetch simulation on the test users",
        "gradcheck": "finite-difference checks for every layer and the full model",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def parse_args(argv):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError(f"vpfc: error: a subcommand is required\n{parser.format_usage()}")
    file_values = read_config(ns.config) if ns.config else {}
    flags = {k: getattr(ns, k) for k in SCHEMA}
    return ns.command, resolve(file_values, flags), ns.verbose


# -- shared plumbing ------------------------------------------------------------

def _require(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _data_dir(cfg):
    d = Path(_require(cfg, "data"))
    if not (d / "traces.csv").is_file():
        raise DataError(f"{d}: missing traces.csv")
    return d


def load_data(cfg, with_frames=True, input_h=None):
    """Traces (rate-adjusted) and, optionally, frame stores from ``cfg['data']``."""
    d = _data_dir(cfg)
    traces = load_traces(d / "traces.csv", cfg["quat_axis_map"])
    if not traces:
        raise EmptyDataset(f"{d / 'traces.csv'}: no traces")
    if cfg["keep_every"] > 1:
        traces = [downsample(t, cfg["keep_every"]) for t in traces]
    if cfg["rate_hz"] is not None:
        traces = [resample(t, cfg["rate_hz"]) for t in traces]
    stores = []
    if with_frames:
        h = cfg["input_h"] if input_h is None else input_h
        for vid in sorted({t.video_id for t in traces}):
            fdir = d / "frames" / vid
            if not fdir.is_dir():
                raise DataError(f"{fdir}: frame store for video {vid!r} not found")
            stores.append(replace(load_frame_store(fdir, resize_to=(h, 2 * h)), video_id=vid))
    return traces, stores


def _split(cfg, traces):
    spec = SplitSpec(cfg["train_fraction"], cfg["val_fraction"], cfg["test_fraction"], cfg["seed"])
    return split_users(traces, spec)


def _windows(traces, n, horizon, k=0, stride=1):
    return [w for t in traces for w in make_windows(t, n, horizon, k, stride)]


def _model_config(cfg):
    from .models import FeatureExtractorConfig, PredictorConfig
    h = cfg["input_h"]
    return PredictorConfig(cfg["n"], cfg["horizon"], cfg["lstm_layers"], cfg["hidden_size"], cfg["use_content"],
                           FeatureExtractorConfig(input_hw=(h, 2 * h)))


def _train_config(cfg):
    from .training import TrainConfig
    return TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"], weight_decay=cfg["weight_decay"],
                       epochs=cfg["epochs"], seed=cfg["seed"], mask_augment_k_max=cfg["mask_augment_k_max"])


def _predictor(cfg, stores_loader):
    """``(predictor, n, horizon)`` for the configured predictor kind."""
    from .models import FrameBank, LinRegPredictor, NeuralPredictor, StaticPredictor
    from .training import load_checkpoint
    kind = cfg["predictor"]
    if kind == "static":
        return StaticPredictor(), cfg["n"], cfg["horizon"]
    if kind == "linreg":
        return LinRegPredictor(), cfg["n"], cfg["horizon"]
    if kind != "model":
        raise ConfigError(f"unknown predictor {kind!r}; expected model, static or linreg")
    path = Path(_require(cfg, "checkpoint"))
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    mcfg = ckpt.model_cfg
    bank = FrameBank(stores_loader(mcfg.feature.input_hw[0]), mcfg.feature) if mcfg.use_content else None
    return NeuralPredictor(ckpt.build_model(), bank), mcfg.n_input_steps, mcfg.horizon_T


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, cfg, artifacts):
    """``run_manifest.txt``: a config file that reproduces the run, plus artifact hashes."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# vpfc {__version__} run manifest", f"# command: {command}"]
    for key in SCHEMA:
        value = cfg[key]
        if value is None:
            lines.append(f"# {key} unset")
        else:
            lines.append(f"{key}={format_value(value)}")
    lines.append("# artifacts (sha256, path relative to out)")
    for p in sorted({Path(a) for a in artifacts}):
        rel = p.relative_to(out) if p.is_relative_to(out) else p
        lines.append(f"# sha256 {_sha256(p)} {rel.as_posix()}")
    path = out / "run_manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- subcommands ----------------------------------------------------------------

def cmd_gen_synthetic(cfg, out):
    from .synthetic import SyntheticConfig, generate_synthetic
    scfg = SyntheticConfig(
        videos=cfg["videos"], users=cfg["users"], duration_s=cfg["duration_s"],
        rate_hz=5.0 if cfg["rate_hz"] is None else cfg["rate_hz"], frame_h=cfg["frame_h"],
        blob_speed=cfg["blob_speed"], gaze_noise_deg=cfg["gaze_noise_deg"], lag_s=cfg["lag_s"],
        lag_jitter_s=cfg["lag_jitter_s"], blob_sigma_deg=cfg["blob_sigma_deg"], channels=cfg["channels"],
        seed=cfg["seed"],
    )
    stores, traces = generate_synthetic(scfg)
    out.mkdir(parents=True, exist_ok=True)
    write_traces(traces, out / "traces.csv")
    artifacts = [out / "traces.csv"]
    for st in stores:
        save_frame_store(st, out / "frames" / st.video_id)
        artifacts.extend(sorted((out / "frames" / st.video_id).iterdir()))
    print(f"wrote {len(traces)} traces over {len(stores)} videos to {out}")
    return artifacts


def cmd_train(cfg, out):
    from .models import FrameBank
    from .training import save_run, train
    mcfg = _model_config(cfg)
    traces, stores = load_data(cfg, with_frames=mcfg.use_content)
    tr, va, _ = _split(cfg, traces)
    train_w = _windows(tr, mcfg.n_input_steps, mcfg.horizon_T, cfg["k"], cfg["train_stride"])
    val_w = _windows(va, mcfg.n_input_steps, mcfg.horizon_T, cfg["k"])
    if not train_w or not val_w:
        raise EmptyDataset("no training or validation windows; traces too short for n + horizon")
    bank = FrameBank(stores, mcfg.feature) if mcfg.use_content else None
    ckpt = train(train_w, val_w, mcfg, _train_config(cfg), bank)
    run = cfg["run_name"] or ("content" if mcfg.use_content else "position")
    run_dir = save_run(ckpt, out, run)
    print(f"best epoch {ckpt.best_epoch} val_loss {ckpt.best_val_loss:.6g} -> {run_dir / 'best.ckpt'}")
    return [run_dir / "best.ckpt", run_dir / "curve.csv"]


def cmd_eval(cfg, out):
    from .evaluation import evaluate_predictor, mae, write_cdf_csv, write_errors_csv
    traces, _ = load_data(cfg, with_frames=False)
    predictor, n, horizon = _predictor(cfg, lambda h: load_data(cfg, input_h=h)[1])
    _, _, test = _split(cfg, traces)
    windows = with_reduction(_windows(test, n, horizon), cfg["k"])
    if not windows:
        raise EmptyDataset("no test windows; traces too short for n + horizon")
    errors = evaluate_predictor(predictor, windows)
    out.mkdir(parents=True, exist_ok=True)
    write_errors_csv(errors, out / "errors.csv")
    write_cdf_csv(errors, out / "cdf.csv")
    print(f"{cfg['predictor']}: MAE {mae(errors):.4f} deg over {len(windows)} windows x {horizon} steps")
    return [out / "errors.csv", out / "cdf.csv"]


def cmd_sweep(cfg, out):
    from . import evaluation as ev
    traces, stores = load_data(cfg)
    spec = SplitSpec(cfg["train_fraction"], cfg["val_fraction"], cfg["test_fraction"], cfg["seed"])
    exp = ev.Experiment(stores, traces, _model_config(cfg), _train_config(cfg), spec,
                        train_stride=cfg["train_stride"], out_dir=str(out), jobs=cfg["jobs"])
    kinds = {
        "rate": (ev.sweep_sample_rate, (2, 5, 10, 15, 30)),
        "k": (ev.sweep_reduced_k, (0, 1, 2, 3)),
        "horizon": (ev.sweep_horizon, tuple(range(1, 11))),
        "input": (ev.sweep_input_length, (2, 3, 5, 8, 10)),
    }
    if cfg["sweep"] not in kinds:
        raise ConfigError(f"unknown sweep {cfg['sweep']!r}; expected one of {', '.join(kinds)}")
    fn, default_values = kinds[cfg["sweep"]]
    result = fn(exp, tuple(cfg["values"] or default_values))
    for p, v, m, _ in result.rows():
        print(f"{p}={v}: MAE {m:.4f} deg")
    produced = [out / f"sweep_{result.param}.csv"] + [out / f for f in result.errors_files]
    produced += [p for p in out.glob("*/best.ckpt")] + [p for p in out.glob("*/curve.csv")]
    return produced


def cmd_simulate(cfg, out):
    from .streaming import SimConfig, simulate, summary_report, write_records_csv
    traces, _ = load_data(cfg, with_frames=False)
    predictor, n, horizon = _predictor(cfg, lambda h: load_data(cfg, input_h=h)[1])
    rows, cols = cfg["grid"]
    h_fov, v_fov = cfg["fov"]
    sim = SimConfig(TileGrid(rows, cols), h_fov, v_fov, cfg["sim_horizon"], cfg["margin_deg"])
    if cfg["predictor"] != "model":
        horizon = max(horizon, sim.horizon)
    _, _, test = _split(cfg, traces)
    out.mkdir(parents=True, exist_ok=True)
    records, artifacts = [], []
    for tr in test:
        recs, _ = simulate(tr, predictor, sim, n, horizon)
        path = out / f"records_{tr.video_id}_{tr.user_id}.csv"
        write_records_csv(recs, path)
        artifacts.append(path)
        records.extend(recs)
    text, table = summary_report(records)
    (out / "summary.csv").write_text(table, encoding="utf-8")
    print(text, end="")
    return artifacts + [out / "summary.csv"]


def cmd_gradcheck(cfg, out):
    from .models import composite_gradcheck
    from .nn.gradcheck import layer_gradchecks
    results = dict(layer_gradchecks(cfg["seed"]))
    results["full_model"] = composite_gradcheck(cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    lines = ["layer,max_rel_error"] + [f"{k},{v!r}" for k, v in results.items()]
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err <= GRADCHECK_TOL else "FAIL"
        print(f"{name:<16} {err:.3e}  {status}")
        worst = max(worst, err)
    return [out / "gradcheck.csv"], (3 if worst > GRADCHECK_TOL else 0)


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg, verbose = parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr, end="")
        return 1
    except ConfigError as exc:
        print(f"vpfc: config error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(cfg["out"])
    try:
        if cfg["jobs"] < 1:
            raise ConfigError("--jobs must be >= 1")
        if command != "sweep" and cfg["jobs"] != 1:
            log.warning("--jobs only applies to sweep; running single-job")
        result = HANDLERS[command](cfg, out)
        artifacts, code = result if isinstance(result, tuple) else (result, 0)
        write_manifest(out, command, cfg, artifacts)
    except ConfigError as exc:
        print(f"vpfc: config error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLoss as exc:
        print(f"vpfc: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, PredictionError, OSError) as exc:
        print(f"vpfc: data error: {exc}", file=sys.stderr)
        return 2
    except (VpfcError, ValueError) as exc:
        # dataclass validation of the merged config lands here
        print(f"vpfc: invalid configuration: {exc}", file=sys.stderr)
        return 1
    if code == 3:
        print(f"vpfc: gradient check exceeded {GRADCHECK_TOL:g}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
