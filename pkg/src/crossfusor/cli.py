"""Command-line front end: ingest, synth, train, eval, sample, ablate, visualize-denoising.

Configuration resolves as defaults < JSON file (--config) < flags. Every run
writes into a fresh timestamped directory under --out holding the resolved
config.json; failures exit nonzero and print a JSON error record to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
import torch

from .estimator import CrossfusorRegressor
from .metrics import HORIZON_SECONDS
from .model import ABLATIONS
from .ngsim import IngestConfig, IngestReport, NoPlatoonsError, ingest_ngsim
from .platoon import (CHANNELS, FRAME_RATE_HZ, FUTURE_REFERENCES, NormalizationStats, load_windows, save_windows, split_train_test,
                      window_platoons)
from .synthetic import SCENARIOS, generate_mixed, generate_synthetic
from .training import evaluate, run_ablations

logger = logging.getLogger("crossfusor")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2          # argparse's own code
EXIT_CONFIG = 3
EXIT_MISSING_INPUT = 4
EXIT_OUTPUT = 5
EXIT_DATA = 6
EXIT_NUMERIC = 7

DATA_ENV = "CROSSFUSOR_DATA_DIR"
DEFAULT_DATA_NAME = "windows.npz"

DEFAULTS = {
    "data": None,
    "out": "runs",
    "seed": 0,
    "epochs": 10,
    "batch": 64,
    "lr": 1e-3,
    "steps": 200,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "ablation": [],
    "horizon_seconds": list(HORIZON_SECONDS),
    "deterministic": False,
    "stop_scale_grad": True,
    "future_reference": "constant_velocity",
    "hidden_size": 50,
    "gru_layers": 2,
    "n_heads": 5,
    "ff_size": 100,
    "unet_channels": [8, 16, 32, 64, 128],
    "weight_decay": 0.01,
    "grad_clip": 1.0,
    "max_steps": None,
    "n_samples": 1,
    "split_ratio": 0.9,
    "stride": 10,
    "n_platoons": 50,
    "scenario": "mixed",
    "checkpoint": None,
    "subset": "test",
    "window": 0,
    "k": None,
}


class CLIError(Exception):
    def __init__(self, message, code=EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of defaults (keys mirror flag names)")
    common.add_argument("--data", help=f"input path; relative paths also resolve under ${DATA_ENV}")
    common.add_argument("--out", help="root directory for run outputs")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", type=_bool, nargs="?", const=True,
                        help="float64, single thread, deterministic kernels")
    common.add_argument("--quiet", action="store_true", default=False)

    model = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    model.add_argument("--epochs", type=int)
    model.add_argument("--batch", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--steps", type=int, help="number of diffusion steps K")
    model.add_argument("--beta-start", dest="beta_start", type=float)
    model.add_argument("--beta-end", dest="beta_end", type=float)
    model.add_argument("--max-steps", dest="max_steps", type=int, help="cap on optimizer steps")
    model.add_argument("--split-ratio", dest="split_ratio", type=float)
    model.add_argument("--stop-scale-grad", dest="stop_scale_grad", type=_bool, nargs="?", const=True,
                       help="detach the learned noise scale inside the loss (default true)")
    model.add_argument("--future-reference", dest="future_reference", choices=FUTURE_REFERENCES,
                       help="trajectory the normalized future is measured against")

    scoring = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    scoring.add_argument("--horizon-seconds", dest="horizon_seconds", type=_float_list)
    scoring.add_argument("--n-samples", dest="n_samples", type=int)

    from_ckpt = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    from_ckpt.add_argument("--checkpoint", help="model directory written by `train`")
    from_ckpt.add_argument("--subset", choices=["test", "all"])

    parser = argparse.ArgumentParser(prog="crossfusor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="NGSIM-style CSV -> window set")
    p.add_argument("--stride", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("synth", parents=[common], help="IDM platoons -> window set")
    p.add_argument("--n-platoons", dest="n_platoons", type=int, default=argparse.SUPPRESS)
    p.add_argument("--scenario", choices=[*SCENARIOS, "mixed"], default=argparse.SUPPRESS)
    p.add_argument("--stride", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("train", parents=[common, model], help="fit a model on the training split")
    p.add_argument("--ablation", action="append", choices=ABLATIONS, default=argparse.SUPPRESS)

    sub.add_parser("eval", parents=[common, scoring, from_ckpt], help="score a checkpoint and the CV baseline")

    p = sub.add_parser("sample", parents=[common, scoring, from_ckpt], help="predict one window")
    p.add_argument("--window", type=int, default=argparse.SUPPRESS)

    sub.add_parser("ablate", parents=[common, model, scoring], help="train and score the four variants")

    p = sub.add_parser("visualize-denoising", parents=[common, from_ckpt],
                       help="export intermediate reverse-chain states as tables")
    p.add_argument("--window", type=int, default=argparse.SUPPRESS)
    p.add_argument("--k", type=_int_list, default=argparse.SUPPRESS, help="comma-separated steps in [0, K]")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON file and explicit flags, then validate."""
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "quiet")}
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CLIError(f"config file not found: {path}", EXIT_MISSING_INPUT) from exc
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
        if not isinstance(loaded, dict):
            raise CLIError("config file must hold a JSON object", EXIT_CONFIG)
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        loaded.pop("command", None)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CLIError(f"unknown config keys: {sorted(unknown)}", EXIT_CONFIG)
        cfg.update(loaded)
    cfg.update(flags)
    if isinstance(cfg["ablation"], str):
        cfg["ablation"] = [cfg["ablation"]]
    try:
        _validate(cfg)
    except TypeError as exc:
        raise CLIError(f"config value has the wrong type: {exc}", EXIT_CONFIG) from exc
    return cfg


def _validate(cfg):
    checks = [
        (cfg["epochs"] >= 1, "epochs must be >= 1"),
        (cfg["batch"] >= 1, "batch must be >= 1"),
        (cfg["lr"] > 0, "lr must be positive"),
        (cfg["steps"] >= 2, "steps must be >= 2"),
        (0 < cfg["beta_start"] < cfg["beta_end"] < 1, "need 0 < beta_start < beta_end < 1"),
        (set(cfg["ablation"]) <= set(ABLATIONS), f"ablation must be among {ABLATIONS}"),
        (len(cfg["horizon_seconds"]) > 0 and all(s > 0 for s in cfg["horizon_seconds"]),
         "horizon_seconds must be positive"),
        (cfg["n_samples"] >= 1, "n_samples must be >= 1"),
        (0 < cfg["split_ratio"] <= 1, "split_ratio must lie in (0, 1]"),
        (cfg["stride"] >= 1, "stride must be >= 1"),
        (cfg["n_platoons"] >= 1, "n_platoons must be >= 1"),
        (cfg["scenario"] in (*SCENARIOS, "mixed"), f"scenario must be one of {(*SCENARIOS, 'mixed')}"),
        (isinstance(cfg["stop_scale_grad"], bool), "stop_scale_grad must be a boolean"),
        (cfg["future_reference"] in FUTURE_REFERENCES, f"future_reference must be one of {FUTURE_REFERENCES}"),
        (cfg["max_steps"] is None or cfg["max_steps"] >= 1, "max_steps must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise CLIError(msg, EXIT_CONFIG)


def resolve_data(path, must_exist=True) -> Path:
    root = os.environ.get(DATA_ENV)
    if path is None:
        if not root:
            raise CLIError(f"no --data given and ${DATA_ENV} is unset", EXIT_MISSING_INPUT)
        path = Path(root) / DEFAULT_DATA_NAME
    path = Path(path)
    if not path.exists() and root and not path.is_absolute() and (Path(root) / path).exists():
        path = Path(root) / path
    if must_exist and not path.exists():
        raise CLIError(f"input not found: {path}", EXIT_MISSING_INPUT)
    return path.resolve()


def make_run_dir(out, command) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run = Path(out) / f"{command}-{stamp}"
    try:
        run.mkdir(parents=True, exist_ok=False)
    except OSError as exc:
        raise CLIError(f"cannot create run directory {run}: {exc}", EXIT_OUTPUT) from exc
    return run


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(np.asarray(o).tolist())
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def configure_determinism(cfg):
    if cfg["deterministic"]:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def make_estimator(cfg, ablations=None, checkpoint_dir=None) -> CrossfusorRegressor:
    return CrossfusorRegressor(
        hidden_size=cfg["hidden_size"], gru_layers=cfg["gru_layers"], n_heads=cfg["n_heads"],
        ff_size=cfg["ff_size"], unet_channels=tuple(cfg["unet_channels"]), n_steps=cfg["steps"],
        beta_start=cfg["beta_start"], beta_end=cfg["beta_end"],
        ablations=tuple(cfg["ablation"] if ablations is None else ablations),
        stop_scale_grad=cfg["stop_scale_grad"], future_reference=cfg["future_reference"],
        learning_rate=cfg["lr"], batch_size=cfg["batch"], epochs=cfg["epochs"], max_steps=cfg["max_steps"],
        weight_decay=cfg["weight_decay"], grad_clip=cfg["grad_clip"], n_samples=cfg["n_samples"],
        random_state=cfg["seed"], dtype="float64" if cfg["deterministic"] else "float32",
        checkpoint_dir=str(checkpoint_dir) if checkpoint_dir else None)


def load_window_file(path):
    try:
        return load_windows(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CLIError(f"cannot read window set {path}: {exc}", EXIT_DATA) from exc


def load_model(cfg) -> tuple[CrossfusorRegressor, dict]:
    if not cfg["checkpoint"]:
        raise CLIError("--checkpoint is required", EXIT_CONFIG)
    path = Path(cfg["checkpoint"])
    if not (path / "manifest.json").exists():
        raise CLIError(f"checkpoint not found: {path}", EXIT_MISSING_INPUT)
    est = CrossfusorRegressor.load(path)
    manifest = json.loads((path / "manifest.json").read_text())
    est.set_params(n_samples=cfg["n_samples"])
    return est, manifest


def check_compatible(est, windows):
    mc = est.model_.config
    if windows.future_frames != mc.future_frames or windows.history_frames != mc.history_frames:
        raise CLIError(
            f"data has H={windows.history_frames}, F={windows.future_frames} but the checkpoint was trained "
            f"with H={mc.history_frames}, F={mc.future_frames}", EXIT_DATA)


def check_horizons(cfg, future_frames):
    longest = max(cfg["horizon_seconds"]) * FRAME_RATE_HZ
    if longest > future_frames:
        raise CLIError(f"horizon {max(cfg['horizon_seconds'])} s exceeds the {future_frames}-frame prediction",
                       EXIT_CONFIG)


def select_subset(windows, cfg, manifest):
    if cfg["subset"] == "all":
        return windows
    split = manifest.get("split") or {"ratio": cfg["split_ratio"], "seed": cfg["seed"]}
    _, test = split_train_test(windows, split["ratio"], split["seed"])
    if len(test) == 0:
        raise CLIError("test split is empty; use --subset all or a smaller split ratio", EXIT_DATA)
    return test


# commands

def cmd_ingest(cfg, run):
    src = resolve_data(cfg["data"])
    report = IngestReport()
    try:
        platoons = ingest_ngsim(src, IngestConfig(), report)
    except NoPlatoonsError as exc:
        raise CLIError(str(exc), EXIT_DATA) from exc
    windows = window_platoons(platoons, cfg["stride"])
    save_windows(run / DEFAULT_DATA_NAME, windows, meta={"source": str(src), "stride_frames": cfg["stride"]})
    write_json(run / "ingest_report.json", vars(report))
    return {"windows": len(windows), "platoons": len(platoons)}


def cmd_synth(cfg, run):
    if cfg["scenario"] == "mixed":
        platoons = generate_mixed(cfg["n_platoons"], seed=cfg["seed"])
    else:
        platoons = generate_synthetic(cfg["n_platoons"], seed=cfg["seed"], scenario=cfg["scenario"])
    windows = window_platoons(platoons, cfg["stride"])
    save_windows(run / DEFAULT_DATA_NAME, windows,
                 meta={"source": "synthetic-idm", "scenario": cfg["scenario"], "seed": cfg["seed"],
                       "stride_frames": cfg["stride"]})
    return {"windows": len(windows), "platoons": len(platoons)}


def cmd_train(cfg, run):
    data = resolve_data(cfg["data"])
    windows, _ = load_window_file(data)
    train_set, test_set = split_train_test(windows, cfg["split_ratio"], cfg["seed"])
    est = make_estimator(cfg, checkpoint_dir=run / "checkpoint")
    est.fit(train_set.history, train_set.future)
    split = {"ratio": cfg["split_ratio"], "seed": cfg["seed"], "data": str(data),
             "train_platoons": sorted(int(p) for p in np.unique(train_set.platoon_id)),
             "test_platoons": sorted(int(p) for p in np.unique(test_set.platoon_id))}
    est.save(run / "model", extra={"split": split})
    with open(run / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(est.step_loss_, 1):
            w.writerow([i, repr(v)])
    with open(run / "epoch_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(est.loss_curve_, 1):
            w.writerow([i, repr(v)])
    return {"model": str(run / "model"), "train_windows": len(train_set), "steps": est.n_iter_,
            "final_loss": est.loss_curve_[-1]}


def cmd_eval(cfg, run):
    est, manifest = load_model(cfg)
    windows, _ = load_window_file(resolve_data(cfg["data"]))
    check_compatible(est, windows)
    check_horizons(cfg, windows.future_frames)
    subset = select_subset(windows, cfg, manifest)
    report = evaluate(est, subset.history, subset.future, n_samples=cfg["n_samples"],
                      seconds=cfg["horizon_seconds"])
    report.write_csv(run / "report.csv")
    write_json(run / "report.json", report.to_dict())
    return {"report": str(run / "report.csv"), "windows": len(subset), "rmse": report.table("rmse")}


def cmd_sample(cfg, run):
    est, _ = load_model(cfg)
    windows, _ = load_window_file(resolve_data(cfg["data"]))
    check_compatible(est, windows)
    i = cfg["window"]
    if not 0 <= i < len(windows):
        raise CLIError(f"window {i} out of range [0, {len(windows)})", EXIT_DATA)
    h = windows.history[i:i + 1]
    pred = est.predict(h, n_samples=cfg["n_samples"])[0]
    with open(run / "prediction.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t_s", "x_pred_ft", "x_true_ft"])
        for j, (p, y) in enumerate(zip(pred, windows.future[i]), 1):
            w.writerow([j, j / FRAME_RATE_HZ, repr(float(p)), repr(float(y))])
    return {"prediction": str(run / "prediction.csv"), "window": i}


def cmd_ablate(cfg, run):
    windows, _ = load_window_file(resolve_data(cfg["data"]))
    check_horizons(cfg, windows.future_frames)
    train_set, test_set = split_train_test(windows, cfg["split_ratio"], cfg["seed"])
    if len(test_set) == 0:
        test_set = train_set
        logger.warning("test split empty; scoring on the training windows")
    report = run_ablations(lambda flags: make_estimator(cfg, ablations=flags),
                           train_set.history, train_set.future, test_set.history, test_set.future,
                           n_samples=cfg["n_samples"], seconds=cfg["horizon_seconds"])
    report.write_csv(run / "ablation.csv", metrics=("rmse",))
    write_json(run / "ablation.json", report.to_dict())
    return {"report": str(run / "ablation.csv"), "failures": report.failures}


def cmd_visualize(cfg, run):
    est, _ = load_model(cfg)
    windows, _ = load_window_file(resolve_data(cfg["data"]))
    check_compatible(est, windows)
    K = est.model_.schedule.n_steps
    steps = cfg["k"] if cfg["k"] is not None else [K, K // 2, K // 4, 0]
    bad = [k for k in steps if not 0 <= k <= K]
    if bad:
        raise CLIError(f"steps {bad} outside [0, {K}]", EXIT_CONFIG)
    i = cfg["window"]
    if not 0 <= i < len(windows):
        raise CLIError(f"window {i} out of range [0, {len(windows)})", EXIT_DATA)
    h = windows.history[i]
    trace = est.denoising_trace(h, steps)

    hist_t = (np.arange(windows.history_frames) - windows.history_frames + 1) / FRAME_RATE_HZ
    with open(run / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", *CHANNELS])
        for t, row in zip(hist_t, h):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    files = {}
    for k in sorted(trace, reverse=True):
        x_k, mag = trace[k]
        name = f"step_{k:04d}.csv"
        with open(run / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "t_s", "x_k_ft", "noise_magnitude_ft", "x_true_ft"])
            for j in range(len(x_k)):
                w.writerow([j + 1, (j + 1) / FRAME_RATE_HZ, repr(float(x_k[j])), repr(float(mag[j])),
                            repr(float(windows.future[i, j]))])
        files[str(k)] = name

    with torch.no_grad():
        dtype = next(est.model_.parameters()).dtype
        hn = torch.as_tensor(est.stats_.transform_history(h[None]), dtype=dtype)
        _, scale, _ = est.model_.encode(hn)
    sigma2 = scale.sigma2[0].double().numpy()
    manifest = {
        "window": i, "platoon_id": int(windows.platoon_id[i]), "start_frame": int(windows.start_frame[i]),
        "steps": sorted(trace, reverse=True), "K": K, "seed": est.random_state, "files": files,
        "history_file": "history.csv",
        "sigma2": sigma2.tolist(),
        "sigma_ft": (np.sqrt(sigma2) * est.stats_.future_scale).tolist(),
        "anchor_ft": float(NormalizationStats.anchor(h[None])[0]),
        "future_reference": est.stats_.future_reference,
        "reference_ft": est.stats_.reference(h[None])[0].tolist(),
        "noise_scaling": est.model_.noise_scaling,
    }
    write_json(run / "manifest.json", manifest)
    return {"bundle": str(run), "steps": manifest["steps"]}


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "ablate": cmd_ablate,
    "visualize-denoising": cmd_visualize,
}


@dataclass
class RunOutcome:
    code: int
    run_dir: Path | None
    result: dict | None


def run(argv=None) -> RunOutcome:
    args = build_parser().parse_args(argv)
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    run_dir = None
    try:
        cfg = resolve_config(args)
        configure_determinism(cfg)
        run_dir = make_run_dir(cfg["out"], args.command)
        write_json(run_dir / "config.json", {"command": args.command, **cfg})
        result = COMMANDS[args.command](cfg, run_dir)
        write_json(run_dir / "result.json", result)
        print(json.dumps({"status": "ok", "run_dir": str(run_dir), **result}, default=_json_default))
        return RunOutcome(EXIT_OK, run_dir, result)
    except CLIError as exc:
        code, err = exc.code, exc
    except FloatingPointError as exc:
        code, err = EXIT_NUMERIC, exc
    except (ValueError, TypeError) as exc:
        code, err = EXIT_DATA, exc
    except OSError as exc:
        code, err = EXIT_OUTPUT, exc
    except RuntimeError as exc:
        code, err = EXIT_RUNTIME, exc
    record = {"status": "error", "command": args.command, "exit_code": code,
              "error": type(err).__name__, "message": str(err)}
    if run_dir is not None:
        try:
            write_json(run_dir / "error.json", record)
            record["run_dir"] = str(run_dir)
        except OSError:
            pass
    print(json.dumps(record), file=sys.stderr)
    return RunOutcome(code, run_dir, None)


def main(argv=None) -> int:
    return run(argv).code


if __name__ == "__main__":
    sys.exit(main())
