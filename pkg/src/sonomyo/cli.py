"""
Command-line entry point: ``sonomyo {generate,train-svc,train-cnn,eval,demo}``.

Every command reads one JSON run configuration (``--config``), applies the
flag overrides, writes the resolved configuration next to its outputs as
``config.resolved.json`` and works inside the output directory::

    <out>/sessions/<C>_<speed>_s<seed>/   serialized sessions
    <out>/sessions/manifest.txt           one line per session: name configuration speed seed
    <out>/models/                         svc.model, cnn_<C>.model, bundle.txt, cells/*.model
    <out>/reports/                        histories, metrics, confusion.csv, demo output

Exit codes: 0 success, 2 invalid configuration, 3 missing or bad data,
4 missing or bad model files.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import cnn as cnn_mod
from .errors import (BundleError, ConfigError, DataError, ModelFormatError,
                     SonomyoError)
from .experiment import (cell_name, fit_cnn, fit_svc, rmse_cells,
                         session_features, svc_dataset)
from .kinematics import FINGERS
from .metrics import ConfusionMatrix, accuracy, aggregate_rmse, kv_text, rmse
from .pipeline import load_bundle, run_pipeline, write_results
from .preprocess import PreprocessConfig
from .svc import SvcModel, shuffled_split
from .synthgen import (CLASS_IDS, CONFIGURATIONS, SessionSpec, Speed,
                       generate_session, read_session, write_session)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "grid": {"configurations": list(CLASS_IDS),
             "speeds": ["slow", "medium", "fast"], "seeds": [0]},
    "generator": {"duration": 56.0, "frame_rate": 25.0, "image_height": 636,
                  "image_width": 256, "noise_level": 0.1},
    "preprocess": {
        "svc": {"target_height": 159, "target_width": 64, "log_dynamic_range": 1000.0},
        "cnn": {"target_height": 53, "target_width": 32, "log_dynamic_range": 1000.0},
    },
    "svc": {"lam": 1e-4, "epochs": 20, "batch_size": 64, "test_split": 0.3, "seed": 0},
    "cnn": {"epochs": 50, "validation_split": 0.1, "test_split": 0.3,
            "batch_size": 16, "lr": 1e-3, "decay": 1e-3 / 200, "seed": 0,
            "bundle_speed": "medium"},
    "demo": {"configuration": "C1", "speed": "medium", "seed": 1000},
    "out": "runs/default",
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg):
    """Return every problem found in a resolved configuration."""
    problems = []
    grid = cfg.get("grid", {})
    for key in ("configurations", "speeds", "seeds"):
        if not grid.get(key):
            problems.append(f"grid.{key} must be a non-empty list")
    for c in grid.get("configurations") or []:
        if c not in CONFIGURATIONS:
            problems.append(f"grid.configurations: unknown configuration {c!r}")
    for s in grid.get("speeds") or []:
        try:
            Speed.parse(s)
        except ConfigError:
            problems.append(f"grid.speeds: unknown speed {s!r}")
    for s in grid.get("seeds") or []:
        if not isinstance(s, int) or s < 0:
            problems.append(f"grid.seeds: {s!r} is not a non-negative integer")
    try:
        SessionSpec("C1", **cfg.get("generator", {}))
    except (ConfigError, TypeError) as exc:
        problems.append(f"generator: {exc}")
    for stage in ("svc", "cnn"):
        try:
            pc = PreprocessConfig(**cfg["preprocess"][stage])
            pc.block((cfg["generator"]["image_height"], cfg["generator"]["image_width"]))
        except (ConfigError, TypeError, KeyError) as exc:
            problems.append(f"preprocess.{stage}: {exc}")
    svc = cfg.get("svc", {})
    if not svc.get("lam", 0) > 0:
        problems.append("svc.lam must be positive")
    if not 0 < svc.get("test_split", 0) < 1:
        problems.append("svc.test_split must lie in (0, 1)")
    try:
        _train_config(cfg)
    except (ValueError, TypeError) as exc:
        problems.append(f"cnn: {exc}")
    try:
        Speed.parse(cfg["cnn"].get("bundle_speed", "medium"))
    except (ConfigError, KeyError):
        problems.append("cnn.bundle_speed is not a known speed")
    if not cfg.get("out"):
        problems.append("out must name a directory")
    return problems


def _train_config(cfg):
    c = {k: v for k, v in cfg["cnn"].items() if k != "bundle_speed"}
    return cnn_mod.TrainConfig(**c)


def _preprocess(cfg, stage):
    return PreprocessConfig(**cfg["preprocess"][stage])


def resolve(args):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if args.seed is not None:
        cfg["grid"]["seeds"] = [args.seed]
        cfg["svc"]["seed"] = cfg["cnn"]["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    problems = validate(cfg)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def _write_resolved(cfg, directory):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.resolved.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _specs(cfg):
    g = cfg["grid"]
    return [SessionSpec(c, s, seed=seed, **cfg["generator"])
            for seed in g["seeds"] for c in g["configurations"] for s in g["speeds"]]


def cmd_generate(cfg):
    out = Path(cfg["out"])
    sessions = out / "sessions"
    sessions.mkdir(parents=True, exist_ok=True)
    lines = []
    for spec in _specs(cfg):
        name = cell_name(spec)
        write_session(generate_session(spec), sessions / name)
        lines.append(f"{name} {spec.configuration.id} {spec.speed.name.lower()} {spec.seed}")
    (sessions / "manifest.txt").write_text("".join(l + "\n" for l in lines))
    _write_resolved(cfg, out)
    return [sessions / l.split()[0] for l in lines]


def _load_sessions(cfg):
    root = Path(cfg["out"]) / "sessions"
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"no generated dataset at {root} (run 'generate' first)")
    out = []
    for line in manifest.read_text().splitlines():
        if line.strip():
            out.append(read_session(root / line.split()[0]))
    if not out:
        raise DataError("dataset manifest is empty")
    return out


def _bundle_header(cfg, models):
    meta = {"format": "sonomyo-bundle", "version": 1,
            "classes": ",".join(cfg["grid"]["configurations"])}
    for stage in ("svc", "cnn"):
        pc = _preprocess(cfg, stage)
        meta[f"{stage}.target_height"] = pc.target_height
        meta[f"{stage}.target_width"] = pc.target_width
        meta[f"{stage}.log_dynamic_range"] = repr(float(pc.log_dynamic_range))
    (models / "bundle.txt").write_text(kv_text(meta))


def cmd_train_svc(cfg):
    out = Path(cfg["out"])
    sessions = _load_sessions(cfg)
    s = cfg["svc"]
    model, (X_test, y_test) = fit_svc(
        sessions, _preprocess(cfg, "svc"), lam=s["lam"], epochs=s["epochs"],
        seed=s["seed"], batch_size=s["batch_size"], test_split=s["test_split"],
        classes=[c for c in cfg["grid"]["configurations"]])
    models, reports = out / "models", out / "reports"
    models.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    model.save(models / "svc.model")
    _bundle_header(cfg, models)
    hist = model.history
    lines = ["epoch " + " ".join(f"obj_{c}" for c in model.classes)]
    for e, row in enumerate(hist["objective"]):
        lines.append(f"{e} " + " ".join(repr(float(v)) for v in row))
    (reports / "svc_history.txt").write_text("\n".join(lines) + "\n")
    _write_resolved(cfg, out)
    return model


def cmd_train_cnn(cfg):
    out = Path(cfg["out"])
    sessions = _load_sessions(cfg)
    train_cfg = _train_config(cfg)
    pre = _preprocess(cfg, "cnn")
    models, reports = out / "models", out / "reports"
    (models / "cells").mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    bundle_speed = Speed.parse(cfg["cnn"].get("bundle_speed", "medium"))
    bundle_seed = cfg["grid"]["seeds"][0]
    cells = []
    for session in sessions:
        spec = session.spec
        name = cell_name(spec)
        model, history, errors = fit_cnn(session, pre, train_cfg)
        model.save(models / "cells" / f"{name}.model")
        if spec.speed is bundle_speed and spec.seed == bundle_seed:
            model.save(models / f"cnn_{spec.configuration.id}.model")
        lines = ["epoch train_mae val_mae lr"]
        for e, (a, b, lr) in enumerate(zip(history["train_mae"], history["val_mae"],
                                           history["lr"])):
            lines.append(f"{e} {a!r} {b!r} {lr!r}")
        (reports / f"cnn_history_{name}.txt").write_text("\n".join(lines) + "\n")
        cells += rmse_cells(spec, errors)
    _bundle_header(cfg, models)
    _write_resolved(cfg, out)
    return aggregate_rmse(cells)


def cmd_eval(cfg):
    out = Path(cfg["out"])
    models, reports = out / "models", out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    sessions = _load_sessions(cfg)
    svc_path = models / "svc.model"
    if not svc_path.exists():
        raise ModelFormatError(f"missing {svc_path} (run 'train-svc' first)")
    svc = SvcModel.load(svc_path)
    X, y = svc_dataset(sessions, _preprocess(cfg, "svc"))
    _, test = shuffled_split(len(y), cfg["svc"]["test_split"], cfg["svc"]["seed"])
    if test.size == 0:
        raise DataError("empty test set")
    pred = svc.predict(X[test])
    cm = ConfusionMatrix.from_labels(y[test], pred, svc.classes)
    acc = accuracy(y[test], np.array(pred, dtype=object))
    (reports / "confusion.csv").write_text(cm.to_csv())

    train_cfg = _train_config(cfg)
    pre = _preprocess(cfg, "cnn")
    cells = []
    for session in sessions:
        path = models / "cells" / f"{cell_name(session.spec)}.model"
        if not path.exists():
            raise ModelFormatError(f"missing {path} (run 'train-cnn' first)")
        model = cnn_mod.CnnModel.load(path)
        frames = session_features(session, pre)
        _, _, test_idx = cnn_mod.split_indices(len(frames), train_cfg)
        if test_idx.size == 0:
            raise DataError("empty CNN test split")
        p = np.clip(cnn_mod.predict_batch(model, frames[test_idx]), 0, 100)
        truth = session.angles.flexion[test_idx]
        errors = {f: rmse(truth[:, j], p[:, j])
                  for j, f in enumerate(FINGERS)}
        cells += rmse_cells(session.spec, errors)
    report = aggregate_rmse(cells)
    (reports / "rmse.txt").write_text(report.to_text())
    (reports / "rmse.kv").write_text(report.to_kv())
    summary = {"accuracy": repr(acc), "n_test": int(test.size),
               "rmse_grand_mean": repr(report.grand_mean)}
    for stage in ("svc", "cnn"):
        for k, v in _preprocess(cfg, stage).as_dict().items():
            summary[f"preprocess.{stage}.{k}"] = v
    (reports / "eval.kv").write_text(kv_text(summary))
    (reports / "eval.txt").write_text(
        f"SVC held-out accuracy: {acc:.2f}% on {test.size} frames\n\n"
        + cm.to_table() + "\n\n" + report.to_text())
    _write_resolved(cfg, out)
    return acc, cm, report


def cmd_demo(cfg, n_frames):
    out = Path(cfg["out"])
    bundle = load_bundle(out / "models")
    d = cfg["demo"]
    spec = SessionSpec(d["configuration"], d["speed"], seed=d["seed"], **cfg["generator"])
    n = min(int(n_frames), spec.n_frames)
    session = generate_session(spec)
    frames = session.frames[:n]
    results, summary = run_pipeline(bundle, frames, spec.configuration.id,
                                    session.angles.flexion[:n])
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    write_results(results, reports / "demo_results.jsonl")
    (reports / "demo_summary.txt").write_text(summary.to_kv())
    _write_resolved(cfg, out)
    return results, summary


def build_parser():
    p = argparse.ArgumentParser(prog="sonomyo", description=__doc__.split("\n")[1])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate", "train-svc", "train-cnn", "eval", "demo"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override every seed")
        sp.add_argument("--out", help="output directory")
        if name == "demo":
            sp.add_argument("--frames", type=int, default=100,
                            help="number of frames to stream (default 100)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.command == "generate":
            paths = cmd_generate(cfg)
            print(f"generated {len(paths)} sessions in {Path(cfg['out']) / 'sessions'}")
        elif args.command == "train-svc":
            model = cmd_train_svc(cfg)
            print(f"trained SVC over {len(model.classes)} classes, "
                  f"D={model.feature_dim}")
        elif args.command == "train-cnn":
            report = cmd_train_cnn(cfg)
            print(f"trained {len(report.cells) // 4} CNNs, "
                  f"test RMSE grand mean {report.grand_mean:.3f} deg")
        elif args.command == "eval":
            acc, _, report = cmd_eval(cfg)
            print(f"accuracy {acc:.2f}%  RMSE grand mean {report.grand_mean:.3f} deg")
        elif args.command == "demo":
            if args.frames < 0:
                raise ConfigError("--frames must be non-negative")
            _, summary = cmd_demo(cfg, args.frames)
            sys.stdout.write(summary.to_kv())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelFormatError, BundleError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, SonomyoError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
