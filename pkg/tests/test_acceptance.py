"""
Acceptance suite: one printed PASS/FAIL line per criterion.

Runs at quarter image scale (159 x 64 raw frames, 53 x 16 model inputs)
so the whole suite finishes in minutes on one CPU core. Run with
``pytest tests/test_acceptance.py -v`` (the verdict lines bypass output
capture).
"""
import json
import math
import time

import numpy as np
import pytest

from helpers import gradient_check, randomize, relative_error
from sonomyo import cnn
from sonomyo.cli import main
from sonomyo.experiment import session_features
from sonomyo.kinematics import McpAngles, mcp_angle
from sonomyo.metrics import ConfusionMatrix, accuracy, rmse
from sonomyo.pipeline import ModelBundle, load_bundle, run_pipeline
from sonomyo.preprocess import PreprocessConfig, preprocess_array
from sonomyo.svc import SvcModel, shuffled_split, train_svc
from sonomyo.synthgen import (CLASS_IDS, SessionSpec, Speed, generate_session,
                              marker_positions, write_session)

pytestmark = pytest.mark.slow

RAW = dict(image_height=159, image_width=64, noise_level=0.1)
FEATURES = PreprocessConfig(53, 16)
RMSE_TARGET = 7.35
MIN_THROUGHPUT_HZ = 6.25


@pytest.fixture
def verdict(capsys):
    def report(number, name, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def grid():
    """Features and labels of the 11 x 3 synthetic grid, plus the sessions."""
    start = time.perf_counter()
    sessions, feats = {}, {}
    for c in CLASS_IDS:
        for s in Speed:
            session = generate_session(SessionSpec(c, s, seed=0, **RAW))
            sessions[c, s] = session
            feats[c, s] = session_features(session, FEATURES)
    return sessions, feats, time.perf_counter() - start


@pytest.fixture(scope="module")
def svc_run(grid):
    sessions, feats, gen_seconds = grid
    start = time.perf_counter()
    X = np.concatenate([f.reshape(len(f), -1) for f in feats.values()])
    y = np.concatenate([[c] * len(f) for (c, _), f in feats.items()]).astype(object)
    train, test = shuffled_split(len(y), 0.3, seed=0)
    model = train_svc(X[train], y[train], seed=0, classes=CLASS_IDS)
    acc = accuracy(y[test], np.array(model.predict(X[test]), dtype=object))
    return model, acc, len(test), gen_seconds + time.perf_counter() - start


@pytest.fixture(scope="module")
def cnn_run(grid):
    sessions, feats, _ = grid
    cfg = cnn.TrainConfig()
    start = time.perf_counter()
    models, errors = {}, {}
    for c in CLASS_IDS:
        frames = feats[c, Speed.MEDIUM]
        angles = sessions[c, Speed.MEDIUM].angles.flexion
        models[c], _ = cnn.train_cnn(frames, angles, cfg)
        _, _, test = cnn.split_indices(len(frames), cfg)
        pred = np.clip(cnn.predict_batch(models[c], frames[test]), 0, 100)
        errors[c] = [rmse(angles[test, j], pred[:, j]) for j in range(4)]
    return models, errors, time.perf_counter() - start


# 1 -------------------------------------------------------------------------

def test_1_angle_geometry(verdict):
    rng = np.random.default_rng(0)
    q = rng.standard_normal(4)
    a, b, c, d = q / np.linalg.norm(q)
    rot = np.array([[a*a + b*b - c*c - d*d, 2*(b*c - a*d), 2*(b*d + a*c)],
                    [2*(b*c + a*d), a*a - b*b + c*c - d*d, 2*(c*d - a*b)],
                    [2*(b*d - a*c), 2*(c*d + a*b), a*a - b*b - c*c + d*d]])
    worst = 0.0
    for theta, display in ((0, 180), (30, 210), (60, 240), (90, 270)):
        pos = marker_positions([[theta] * 4], rot, rng.uniform(-500, 500, 3))[0]
        for j in range(4):
            flex = mcp_angle(*pos[j])
            got = McpAngles.from_flexion([flex] * 4).display_angle[0]
            worst = max(worst, abs(got - display))
    verdict(1, "angle geometry", worst <= 1e-9, f"max display error {worst:.2e} deg")


# 2 -------------------------------------------------------------------------

def _layer_fd(layer, x, rng, h=1e-4):
    y, cache = layer.forward(x)
    g = rng.normal(size=y.shape)
    dx, grads = layer.backward(g, cache)
    worst = 0.0
    targets = [("input", x, dx)] + [(k, v, grads[k]) for k, v in layer.params.items()]
    for _, arr, analytic in targets:
        fd = np.zeros_like(arr)
        for k in np.ndindex(arr.shape):
            o = arr[k]
            arr[k] = o + h
            fp = np.sum(layer.forward(x)[0] * g)
            arr[k] = o - h
            fm = np.sum(layer.forward(x)[0] * g)
            arr[k] = o
            fd[k] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic, fd))
    return worst


def test_2_gradient_oracle(verdict):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        # well-separated inputs keep every +-h step on one linear piece
        spread = rng.permutation((np.arange(40) - 19.5) * 0.05).reshape(1, 2, 5, 4)
        conv = cnn.Conv2D(2, 3)
        dense = cnn.Dense(6, 4)
        for layer in (conv, dense):
            for p in layer.params.values():
                p[...] = rng.normal(size=p.shape)
        for layer, x in ((conv, spread.copy()), (cnn.ReLU(), spread.copy()),
                         (cnn.MaxPool2D(), spread.copy()), (cnn.Flatten(), spread.copy()),
                         (cnn.Scale(10.0), spread.copy()), (dense, rng.normal(size=(3, 6)))):
            worst = max(worst, _layer_fd(layer, x, rng))
        net = randomize(cnn.micro_vgg((1, 8, 6), width=2, hidden=5), rng)
        err, _ = gradient_check(net, rng.normal(size=(2, 1, 8, 6)), rng.normal(size=(2, 4)))
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    verdict(2, "gradient oracle", worst < 1e-4 and elapsed < 60,
            f"worst relative error {worst:.2e} over 20 seeds, {elapsed:.1f} s")


# 3 -------------------------------------------------------------------------

def test_3_classification(verdict, svc_run):
    _, acc, n_test, seconds = svc_run
    verdict(3, "SVC classification", acc >= 99.0 and seconds < 600,
            f"held-out accuracy {acc:.2f}% on {n_test} frames, {seconds:.0f} s")


# 4 -------------------------------------------------------------------------

def test_4_regression(verdict, cnn_run):
    _, errors, seconds = cnn_run
    good = [c for c, e in errors.items() if max(e) <= RMSE_TARGET]
    worst = max(errors, key=lambda c: max(errors[c]))
    ok = len(good) >= 9 and seconds < 1800
    verdict(4, "CNN regression", ok,
            f"{len(good)}/11 configurations with every finger <= {RMSE_TARGET} deg; "
            f"worst {worst} {max(errors[worst]):.2f} deg; {seconds:.0f} s")


# 5 -------------------------------------------------------------------------

def test_5_metric_oracles(verdict):
    checks = [
        abs(rmse([0, 0], [3, 4]) - math.sqrt(12.5)) <= 1e-12,
        accuracy(list("abc"), list("abc")) == 100.0,
        accuracy(list("abc"), list("bca")) == 0.0,
    ]
    rng = np.random.default_rng(5)
    yt = rng.choice(CLASS_IDS, 500)
    yp = np.where(rng.random(500) < 0.8, yt, rng.choice(CLASS_IDS, 500))
    cm = ConfusionMatrix.from_labels(yt, yp, CLASS_IDS)
    checks.append(int(np.trace(cm.counts)) == int(np.sum(yt == yp)))
    checks.append(cm.accuracy() == accuracy(yt, yp))
    verdict(5, "metric oracles", all(checks), f"{sum(checks)}/{len(checks)} identities hold")


# 6 -------------------------------------------------------------------------

class RecordingSvc(SvcModel):
    def decision_function(self, X):
        scores = super().decision_function(X)
        self.log.append(self.classes[int(np.argmax(scores))])
        return scores


class RecordingModels(dict):
    def __getitem__(self, key):
        self.log.append(key)
        return super().__getitem__(key)


def _instrumented_bundle(svc, cnns):
    rec = RecordingSvc(svc.classes, svc.weights, svc.biases, svc.lam, svc.train_meta)
    rec.log = []
    models = RecordingModels(cnns)
    models.log = []
    return ModelBundle(rec, models, FEATURES, FEATURES)


def test_6_pipeline(verdict, svc_run, cnn_run):
    bundle = _instrumented_bundle(svc_run[0], cnn_run[0])
    demo = generate_session(SessionSpec("C1", "medium", seed=1000, **RAW))
    frames = demo.frames[:100]
    results, summary = run_pipeline(bundle, frames, "C1", demo.angles.flexion[:100])
    ordered = (bundle.svc.log == bundle.cnn_by_configuration.log
               == [r.configuration for r in results]) and len(results) == 100
    for r in results:
        expect = cnn.predict_angles(bundle.cnn_by_configuration.get(r.configuration),
                                    preprocess_array(frames[r.frame_index].pixels, FEATURES))
        ordered &= np.array_equal(expect.flexion, r.angles.flexion)
    timed = all(r.svc_seconds > 0 and r.cnn_seconds > 0 for r in results)

    # throughput again on full-size 636 x 256 frames (pooled by 12 x 16)
    big = PreprocessConfig(53, 16)
    full = generate_session(SessionSpec("C1", "medium", seed=1000))
    full_bundle = ModelBundle(svc_run[0], cnn_run[0], big, big)
    _, full_summary = run_pipeline(full_bundle, full.frames[:100])
    hz = min(summary.throughput_hz, full_summary.throughput_hz)
    verdict(6, "pipeline throughput and ordering",
            ordered and timed and hz >= MIN_THROUGHPUT_HZ,
            f"ordering holds on {len(results)} frames; {summary.throughput_hz:.0f} Hz at "
            f"159x64, {full_summary.throughput_hz:.0f} Hz at 636x256; "
            f"svc mean {summary.svc_seconds['mean'] * 1e3:.2f} ms, "
            f"cnn mean {summary.cnn_seconds['mean'] * 1e3:.2f} ms; "
            f"accuracy {summary.accuracy:.0f}%, worst finger RMSE "
            f"{max(summary.rmse_by_finger.values()):.2f} deg")


def test_6b_demo_quality(svc_run, cnn_run):
    bundle = ModelBundle(svc_run[0], cnn_run[0], FEATURES, FEATURES)
    demo = generate_session(SessionSpec("C1", "medium", seed=1000, **RAW))
    results, summary = run_pipeline(bundle, demo.frames[:100], "C1",
                                    demo.angles.flexion[:100])
    assert sum(r.configuration == "C1" for r in results) >= 99
    assert max(summary.rmse_by_finger.values()) <= RMSE_TARGET


# 7 -------------------------------------------------------------------------

def _tree(root, skip=()):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def test_7_determinism_and_round_trip(verdict, tmp_path, svc_run, cnn_run, grid):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "grid": {"configurations": ["C1", "C6", "C10", "C11"], "speeds": ["medium", "fast"],
                 "seeds": [3]},
        "generator": {"duration": 4.0, "image_height": 48, "image_width": 16},
        "preprocess": {"svc": {"target_height": 12, "target_width": 8},
                       "cnn": {"target_height": 12, "target_width": 8}},
        "svc": {"epochs": 5}, "cnn": {"epochs": 3}}))
    trees = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        codes = [main([c, "--config", str(cfg), "--out", out])
                 for c in ("generate", "train-svc", "train-cnn", "eval")]
        assert codes == [0] * 4
        tree = _tree(tmp_path / name, skip=("config.resolved.json",))
        trees.append(tree)
    identical = trees[0] == trees[1]
    kinds = {k.split("/")[0] for k in trees[0]}

    # in-memory vs save -> load predictions, both model types
    sessions, feats, _ = grid
    X = feats["C4", Speed.FAST][:200]
    svc = svc_run[0]
    svc.save(tmp_path / "svc.model")
    svc_back = SvcModel.load(tmp_path / "svc.model")
    same = np.array_equal(svc.decision_function(X.reshape(len(X), -1)),
                          svc_back.decision_function(X.reshape(len(X), -1)))
    for c, m in cnn_run[0].items():
        m.save(tmp_path / f"{c}.model")
        back = cnn.CnnModel.load(tmp_path / f"{c}.model", m.descriptor)
        same &= np.array_equal(cnn.predict_batch(m, X), cnn.predict_batch(back, X))
    bundle = ModelBundle(svc, cnn_run[0], FEATURES, FEATURES)
    bundle.save(tmp_path / "bundle")
    frames = sessions["C9", Speed.SLOW].frames[:20]
    a, _ = run_pipeline(bundle, frames)
    b, _ = run_pipeline(load_bundle(tmp_path / "bundle"), frames)
    same &= all(x.configuration == y.configuration
                and np.array_equal(x.angles.flexion, y.angles.flexion) for x, y in zip(a, b))

    s1 = write_session(sessions["C2", Speed.SLOW], tmp_path / "s1")
    s2 = write_session(generate_session(SessionSpec("C2", "slow", seed=0, **RAW)), tmp_path / "s2")
    identical &= _tree(s1) == _tree(s2)
    verdict(7, "determinism and round trip", identical and same,
            f"{len(trees[0])} files byte-identical across reruns ({', '.join(sorted(kinds))}); "
            f"save/load predictions bit-identical: {same}")


# 8 -------------------------------------------------------------------------

def test_8_split_arithmetic(verdict):
    train, val, test = cnn.split_indices(1400, cnn.TrainConfig())
    got = (len(test), len(val), len(train))
    verdict(8, "split arithmetic", got == (420, 98, 882),
            f"test {got[0]}, validation {got[1]}, train {got[2]}")
