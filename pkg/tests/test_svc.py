import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sonomyo.errors import DegenerateLabels, ModelFormatError, ShapeError
from sonomyo.svc import (SvcModel, confusion, predict_svc, shuffled_split,
                         train_svc)


def _separable_1d():
    X = np.array([[-1.0]] * 50 + [[1.0]] * 50)
    return X, ["A"] * 50 + ["B"] * 50


def test_separable_1d():
    X, y = _separable_1d()
    m = train_svc(X, y, lam=1e-3, epochs=20, seed=0)
    assert m.predict(X) == y
    assert predict_svc(m, X[0])[0] == "A" and predict_svc(m, X[-1])[0] == "B"
    h = m.history["objective"]
    assert (h[-1] <= h[0]).all()


def test_huge_lambda_collapses():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(-1, 0.3, (60, 3)), rng.normal(1, 0.3, (40, 3))])
    y = ["A"] * 60 + ["B"] * 40
    m = train_svc(X, y, lam=1e6, epochs=5)
    assert np.abs(m.weights).max() < 1e-5
    pred = m.predict(X)
    # with w ~ 0 only the biases decide, so one class wins everywhere
    assert len(set(pred)) == 1
    weak = train_svc(X, y, lam=1e-3, epochs=20)
    assert (np.array(weak.predict(X)) == np.array(y)).mean() == 1.0


def test_predict_examples():
    zero = SvcModel(("C1", "C2", "C3"), np.zeros((3, 2)), np.zeros(3), 1e-4)
    cid, scores = predict_svc(zero, [5.0, -3.0])
    assert cid == "C1"
    np.testing.assert_array_equal(scores, 0.0)
    hand = SvcModel(("pos", "neg"), [[1.0], [-1.0]], [0.0, 0.0], 1e-4)
    cid, scores = predict_svc(hand, [0.7])
    assert cid == "pos"
    np.testing.assert_allclose(scores, [0.7, -0.7])
    with pytest.raises(ShapeError):
        predict_svc(hand, [0.7, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_decision_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    w, b = rng.normal(size=(4, 5)), rng.normal(size=4)
    X = rng.normal(size=(30, 5))
    a = SvcModel(list("abcd"), w, b, 1.0)
    s = SvcModel(list("abcd"), w * scale, b * scale, 1.0)
    sa, ss = a.decision_function(X), s.decision_function(X)
    # skip rows whose top two scores are too close for float rounding
    top = np.sort(sa, axis=1)
    clear = (top[:, -1] - top[:, -2]) > 1e-9 * np.abs(top[:, -1]).max()
    assert np.array_equal(np.argmax(sa, 1)[clear], np.argmax(ss, 1)[clear])


def _blobs(seed=0, n=40, d=6, k=4):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, (k, d))
    X = np.concatenate([c + rng.normal(0, 0.5, (n, d)) for c in centers])
    y = [f"C{i + 1}" for i in range(k) for _ in range(n)]
    return X, y


def test_determinism_bytes():
    X, y = _blobs()
    a = train_svc(X, y, seed=4, epochs=5)
    b = train_svc(X, y, seed=4, epochs=5)
    assert a.to_bytes() == b.to_bytes()
    c = train_svc(X, y, seed=5, epochs=5)
    assert c.to_bytes() != a.to_bytes()


def test_best_so_far_non_increasing():
    X, y = _blobs(1)
    m = train_svc(X, y, lam=1e-2, epochs=15, batch_size=8)
    best = m.history["best"]
    assert best.shape == (16, 4)
    assert (np.diff(best, axis=0) <= 0).all()
    np.testing.assert_allclose(m.objective(X, y), best[-1], rtol=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("lam", [0.1, 0.01])
def test_brute_force_lattice_oracle(seed, lam):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 2.0], [2.0, -1.0], [-2.0, -1.0]])
    X = np.concatenate([c + rng.normal(0, 0.8, (3, 2)) for c in centers])
    y = ["a"] * 3 + ["b"] * 3 + ["c"] * 3
    m = train_svc(X, y, lam=lam, epochs=300, seed=seed, batch_size=3)
    trained = m.objective(X, y)
    grid = np.linspace(-4, 4, 81)
    W = np.array(list(itertools.product(grid, grid)))
    for c, name in enumerate("abc"):
        s = np.where(np.array(y) == name, 1.0, -1.0)
        lattice = min(
            np.min(0.5 * lam * (W ** 2).sum(1)
                   + np.maximum(0, 1 - s[None] * (W @ X.T + b)).mean(1))
            for b in grid)
        assert trained[c] <= 1.05 * lattice


def test_label_and_shape_errors():
    X, y = _separable_1d()
    with pytest.raises(DegenerateLabels):
        train_svc(X, ["A"] * len(y))
    with pytest.raises(ShapeError):
        train_svc(X, y[:-1])
    with pytest.raises(ShapeError):
        train_svc([[1.0, 2.0], [1.0]], ["A", "B"])
    with pytest.raises(DegenerateLabels):
        train_svc(X, y, classes=("A",))


def test_natural_class_order():
    X, y = _blobs(k=3)
    y = [{"C1": "C10", "C2": "C2", "C3": "C11"}[v] for v in y]
    m = train_svc(X, y, epochs=2)
    assert m.classes == ("C2", "C10", "C11")


def test_confusion_and_training_points():
    X, y = _blobs(2)
    m = train_svc(X, y, epochs=20)
    cm = confusion(m, X, y)
    assert cm.total == len(y) and cm.accuracy() == 100.0
    assert [predict_svc(m, X[i])[0] for i in (0, 50, 100)] == [y[0], y[50], y[100]]


def test_file_round_trip(tmp_path):
    X, y = _blobs(3)
    m = train_svc(X, y, lam=3e-4, epochs=4, seed=9, batch_size=16, split=0.3)
    m.save(tmp_path / "m.svc")
    back = SvcModel.load(tmp_path / "m.svc")
    assert back.classes == m.classes and back.lam == m.lam
    assert back.train_meta == {"seed": 9, "epochs": 4, "batch_size": 16, "split": 0.3}
    np.testing.assert_array_equal(back.decision_function(X), m.decision_function(X))
    assert back.to_bytes() == m.to_bytes()


def test_file_layout_and_corruption():
    m = SvcModel(("C1", "C2"), [[1.0, 2.0], [3.0, 4.0]], [0.5, -0.5], 1e-4)
    raw = m.to_bytes()
    assert raw[:8] == b"SONOSVC\0"
    assert raw[-16:] == np.array([0.5, -0.5], "<f8").tobytes()
    with pytest.raises(ModelFormatError):
        SvcModel.from_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ModelFormatError):
        SvcModel.from_bytes(raw[:-3])
    with pytest.raises(ModelFormatError):
        SvcModel.from_bytes(raw[:8] + b"\x07\0\0\0" + raw[12:])


def test_shuffled_split():
    train, test = shuffled_split(1000, 0.3, seed=1)
    assert len(test) == 300 and len(train) == 700
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(1000))
    again = shuffled_split(1000, 0.3, seed=1)
    assert np.array_equal(again[1], test)
    with pytest.raises(ValueError):
        shuffled_split(10, 1.0)
