import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import tiny_spec
from sonomyo.errors import ConfigError
from sonomyo.preprocess import (PreprocessConfig, block_pool, log_compress,
                                normalize, preprocess_array, preprocess_frame,
                                preprocess_session)
from sonomyo.synthgen import Session, generate_session, with_overrides
from sonomyo.kinematics import AngleStream, MarkerStream, TriggerStream
from sonomyo.synthgen import FrameArray, UltrasoundFrame


def test_constant_frame_gives_zeros():
    out = preprocess_array(np.full((8, 8), 0.7), PreprocessConfig(4, 4))
    np.testing.assert_array_equal(out, 0.0)


def test_log_endpoints():
    assert log_compress(0.0) == 0.0
    assert log_compress(1.0) == pytest.approx(1.0, abs=1e-15)


def test_hand_computed_2x2():
    x = np.arange(16, dtype=float).reshape(4, 4)
    n = x / 15.0
    y = np.log(1 + 1000 * n) / np.log(1001)
    expected = np.array([
        [(y[0, 0] + y[0, 1] + y[1, 0] + y[1, 1]) / 4, (y[0, 2] + y[0, 3] + y[1, 2] + y[1, 3]) / 4],
        [(y[2, 0] + y[2, 1] + y[3, 0] + y[3, 1]) / 4, (y[2, 2] + y[2, 3] + y[3, 2] + y[3, 3]) / 4]])
    out = preprocess_frame(UltrasoundFrame(x, 3), PreprocessConfig(2, 2))
    np.testing.assert_allclose(out.pixels, expected, rtol=1e-14)
    assert out.frame_index == 3


def test_identity_target_equals_normalized_log():
    x = np.random.default_rng(0).uniform(0, 5, (6, 4))
    out = preprocess_array(x, PreprocessConfig(6, 4))
    np.testing.assert_allclose(out, log_compress(normalize(x)), rtol=0, atol=0)


def test_dimension_mismatch_raises():
    with pytest.raises(ConfigError):
        preprocess_array(np.zeros((10, 10)), PreprocessConfig(3, 5))
    with pytest.raises(ConfigError):
        PreprocessConfig(4, 4, log_dynamic_range=1.0)


frames = arrays(np.float64, st.tuples(st.sampled_from([4, 8]), st.sampled_from([4, 8])),
                elements=st.floats(0, 1e3))


@given(frames)
def test_range_and_mean_preservation(x):
    cfg = PreprocessConfig(2, 2)
    out = preprocess_array(x, cfg)
    assert out.shape == (2, 2)
    assert (out >= 0).all() and (out <= 1 + 1e-12).all()
    inter = log_compress(normalize(x))
    assert out.mean() == pytest.approx(inter.mean(), abs=1e-6)


@given(st.floats(0, 1), st.floats(0, 1))
def test_log_strictly_monotone(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert log_compress(lo) < log_compress(hi)


def test_block_pool_batched():
    x = np.arange(32, dtype=float).reshape(2, 4, 4)
    out = block_pool(x, (2, 4))
    np.testing.assert_allclose(out[:, :, 0], [[3.5, 11.5], [19.5, 27.5]])


def test_session_preprocessing_keeps_labels():
    s = generate_session(tiny_spec())
    out = preprocess_session(s, PreprocessConfig(12, 8))
    assert len(out) == len(s) == 100
    assert out.frames.frame_shape == (12, 8)
    assert out.angles is s.angles and out.triggers is s.triggers
    np.testing.assert_allclose(out.frames.pixels(7),
                               preprocess_array(s.frames.pixels(7), PreprocessConfig(12, 8)),
                               rtol=1e-6)


def test_default_session_keeps_frame_count():
    spec = with_overrides(tiny_spec(), duration=56.0)
    out = preprocess_session(generate_session(spec), PreprocessConfig(6, 4))
    assert len(out) == 1400


def test_empty_session():
    spec = tiny_spec()
    empty = Session(spec, FrameArray(np.zeros((0, 48, 16), np.float32)),
                    AngleStream([], np.zeros((0, 4)), np.zeros((0, 4))),
                    TriggerStream([], []),
                    MarkerStream.from_frames([]))
    out = preprocess_session(empty, PreprocessConfig(12, 8))
    assert len(out) == 0 and out.frames.frame_shape == (12, 8)
