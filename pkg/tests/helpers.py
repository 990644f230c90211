"""Independent oracles used across the test modules."""
import numpy as np

from sonomyo import cnn
from sonomyo.synthgen import SessionSpec


def tiny_spec(configuration="C1", speed="medium", **kw):
    base = dict(duration=4.0, frame_rate=25.0, image_height=48, image_width=16,
                seed=5, noise_level=0.1)
    base.update(kw)
    return SessionSpec(configuration, speed, **base)


def activation_pattern(model, x):
    """ReLU masks and max-pool winners, flattened: where the network is
    piecewise linear."""
    out, parts = np.asarray(x, float), []
    if out.ndim == 3:
        out = out[None]
    for layer in model.layers:
        if isinstance(layer, cnn.ReLU):
            parts.append((out > 0).ravel())
        out, cache = layer.forward(out)
        if isinstance(layer, cnn.MaxPool2D):
            parts.append(cache[0].ravel())
    return np.concatenate([p.astype(np.int64) for p in parts]) if parts else np.zeros(0)


def finite_difference(model, x, grad_out, h=1e-4):
    """Central differences of ``sum(grad_out * f(theta))`` for every parameter.

    Returns per-parameter arrays of estimates and a mask of elements whose
    +-h perturbation left the activation pattern intact (estimates across a
    kink do not approximate any derivative and are excluded).
    """
    base = activation_pattern(model, x)
    estimates, valid = [], []
    for _, _, p in model.parameters():
        est = np.zeros_like(p)
        ok = np.ones(p.shape, dtype=bool)
        for k in np.ndindex(p.shape):
            orig = p[k]
            p[k] = orig + h
            fp = np.sum(cnn.forward(model, x)[0] * grad_out)
            pat_p = activation_pattern(model, x)
            p[k] = orig - h
            fm = np.sum(cnn.forward(model, x)[0] * grad_out)
            pat_m = activation_pattern(model, x)
            p[k] = orig
            est[k] = (fp - fm) / (2 * h)
            ok[k] = np.array_equal(pat_p, base) and np.array_equal(pat_m, base)
        estimates.append(est)
        valid.append(ok)
    model.version += 1
    return estimates, valid


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def gradient_check(model, x, grad_out, h=1e-4):
    """Worst relative error over parameter tensors and the excluded fraction."""
    pred, cache = cnn.forward(model, x)
    analytic = cnn.backward(model, cache, grad_out)
    estimates, valid = finite_difference(model, x, grad_out, h)
    worst, excluded, total = 0.0, 0, 0
    for a, e, ok in zip(analytic, estimates, valid):
        worst = max(worst, relative_error(a[ok], e[ok]))
        excluded += int((~ok).sum())
        total += ok.size
    return worst, excluded / total


def randomize(model, rng, scale=0.5):
    for _, _, p in model.parameters():
        p[...] = rng.normal(0, scale, p.shape)
    model.version += 1
    return model


def count_peaks(values):
    """Local maxima of a 1-D profile; a flat top counts once."""
    v = np.asarray(values, float)
    peaks, i, n = 0, 1, v.size
    while i < n - 1:
        if v[i] > v[i - 1]:
            j = i
            while j < n - 1 and v[j + 1] == v[i]:
                j += 1
            if j < n - 1 and v[j + 1] < v[i]:
                peaks += 1
            i = j + 1
        else:
            i += 1
    return peaks
