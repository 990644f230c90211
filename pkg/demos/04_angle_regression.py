"""
Regressing MCP angles with a small CNN
======================================

Two VGG-style blocks, a dense head and Adam on the mean absolute error.
Training uses the first 70% of the session in time order.
"""

import numpy as np
from sonomyo import cnn
from sonomyo.experiment import fit_cnn
from sonomyo.preprocess import PreprocessConfig
from sonomyo.synthgen import SessionSpec, generate_session

session = generate_session(SessionSpec("C7", "medium", duration=20.0,
                                       image_height=159, image_width=64))
cfg = PreprocessConfig(53, 16)
model, history, errors = fit_cnn(session, cfg, cnn.TrainConfig(epochs=15))

print(model.descriptor)
print("train MAE by epoch:", np.round(history["train_mae"], 2))
print("held-out RMSE (deg):", {k: round(v, 2) for k, v in errors.items()})

###############################################################################
# Gradients are hand-written; a finite-difference spot check
net = cnn.micro_vgg((1, 8, 8), width=2, hidden=4, seed=1)
x = np.random.default_rng(0).normal(size=(1, 1, 8, 8))
pred, cache = cnn.forward(net, x)
analytic = cnn.backward(net, cache, np.ones((1, 4)))[-1]
b = net.layers[-2].params["bias"]
b[0] += 1e-5
up = cnn.forward(net, x)[0].sum()
b[0] -= 2e-5
down = cnn.forward(net, x)[0].sum()
b[0] += 1e-5
print(analytic[0], (up - down) / 2e-5)
