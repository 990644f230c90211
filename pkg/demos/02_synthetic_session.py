"""
A synthetic recording session
=============================

Each session alternates between the open hand and one configuration at a
cued speed. Frames come from a small forward model: one bright band per
finger that moves down the image as the finger flexes.
"""

import numpy as np
from sonomyo.preprocess import PreprocessConfig, preprocess_session
from sonomyo.synthgen import CONFIGURATIONS, SessionSpec, generate_session

for c in CONFIGURATIONS.values():
    print(f"{c.id:5} {c.name:15} {c.amplitudes}")

###############################################################################
# A full-length session at reduced image size
spec = SessionSpec("C6", "medium", image_height=159, image_width=64, seed=3)
session = generate_session(spec)
print(len(session), "frames,", len(session.mocap), "mocap samples")

# flexion of index and middle over the first two cycles
print(session.angles.flexion[:100:5, :2].round(1))

###############################################################################
# Frames are rendered on demand; any frame can be asked for directly
px = session.frames.pixels(25)
print(px.shape, px.dtype, float(px.min()), float(px.max()))

###############################################################################
# Normalize, log-compress and block-pool to model size
small = preprocess_session(session, PreprocessConfig(53, 16))
print(small.frames.frame_shape, np.round(small.frames.pixels(25).mean(), 4))
