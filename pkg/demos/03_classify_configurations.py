"""
Which hand configuration is this?
=================================

A one-vs-rest linear SVM on flattened, pooled frames.
"""

import numpy as np
from sonomyo.experiment import fit_svc
from sonomyo.preprocess import PreprocessConfig
from sonomyo.svc import confusion
from sonomyo.synthgen import CLASS_IDS, SessionSpec, generate_session

# all 11 configurations at every speed, 12 s each, small frames
sessions = [generate_session(SessionSpec(c, s, duration=12.0, image_height=160,
                                         image_width=64, seed=0))
            for c in CLASS_IDS for s in ("slow", "medium", "fast")]

cfg = PreprocessConfig(40, 16)
model, (X_test, y_test) = fit_svc(sessions, cfg, epochs=20)

cm = confusion(model, X_test, y_test)
print(cm.to_table())
print(f"held-out accuracy {cm.accuracy():.2f}%")

###############################################################################
# The per-class objective only ever improves on the kept iterate
print(np.round(model.history["best"][-1], 5))
