"""
The combined frame-by-frame predictor
=====================================

The classifier names the configuration, then that configuration's CNN
predicts the four angles. Every stage is timed.
"""

import tempfile

from sonomyo import cnn
from sonomyo.experiment import fit_cnn, fit_svc
from sonomyo.pipeline import ModelBundle, load_bundle, run_pipeline
from sonomyo.preprocess import PreprocessConfig
from sonomyo.synthgen import SessionSpec, generate_session

configs = ("C1", "C4", "C10")
dims = dict(duration=16.0, image_height=159, image_width=64)
cfg = PreprocessConfig(53, 16)

sessions = {c: generate_session(SessionSpec(c, "medium", **dims)) for c in configs}
svc, _ = fit_svc(list(sessions.values()), cfg, epochs=10)
cnns = {c: fit_cnn(s, cfg, cnn.TrainConfig(epochs=15))[0] for c, s in sessions.items()}

# save and reload, as a deployed predictor would
with tempfile.TemporaryDirectory() as tmp:
    ModelBundle(svc, cnns, cfg, cfg).save(tmp)
    bundle = load_bundle(tmp)

###############################################################################
# A fresh recording the models have not seen
live = generate_session(SessionSpec("C4", "medium", seed=99, **dims))
results, summary = run_pipeline(bundle, live.frames[:100], "C4",
                                live.angles.flexion[:100])
for r in results[:5]:
    print(r.frame_index, r.configuration, r.angles.flexion.round(1))
print(summary.to_kv())
