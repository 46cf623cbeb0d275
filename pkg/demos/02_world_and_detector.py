"""Generate a slice of the synthetic world and train a small hand detector.

Uses a reduced detector set so the demo finishes in about two minutes on a
laptop core; the full desk-scale recipe lives in the CLI (`handcast train`).

Run:  python demos/02_world_and_detector.py
"""

import numpy as np

from handcast import detector as det
from handcast import evaluation as ev
from handcast import synthworld as sw
from handcast import training as tr

print("== Render one scripted activity episode ==")
script = sw.make_script("PushTrivet", seed=4)
episode = sw.generate_episode(script, "demo_episode")
print(f"  kind={script.kind} frames={len(episode)} fps={episode.fps}")
print(f"  truth at t=0: {[b.cls.value for b in episode.truth[0].boxes]}")

print("\n== Train a detector on a small labeled set ==")
dset = sw.generate_detector_set(n_frames=220, seed=0)
train = sw.Episode("train", dset.frames[:200], dset.truth[:200], fps=1)
holdout = sw.Episode("val", dset.frames[200:], dset.truth[200:], fps=1)
config = tr.TrainConfig(stage="handnet", seed=0, epochs=10, batch_size=8,
                        learning_rate=3e-3)
net, report = tr.train_hand_net(config, train)
print(f"  epoch losses: {[round(l, 3) for l in report.epoch_losses]}")

print("\n== Score the held-out frames ==")
pixels = np.stack([f.pixels for f in holdout.frames])
features = det.encode_batch(net, pixels)
preds = det.detect_from_features_batch(net, features)
metrics = ev.evaluate_detections(preds, holdout.truth)
s = metrics.summary()
print(f"  precision {s['precision_mean']:.3f}  recall {s['recall_mean']:.3f}  "
      f"F-measure {s['f_measure_mean']:.3f}")

print("\n== Detections on one frame ==")
result = det.detect(net, holdout.frames[0])
for box in result.boxes:
    print(f"  {box.cls.value}: center=({box.cx:.2f},{box.cy:.2f}) score={box.score:.2f}")
print(f"  truth: {[(b.cls.value, round(b.cx, 2), round(b.cy, 2)) for b in holdout.truth[0].boxes]}")
