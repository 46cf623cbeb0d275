"""Future feature regression end to end on a reduced corpus.

Trains the detector, caches bottleneck features for unlabeled episodes, fits
the K-frame future regressor, and compares predicted future boxes against the
episode's scripted truth. Takes several minutes.

Run:  python demos/03_future_regression.py
"""

import numpy as np

from handcast import detector as det
from handcast import evaluation as ev
from handcast import synthworld as sw
from handcast import training as tr
from handcast.types import HandClass

K, DELTA = 10, 10

print("== Stage 1: detector ==")
dset = sw.generate_detector_set(n_frames=300, seed=0)
net, _ = tr.train_hand_net(
    tr.TrainConfig(stage="handnet", seed=0, epochs=10, batch_size=8, learning_rate=3e-3),
    dset)
print("  done")

print("\n== Stage 2: feature cache from unlabeled episodes ==")
corpus = sw.generate_interaction_corpus(n_episodes=16, seed=77)
train_eps, test_eps = corpus[:12], corpus[12:]
cache = tr.build_feature_dataset(net, train_eps, k=K, delta=DELTA)
print(f"  {len(cache.pairs)} (window, target) pairs from {len(train_eps)} episodes")

print("\n== Stage 3: future regressor ==")
reg, report = tr.train_regressor(
    tr.TrainConfig(stage="regressor", seed=0, epochs=8, batch_size=8,
                   learning_rate=1.2e-3, k=K, delta=DELTA),
    cache)
copy_loss = np.mean([
    float(((cache.features[e][t] - cache.target(e, t)) ** 2).mean())
    for e, t in cache.pairs[:400]
])
print(f"  regression loss {report.final_loss:.4f} vs copy-last-frame {copy_loss:.4f}")

print("\n== Predict one second ahead on held-out episodes ==")
preds, truth = [], []
for ep in test_eps:
    p, t = ev.predict_episode(net, reg, ep, t_start=K - 1)
    preds.extend(p)
    truth.extend(t)
metrics = ev.evaluate_detections(preds, truth)
s = metrics.summary()
mpd = ev.mean_pixel_distance(preds, truth)
print(f"  future F-measure {s['f_measure_mean']:.3f}, mean pixel distance {mpd[0]:.1f} px")

ep = test_eps[0]
t = K - 1
dets = ev.predict_episode(net, reg, ep, t_start=t)[0][0]
true_future = ep.truth[t + DELTA].best_of_class(HandClass.MY_RIGHT)
pred_future = dets.best_of_class(HandClass.MY_RIGHT)
if pred_future and true_future:
    print(f"  example: predicted my-right at ({pred_future.cx:.2f},{pred_future.cy:.2f}), "
          f"truth ({true_future.cx:.2f},{true_future.cy:.2f})")

print("\n== Overlay triptych (input / prediction / true future) ==")
trip = ev.render_triptych(ep.frames[t], dets.boxes, ep.frames[t + DELTA])
ev.write_ppm("future_prediction_demo.ppm", trip)
print("  wrote future_prediction_demo.ppm")
