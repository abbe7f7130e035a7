# From a contour map to object proposals
#
# Train a small encoder-decoder for a few epochs, score its contour maps on
# held-out scenes, then turn each map into a region hierarchy and rank the
# regions as candidate objects. Exact contours give the ceiling.
#
# Takes two to three minutes on one core. Fewer than ~8 epochs leaves the
# detector too blurry for the region hierarchy to find whole objects.

import time

import numpy as np

from cedn.metrics import evaluate_contours
from cedn.model import NetworkConfig, TrainConfig, build_network, predict, train
from cedn.proposals import evaluate_proposals, proposals_from_contours
from cedn.synth import SceneSpec, generate_dataset

EPOCHS = 12

scenes = generate_dataset(SceneSpec(height=96, width=96, seed=0), 40)
train_scenes, test_scenes = scenes[:32], scenes[32:]

net = build_network(NetworkConfig.desk(), np.random.default_rng(0))
t0 = time.time()
log = train(net, [(s.image, s.contours) for s in train_scenes], TrainConfig.desk(epochs=EPOCHS, val_every=0))
print(f"trained {EPOCHS} epochs in {time.time() - t0:.0f}s, final loss {log[-1]['loss']:.3f}")

maps = [predict(net, s.image) for s in test_scenes]
rep = evaluate_contours(maps, [s.contours for s in test_scenes])
print(f"ODS {rep.ods_f:.3f} at t={rep.ods_t:.2f}  OIS {rep.ois_f:.3f}  AP {rep.ap:.3f}")

gts = [s.masks for s in test_scenes]
classes = [s.classes for s in test_scenes]
for name, cmaps in [("network", maps), ("exact contours", [s.contours.astype(float) for s in test_scenes])]:
    sets = [proposals_from_contours(m, 1000) for m in cmaps]
    pr = evaluate_proposals(sets, gts, classes)
    print(f"{name:15s} AR {pr['ar']:.3f}  ABO {pr['abo']:.3f}  ({pr['num_proposals']:.0f} proposals/image)")
    print("   per class:", {k: round(v, 2) for k, v in pr["per_class"].items()})
