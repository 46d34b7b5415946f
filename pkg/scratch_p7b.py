"""P7 iteration with caching: confusion analysis, step count, probe l2."""
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from plitex.analysis import (evaluate_probe_classifier, fit_probe_classifier,
                             macro_f1, predict_classes, repeated_probe_f1,
                             subsample_per_class)
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed_patches, train
from plitex.phantoms import two_texture_benchmark
from plitex.sampling import PairSpec
from plitex.signal import ParameterMaps

CACHE = Path("/tmp/p7cache")
CACHE.mkdir(exist_ok=True)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000

stack, truth, _ = two_texture_benchmark(seed=11, size=512, n_sections=3,
                                        intensity_noise=0.01,
                                        gamma_jitter_log2=0.15, shift_jitter_px=1.5)

key = CACHE / f"feats_{steps}.pkl"
if key.exists():
    feats, labels, sections, hist_tail = pickle.loads(key.read_bytes())
else:
    pair = PairSpec(mode="cl3d", radius_um=118.0, patch_side=192)
    aug = AugmentationSpec()
    encoder = EncoderConfig()
    config = TrainConfig(n_pairs=16, max_steps=steps, steps_per_epoch=100,
                         val_batches=1, seed=0)
    t0 = time.time()
    state, history = train(stack, pair, aug, encoder, config)
    print(f"train {time.time()-t0:.0f}s  "
          f"loss {np.mean(history['train_loss'][:10]):.3f} -> "
          f"{np.mean(history['train_loss'][-10:]):.3f}")
    tile, stride = 128, 32
    feats, labels, sections = [], [], []
    for si, rec in enumerate(stack.sections):
        maps = rec.maps
        crops = []
        for top in range(0, 512 - tile + 1, stride):
            for left in range(0, 512 - tile + 1, stride):
                sl = (slice(top, top + tile), slice(left, left + tile))
                crops.append(ParameterMaps(maps.transmittance[sl], maps.direction[sl],
                                           maps.retardation[sl]))
                labels.append(truth.label[top + tile // 2, left + tile // 2])
                sections.append(si)
        feats.append(embed_patches(crops, state))
    feats = np.concatenate(feats)
    labels = np.array(labels)
    sections = np.array(sections)
    hist_tail = history["train_loss"][-10:]
    key.write_bytes(pickle.dumps((feats, labels, sections, hist_tail)))

train_mask = sections < 2
for l2 in (1.0, 0.1, 0.01):
    f1, err = repeated_probe_f1(feats[train_mask], labels[train_mask],
                                feats[~train_mask], labels[~train_mask],
                                n_per_class=30, repeats=10, seed=0, l2=l2)
    print(f"l2={l2}: macro F1 {f1:.4f} +- {err:.4f}")

# one fit for the confusion matrix
rng = np.random.default_rng(0)
idx = subsample_per_class(labels[train_mask], 30, rng)
model = fit_probe_classifier(feats[train_mask][idx], labels[train_mask][idx], l2=0.1)
pred = predict_classes(model, feats[~train_mask])
true = labels[~train_mask]
conf = np.zeros((3, 3), dtype=int)
for t, p in zip(true, pred):
    conf[t, p] += 1
print("confusion (rows true 0=BG 1=A 2=B):")
print(conf)
