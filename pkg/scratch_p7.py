"""Prototype P7: benchmark training + probe at desk scale."""
import time

import numpy as np

from plitex.analysis import repeated_probe_f1
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed_patches, train
from plitex.phantoms import two_texture_benchmark
from plitex.sampling import PairSpec
from plitex.signal import ParameterMaps

t0 = time.time()
stack, truth, _ = two_texture_benchmark(seed=11, size=512, n_sections=3,
                                        intensity_noise=0.01,
                                        gamma_jitter_log2=0.15, shift_jitter_px=1.5)
print(f"phantom {time.time()-t0:.1f}s")

pair = PairSpec(mode="cl3d", radius_um=118.0, patch_side=192)
aug = AugmentationSpec()  # full default ranges, 192 -> 128
encoder = EncoderConfig()  # desk-scale default
config = TrainConfig(n_pairs=16, max_steps=400, steps_per_epoch=100, val_batches=1,
                     seed=0)
t0 = time.time()
state, history = train(stack, pair, aug, encoder, config)
t_train = time.time() - t0
L = np.array(history["train_loss"])
print(f"train {t_train:.0f}s  loss {L[:10].mean():.3f} -> {L[-10:].mean():.3f}")

# patch dataset: grid stride 32, center-pixel labels
tile, stride = 128, 32
feats, labels, sections = [], [], []
t0 = time.time()
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
print(f"embed {time.time()-t0:.0f}s  patches {feats.shape}  "
      f"class counts {np.bincount(labels)}")

train_mask = sections < 2
f1, err = repeated_probe_f1(feats[train_mask], labels[train_mask],
                            feats[~train_mask], labels[~train_mask],
                            n_per_class=30, repeats=10, seed=0, l2=1.0)
print(f"macro F1 {f1:.4f} +- {err:.4f}   total {time.time():.0f}")
