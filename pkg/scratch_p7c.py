"""P7 at crop 64 with pure-patch probe protocol."""
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from plitex.analysis import repeated_probe_f1
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed_patches, train
from plitex.phantoms import two_texture_benchmark
from plitex.sampling import PairSpec
from plitex.signal import ParameterMaps

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 800
n_pairs = int(sys.argv[2]) if len(sys.argv) > 2 else 16

stack, truth, _ = two_texture_benchmark(seed=11, size=512, n_sections=3,
                                        intensity_noise=0.01,
                                        gamma_jitter_log2=0.15, shift_jitter_px=1.5)
print("class areas", np.bincount(truth.label.ravel()))

pair = PairSpec(mode="cl3d", radius_um=118.0, patch_side=96)
aug = AugmentationSpec(patch_size=96, crop_size=64)
encoder = EncoderConfig()
config = TrainConfig(n_pairs=n_pairs, max_steps=steps, steps_per_epoch=100,
                     val_batches=1, seed=0)
t0 = time.time()
state, history = train(stack, pair, aug, encoder, config)
t_train = time.time() - t0
L = np.array(history["train_loss"])
print(f"train {t_train:.0f}s ({t_train/steps*1000:.0f} ms/step)  "
      f"loss {L[:10].mean():.3f} -> {L[-10:].mean():.3f}")

tile, stride = 64, 32
feats, labels, sections, purity = [], [], [], []
t0 = time.time()
for si, rec in enumerate(stack.sections):
    maps = rec.maps
    crops = []
    for top in range(0, 512 - tile + 1, stride):
        for left in range(0, 512 - tile + 1, stride):
            sl = (slice(top, top + tile), slice(left, left + tile))
            crops.append(ParameterMaps(maps.transmittance[sl], maps.direction[sl],
                                       maps.retardation[sl]))
            counts = np.bincount(truth.label[sl].ravel(), minlength=3)
            labels.append(counts.argmax())
            purity.append(counts.max() / counts.sum())
            sections.append(si)
    feats.append(embed_patches(crops, state))
feats = np.concatenate(feats)
labels = np.array(labels)
sections = np.array(sections)
purity = np.array(purity)
print(f"embed {time.time()-t0:.0f}s")

for min_purity in (0.0, 0.9):
    keep = purity >= min_purity
    tr = keep & (sections < 2)
    te = keep & (sections == 2)
    print(f"purity>={min_purity}: counts train {np.bincount(labels[tr], minlength=3)} "
          f"test {np.bincount(labels[te], minlength=3)}")
    for l2 in (0.1, 0.01):
        f1, err = repeated_probe_f1(feats[tr], labels[tr], feats[te], labels[te],
                                    n_per_class=30, repeats=10, seed=0, l2=l2)
        print(f"  l2={l2}: macro F1 {f1:.4f} +- {err:.4f}")
Path("/tmp/p7c_state.pkl").write_bytes(pickle.dumps((feats, labels, sections, purity)))
