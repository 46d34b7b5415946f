"""P8 redesign: magnitude-coded distinctions so the raw baseline is fragile."""
import sys
import time

import numpy as np

from plitex.analysis import assign, cross_section_iou, kmeans
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed, train
from plitex.features import FeatureMap, collect_foreground, downsample_mask, tile_grid
from plitex.phantoms import (Bundle, CortexBand, Crossing, PhantomSpec,
                             TangentialBand, generate)
from plitex.sampling import PairSpec
from plitex.signal import stack_channels

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500

# four big quadrant textures, same orientation statistics inside each pair,
# distinguished by texture scale (structural) and magnitude only
prims = [
    TangentialBand(center=(256, 256), outer_radius=252, inner_radius=240),
    CortexBand(center=(256, 256), outer_radius=240, inner_radius=200, tilt_deg=15.0),
    Bundle(center=(186, 186), length=84, width=84, angle_deg=45.0,
           stripe_period=12.0),
    Bundle(center=(326, 186), length=84, width=84, angle_deg=45.0,
           stripe_period=32.0),
    Crossing(center=(186, 326), length=120, width=120, angle_a=0.0, angle_b=90.0,
             block=6.0),
    Crossing(center=(326, 326), length=120, width=120, angle_a=0.0, angle_b=90.0,
             block=16.0),
]
spec = PhantomSpec(height=512, width=512, primitives=prims, n_sections=6,
                   intensity_noise=0.015, gamma_jitter_log2=0.5, shift_jitter_px=2.0,
                   section_field_strength=0.2, section_field_scale_px=64.0, seed=21)
t0 = time.time()
stack, truth = generate(spec)
print(f"phantom {time.time()-t0:.0f}s fg={truth.label.astype(bool).mean():.2f}")

pair_specs = {"cl3d": PairSpec(mode="cl3d", radius_um=26.0, patch_side=96),
              "same": PairSpec(mode="same", patch_side=96)}
aug = AugmentationSpec(patch_size=96, crop_size=64)
encoder = EncoderConfig()

feature_maps = {}
for name, pair in pair_specs.items():
    config = TrainConfig(n_pairs=16, max_steps=steps, steps_per_epoch=100,
                         val_batches=1, seed=3)
    t0 = time.time()
    state, history = train(stack, pair, aug, encoder, config)
    L = np.array(history["train_loss"])
    print(f"{name}: train {time.time()-t0:.0f}s loss {L[:10].mean():.3f}->{L[-10:].mean():.3f}")
    feature_maps[name] = [embed(rec.maps, state, tile=64, overlap=0.5, mask=rec.mask,
                                section_id=rec.section_id) for rec in stack.sections]

raw_maps = []
for rec in stack.sections:
    channels = stack_channels(rec.maps)
    tops, lefts = tile_grid(rec.maps.shape, 64, 32)
    feats = np.empty((tops.size, lefts.size, 3 * 8 * 8))
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            block = channels[:, top:top + 64, left:left + 64]
            feats[i, j] = block.reshape(3, 8, 8, 8, 8).mean(axis=(2, 4)).ravel()
    raw_maps.append(FeatureMap(feats, downsample_mask(rec.mask, rec.maps.shape, 64, 32),
                               section_id=rec.section_id, extractor="raw", stride=32))
feature_maps["raw"] = raw_maps

for name, fmaps in feature_maps.items():
    samples = collect_foreground(fmaps)
    model = kmeans(samples, 8, seed=0)
    labels = np.stack([assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                       .reshape(fm.data.shape[:2]) for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    print(f"{name}: IoU(8) = {cross_section_iou(labels, masks):.1f}")
