"""P8 take 3: laminar depth-band phantom, gamma jitter kills raw, noise kills Same."""
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from plitex.analysis import (assign, cross_section_iou, evaluate_probe_regressor,
                             fit_probe_regressor, kmeans)
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed, train
from plitex.features import FeatureMap, collect_foreground, downsample_mask, tile_grid
from plitex.phantoms import (Bundle, CortexBand, Crossing, PhantomSpec,
                             TangentialBand, generate)
from plitex.sampling import PairSpec
from plitex.signal import stack_channels

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
gamma_jitter = float(sys.argv[2]) if len(sys.argv) > 2 else 0.8
noise = float(sys.argv[3]) if len(sys.argv) > 3 else 0.025

prims = [
    TangentialBand(center=(256, 256), outer_radius=252, inner_radius=240),
    CortexBand(center=(256, 256), outer_radius=240, inner_radius=120, tilt_deg=15.0,
               base_density=0.30, depth_gain=0.45, band_amp=0.18, band_freq=4.0),
    Bundle(center=(256, 218), length=120, width=36, angle_deg=0.0,
           angle_drift_deg_per_px=0.4),
    Crossing(center=(256, 298), length=120, width=36, angle_a=0.0, angle_b=45.0,
             block=6.0),
]
spec = PhantomSpec(height=512, width=512, primitives=prims, n_sections=6,
                   intensity_noise=noise, gamma_jitter_log2=gamma_jitter,
                   shift_jitter_px=2.0, section_field_strength=0.0, seed=21)
stack, truth = generate(spec)
print(f"fg={truth.label.astype(bool).mean():.2f} jitter={gamma_jitter} noise={noise}")

pair_specs = {"cl3d": PairSpec(mode="cl3d", radius_um=26.0, patch_side=96),
              "same": PairSpec(mode="same", patch_side=96)}
aug = AugmentationSpec(patch_size=96, crop_size=64)
encoder = EncoderConfig()

feature_maps = {}
states = {}
for name, pair in pair_specs.items():
    config = TrainConfig(n_pairs=16, max_steps=steps, steps_per_epoch=100,
                         val_batches=1, seed=3)
    t0 = time.time()
    state, history = train(stack, pair, aug, encoder, config)
    L = np.array(history["train_loss"])
    print(f"{name}: train {time.time()-t0:.0f}s loss {L[:10].mean():.3f}->{L[-10:].mean():.3f}")
    feature_maps[name] = [embed(rec.maps, state, tile=64, overlap=0.5, mask=rec.mask,
                                section_id=rec.section_id) for rec in stack.sections]
    states[name] = state

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

ious = {}
for name, fmaps in feature_maps.items():
    samples = collect_foreground(fmaps)
    model = kmeans(samples, 8, seed=0)
    labels = np.stack([assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                       .reshape(fm.data.shape[:2]) for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    ious[name] = cross_section_iou(labels, masks)
    print(f"{name}: IoU(8) = {ious[name]:.1f}")
print(f"cl3d-raw = {ious['cl3d']-ious['raw']:.1f} (>=10)  "
      f"cl3d-same = {ious['cl3d']-ious['same']:.1f} (>0)")

# P11 on the same run
tops, lefts = tile_grid((512, 512), 64, 32)
feats, depths = [], []
for fm in feature_maps["cl3d"]:
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            window = truth.cortical_depth[top:top + 64, left:left + 64]
            if np.isfinite(window).mean() >= 0.8:
                feats.append(fm.data[i, j])
                depths.append(np.nanmean(window))
feats = np.array(feats)
depths = np.array(depths)
rng = np.random.default_rng(0)
order = rng.permutation(len(depths))
half = len(depths) // 2
for l2 in (10.0, 1.0):
    model = fit_probe_regressor(feats[order[:half]], depths[order[:half]], l2=l2)
    r2 = evaluate_probe_regressor(model, feats[order[half:]], depths[order[half:]])
    print(f"depth R^2 (l2={l2}) = {r2:.3f}  (n={len(depths)})")
