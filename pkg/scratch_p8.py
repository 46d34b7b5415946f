"""Prototype P8 (IoU comparison) and P11 (depth regression) on a ring phantom."""
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from plitex.analysis import (cross_section_iou, evaluate_probe_regressor,
                             fit_probe_regressor, kmeans, assign)
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed, train
from plitex.features import collect_foreground
from plitex.phantoms import (Bundle, CortexBand, Crossing, Fan, PhantomSpec,
                             TangentialBand, generate)
from plitex.sampling import PairSpec

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500

prims = [
    TangentialBand(center=(256, 256), outer_radius=246, inner_radius=230),
    CortexBand(center=(256, 256), outer_radius=230, inner_radius=96, tilt_deg=20.0),
    Bundle(center=(256, 210), length=120, width=40, angle_deg=0.0,
           angle_drift_deg_per_px=0.3),
    Crossing(center=(256, 300), length=100, width=40, angle_a=0.0, angle_b=45.0,
             block=8.0),
    Fan(apex=(256, 256), radius_min=10, radius_max=80, angle_start_deg=165.0,
        angle_end_deg=195.0),
]
spec = PhantomSpec(height=512, width=512, primitives=prims, n_sections=6,
                   intensity_noise=0.015, gamma_jitter_log2=0.6, shift_jitter_px=2.0,
                   section_field_strength=0.25, section_field_scale_px=64.0, seed=21)
t0 = time.time()
stack, truth = generate(spec)
print(f"phantom {time.time()-t0:.0f}s  fg fraction {truth.label.astype(bool).mean():.2f}")

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
    fmaps = [embed(rec.maps, state, tile=64, overlap=0.5, mask=rec.mask,
                   section_id=rec.section_id) for rec in stack.sections]
    feature_maps[name] = fmaps

# raw-channel-patch baseline at the same tiling
from plitex.signal import stack_channels
from plitex.features import FeatureMap, downsample_mask, tile_grid

raw_maps = []
for rec in stack.sections:
    channels = stack_channels(rec.maps)
    tops, lefts = tile_grid(rec.maps.shape, 64, 32)
    feats = np.empty((tops.size, lefts.size, 3 * 8 * 8))
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            tile_block = channels[:, top:top + 64, left:left + 64]
            pooled = tile_block.reshape(3, 8, 8, 8, 8).mean(axis=(2, 4))
            feats[i, j] = pooled.ravel()
    raw_maps.append(FeatureMap(feats, downsample_mask(rec.mask, rec.maps.shape, 64, 32),
                               section_id=rec.section_id, extractor="raw", stride=32,
                               pixel_size_um=rec.maps.pixel_size))
feature_maps["raw"] = raw_maps

results = {}
for name, fmaps in feature_maps.items():
    samples = collect_foreground(fmaps)
    model = kmeans(samples, 8, seed=0)
    labels = np.stack([assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                       .reshape(fm.data.shape[:2]) for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    results[name] = cross_section_iou(labels, masks)
    print(f"{name}: IoU(8) = {results[name]:.1f}")

print(f"cl3d - raw = {results['cl3d'] - results['raw']:.1f} (need >= 10)")
print(f"cl3d - same = {results['cl3d'] - results['same']:.1f} (need > 0)")

# P11: cortical depth regression from CL-3D features
fmaps = feature_maps["cl3d"]
tops, lefts = tile_grid((512, 512), 64, 32)
feats, depths = [], []
for fm in fmaps:
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            window = truth.cortical_depth[top:top + 64, left:left + 64]
            frac = np.isfinite(window).mean()
            if frac >= 0.8:
                feats.append(fm.data[i, j])
                depths.append(np.nanmean(window))
feats = np.array(feats)
depths = np.array(depths)
print(f"depth samples: {len(depths)}")
rng = np.random.default_rng(0)
order = rng.permutation(len(depths))
half = len(depths) // 2
tr, te = order[:half], order[half:]
for l2 in (1e4, 100.0, 10.0, 1.0):
    model = fit_probe_regressor(feats[tr], depths[tr], l2=l2)
    r2 = evaluate_probe_regressor(model, feats[te], depths[te])
    print(f"l2={l2}: depth R^2 = {r2:.3f}")
Path("/tmp/p8_cache.pkl").write_bytes(pickle.dumps((results,)))
