"""Diagnose cluster composition per method: structure vs section alignment."""
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from plitex.analysis import assign, cross_section_iou, kmeans
from plitex.augment import AugmentationSpec
from plitex.engine import EncoderConfig, TrainConfig, embed, train
from plitex.features import FeatureMap, collect_foreground, downsample_mask, tile_grid
from plitex.phantoms import (Bundle, CortexBand, Crossing, PhantomSpec,
                             TangentialBand, generate)
from plitex.sampling import PairSpec
from plitex.signal import stack_channels

CACHE = Path("/tmp/p8c.pkl")
steps = 500

prims = [
    TangentialBand(center=(256, 256), outer_radius=252, inner_radius=240),
    CortexBand(center=(256, 256), outer_radius=240, inner_radius=200, tilt_deg=15.0),
    Bundle(center=(186, 186), length=84, width=84, angle_deg=45.0, stripe_period=12.0),
    Bundle(center=(326, 186), length=84, width=84, angle_deg=45.0, stripe_period=32.0),
    Crossing(center=(186, 326), length=120, width=120, angle_a=0.0, angle_b=90.0, block=6.0),
    Crossing(center=(326, 326), length=120, width=120, angle_a=0.0, angle_b=90.0, block=16.0),
]
spec = PhantomSpec(height=512, width=512, primitives=prims, n_sections=6,
                   intensity_noise=0.015, gamma_jitter_log2=0.5, shift_jitter_px=2.0,
                   section_field_strength=0.2, section_field_scale_px=64.0, seed=21)
stack, truth = generate(spec)

if CACHE.exists():
    feature_maps = pickle.loads(CACHE.read_bytes())
else:
    pair_specs = {"cl3d": PairSpec(mode="cl3d", radius_um=26.0, patch_side=96),
                  "same": PairSpec(mode="same", patch_side=96)}
    aug = AugmentationSpec(patch_size=96, crop_size=64)
    encoder = EncoderConfig()
    feature_maps = {}
    for name, pair in pair_specs.items():
        config = TrainConfig(n_pairs=16, max_steps=steps, steps_per_epoch=100,
                             val_batches=1, seed=3)
        state, history = train(stack, pair, aug, encoder, config)
        L = np.array(history["train_loss"])
        print(f"{name}: loss {L[:10].mean():.3f}->{L[-10:].mean():.3f}")
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
    CACHE.write_bytes(pickle.dumps(feature_maps))

# truth labels at feature grid (majority)
tops, lefts = tile_grid((512, 512), 64, 32)
truth_grid = np.empty((tops.size, lefts.size), dtype=int)
for i, top in enumerate(tops):
    for j, left in enumerate(lefts):
        truth_grid[i, j] = np.bincount(truth.label[top:top + 64, left:left + 64].ravel(),
                                       minlength=7).argmax()

for name, fmaps in feature_maps.items():
    samples = collect_foreground(fmaps)
    model = kmeans(samples, 8, seed=0)
    labels = np.stack([assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                       .reshape(fm.data.shape[:2]) for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    iou = cross_section_iou(labels, masks)
    print(f"\n=== {name}: IoU {iou:.1f}")
    # cluster composition over (truth structure) and (section)
    for c in range(8):
        sel = (labels == c) & masks
        n = sel.sum()
        if n == 0:
            continue
        struct = np.bincount(np.broadcast_to(truth_grid, labels.shape)[sel], minlength=7)
        secs = np.bincount(np.where(sel)[0], minlength=6)
        print(f"  cluster {c} (n={n}): structures {struct}  sections {secs}")
