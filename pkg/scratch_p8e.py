"""CL-3D-only variants to widen the IoU gap (raw baseline is fixed)."""
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
                   intensity_noise=0.025, gamma_jitter_log2=1.0,
                   shift_jitter_px=2.0, section_field_strength=0.0, seed=21)
stack, truth = generate(spec)


def iou_of(fmaps):
    samples = collect_foreground(fmaps)
    model = kmeans(samples, 8, seed=0)
    labels = np.stack([assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                       .reshape(fm.data.shape[:2]) for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    return cross_section_iou(labels, masks)


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
print(f"raw IoU = {iou_of(raw_maps):.1f}", flush=True)

aug = AugmentationSpec(patch_size=96, crop_size=64)
encoder = EncoderConfig()
variants = [
    ("lr2e-3/2500/n16", dict(n_pairs=16, max_steps=2500, learning_rate=2e-3)),
    ("lr2e-3/2500/n24", dict(n_pairs=24, max_steps=2500, learning_rate=2e-3)),
]
for label, overrides in variants:
    config = TrainConfig(steps_per_epoch=100, val_batches=1, seed=3, **overrides)
    pair = PairSpec(mode="cl3d", radius_um=26.0, patch_side=96)
    t0 = time.time()
    state, history = train(stack, pair, aug, encoder, config)
    L = np.array(history["train_loss"])
    fmaps = [embed(rec.maps, state, tile=64, overlap=0.5, mask=rec.mask,
                   section_id=rec.section_id) for rec in stack.sections]
    print(f"{label}: {time.time()-t0:.0f}s loss {L[:10].mean():.2f}->{L[-10:].mean():.2f} "
          f"IoU {iou_of(fmaps):.1f}", flush=True)
