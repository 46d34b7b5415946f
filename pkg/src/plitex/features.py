"""Feature-map post-processing: tiling, smoothing, PCA.

Feature maps are downsampled rasters whose channels describe the local
texture of one section, produced either by the trained encoder or by the
classical descriptors on a sliding window.  The helpers here assemble such
maps, smooth them with a mask-aware Gaussian, and fit/apply a PCA reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .classical import EXTRACTORS, TexturePatch
from .errors import DataError, SectionSmallerThanTile, ShapeMismatch
from .signal import ParameterMaps


@dataclass
class FeatureMap:
    data: np.ndarray                 # (rows, cols, channels)
    mask: np.ndarray                 # (rows, cols) foreground at feature resolution
    section_id: str = ""
    extractor: str = ""
    stride: int = 1
    pixel_size_um: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 3:
            raise ShapeMismatch("feature data must be (rows, cols, channels)")
        if self.mask.shape != self.data.shape[:2]:
            raise ShapeMismatch("feature mask must match the feature raster")

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def resolution_um(self) -> float:
        """In-plane size of one feature pixel."""
        return self.pixel_size_um * self.stride


def tile_grid(shape: Tuple[int, int], tile: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-left corners of full tiles; partial border tiles are dropped."""
    h, w = shape
    if h < tile or w < tile:
        raise SectionSmallerThanTile(f"raster {shape} smaller than tile {tile}")
    tops = np.arange(0, h - tile + 1, stride)
    lefts = np.arange(0, w - tile + 1, stride)
    return tops, lefts


def downsample_mask(mask: Optional[np.ndarray], shape: Tuple[int, int],
                    tile: int, stride: int) -> np.ndarray:
    """Feature-resolution foreground: tiles with a majority of foreground pixels."""
    tops, lefts = tile_grid(shape, tile, stride)
    if mask is None:
        return np.ones((tops.size, lefts.size), dtype=bool)
    out = np.empty((tops.size, lefts.size), dtype=bool)
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            out[i, j] = mask[top:top + tile, left:left + tile].mean() > 0.5
    return out


def classical_feature_map(maps: ParameterMaps, method: str, tile: int = 128,
                          stride: Optional[int] = None, mask: Optional[np.ndarray] = None,
                          section_id: str = "") -> FeatureMap:
    """Sliding-window classical features over one section (50% overlap default)."""
    if method not in EXTRACTORS:
        raise DataError(f"unknown extractor '{method}'")
    extractor = EXTRACTORS[method]
    stride = stride or tile // 2
    tops, lefts = tile_grid(maps.shape, tile, stride)
    rows = []
    for top in tops:
        row = []
        for left in lefts:
            sl = (slice(top, top + tile), slice(left, left + tile))
            patch = TexturePatch(maps.transmittance[sl] / maps.incident,
                                 maps.retardation[sl], maps.direction[sl],
                                 section_id=section_id, x=int(left), y=int(top))
            row.append(extractor(patch).values)
        rows.append(row)
    data = np.asarray(rows)
    return FeatureMap(data=data, mask=downsample_mask(mask, maps.shape, tile, stride),
                      section_id=section_id, extractor=method, stride=stride,
                      pixel_size_um=maps.pixel_size)


def smooth(fmap: FeatureMap, sigma: float) -> FeatureMap:
    """Mask-aware in-plane Gaussian smoothing of every channel.

    Kernel weights are truncated at 4 sigma and renormalized over foreground,
    so background never bleeds into the tissue; background pixels become 0.
    """
    if sigma < 0:
        raise DataError("sigma must be non-negative")
    if sigma == 0:
        return FeatureMap(fmap.data.copy(), fmap.mask.copy(), fmap.section_id,
                          fmap.extractor, fmap.stride, fmap.pixel_size_um)
    fg = fmap.mask.astype(float)
    weight = ndimage.gaussian_filter(fg, sigma, truncate=4.0, mode="constant", cval=0.0)
    out = np.zeros_like(fmap.data)
    for c in range(fmap.channels):
        num = ndimage.gaussian_filter(fmap.data[..., c] * fg, sigma, truncate=4.0,
                                      mode="constant", cval=0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            channel = np.where(weight > 0, num / np.where(weight > 0, weight, 1.0), 0.0)
        out[..., c] = np.where(fmap.mask, channel, 0.0)
    return FeatureMap(out, fmap.mask.copy(), fmap.section_id, fmap.extractor,
                      fmap.stride, fmap.pixel_size_um)


@dataclass
class PcaModel:
    mean: np.ndarray                     # (channels,)
    components: np.ndarray               # (k, channels), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,), descending
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(samples: np.ndarray, k: int, max_samples: int = 1_000_000,
            seed: int = 0) -> PcaModel:
    """PCA of (n, channels) samples via SVD of the centered subsample.

    Signs follow a deterministic convention: the largest-magnitude loading of
    each component is positive.  If the data has fewer than ``k`` non-trivial
    directions the model is truncated and flagged rank-deficient.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ShapeMismatch("samples must be (n, channels)")
    n = samples.shape[0]
    if n <= k:
        raise DataError("need more samples than components")
    if n > max_samples:
        rng = np.random.default_rng(seed)
        samples = samples[rng.choice(n, size=max_samples, replace=False)]
        n = max_samples
    mean = samples.mean(axis=0)
    centered = samples - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals ** 2 / (n - 1)
    total = variances.sum()
    tol = max(svals[0], 1.0) * max(centered.shape) * np.finfo(float).eps
    rank = int(np.sum(svals > tol))
    kept = min(k, rank)
    components = vt[:kept].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    ratios = variances[:kept] / total if total > 0 else np.zeros(kept)
    return PcaModel(mean=mean, components=components,
                    explained_variance_ratio=ratios, rank_deficient=kept < k)


def project(data: np.ndarray, model: PcaModel) -> np.ndarray:
    """(x - mean) @ components.T for sample matrices or (h, w, c) rasters."""
    data = np.asarray(data, dtype=float)
    if data.shape[-1] != model.mean.shape[0]:
        raise ShapeMismatch("channel count does not match the PCA model")
    return (data - model.mean) @ model.components.T


def project_map(fmap: FeatureMap, model: PcaModel) -> FeatureMap:
    return FeatureMap(project(fmap.data, model), fmap.mask.copy(), fmap.section_id,
                      f"{fmap.extractor}+pca{model.k}", fmap.stride, fmap.pixel_size_um)


def component_map(fmap: FeatureMap, model: PcaModel, index: int) -> np.ndarray:
    """Per-pixel projection onto one component; background is 0."""
    if index >= model.k:
        raise DataError(f"component {index} not in model of size {model.k}")
    values = (fmap.data - model.mean) @ model.components[index]
    return np.where(fmap.mask, values, 0.0)


def collect_foreground(maps: Sequence[FeatureMap]) -> np.ndarray:
    """Stack foreground feature vectors from several sections into (n, c)."""
    parts = [fm.data[fm.mask] for fm in maps]
    if not parts:
        raise DataError("no feature maps given")
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Feature directory IO


def save_feature_maps(outdir, maps: Sequence[FeatureMap]) -> None:
    """Write per-section feature rasters plus masks and a meta.json."""
    import json
    from pathlib import Path
    from .containers import write_raster

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sections = []
    for fm in maps:
        write_raster(outdir / f"{fm.section_id}.plir", fm.data.astype(np.float32))
        write_raster(outdir / f"{fm.section_id}_mask.plir",
                     fm.mask.astype(np.uint8) * 255, ["foreground"])
        sections.append(fm.section_id)
    first = maps[0]
    meta = {"extractor": first.extractor, "stride": first.stride,
            "pixel_size_um": first.pixel_size_um, "channels": first.channels,
            "sections": sections}
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2))


def load_feature_maps(indir) -> List[FeatureMap]:
    import json
    from pathlib import Path
    from .containers import read_raster
    from .errors import FormatError

    indir = Path(indir)
    meta_path = indir / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{indir}: missing feature meta.json")
    meta = json.loads(meta_path.read_text())
    out = []
    for sid in meta["sections"]:
        data, _ = read_raster(indir / f"{sid}.plir")
        mask, _ = read_raster(indir / f"{sid}_mask.plir")
        out.append(FeatureMap(data.astype(float), mask[..., 0] > 127, section_id=sid,
                              extractor=meta.get("extractor", ""),
                              stride=int(meta.get("stride", 1)),
                              pixel_size_um=float(meta.get("pixel_size_um", 1.0))))
    return out
