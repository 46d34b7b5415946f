"""Classical texture descriptors used as baselines.

A texture patch is described by three prepared rasters: normalized
transmittance, retardation, and a circular Sobel response of the direction
map.  On top of these, three descriptor families are provided:

* first-order histogram statistics (mean, variance, skewness, kurtosis,
  entropy from a 128-bin histogram),
* rotation-invariant uniform local binary patterns (8 points, radii 1/2/3,
  10 codes each),
* gray-level co-occurrence matrices (32 levels, distances 1/2/4, four angles
  averaged) with contrast, correlation, energy and homogeneity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeMismatch
from .signal import ParameterMaps
from .signal import direction_phasor

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T

MAP_NAMES = ("transmittance", "retardation", "direction_edges")
LBP_RADII = (1, 2, 3)
GLCM_LEVELS = 32
GLCM_DISTANCES = (1, 2, 4)
GLCM_ANGLES_DEG = (0, 45, 90, 135)
GLCM_STATS = ("contrast", "correlation", "energy", "homogeneity")


@dataclass
class TexturePatch:
    """Square window of normalized parameter maps with its provenance."""

    transmittance: np.ndarray  # I_T / I_0
    retardation: np.ndarray
    direction: np.ndarray      # degrees [0, 180)
    section_id: str = ""
    x: int = 0
    y: int = 0

    def __post_init__(self):
        shape = self.transmittance.shape
        if self.retardation.shape != shape or self.direction.shape != shape:
            raise ShapeMismatch("patch rasters must share one shape")
        if len(shape) != 2 or shape[0] != shape[1]:
            raise DataError("texture patches must be square")

    @classmethod
    def from_maps(cls, maps: ParameterMaps, **provenance) -> "TexturePatch":
        return cls(maps.transmittance / maps.incident, maps.retardation,
                   maps.direction, **provenance)


@dataclass
class FeatureVector:
    values: np.ndarray
    schema: str
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.labels and len(self.labels) != self.values.shape[0]:
            raise ShapeMismatch("labels must match the feature length")


def circular_sobel(direction_deg: np.ndarray) -> np.ndarray:
    """Edge response of a circular direction map, normalized to [0, 1].

    The direction is lifted to the unit phasor exp(i 2 phi) before filtering,
    which removes the 180° wrap; |(K_x + K_y) * z| is bounded by the absolute
    kernel weight sum of 12.  Borders are reflect-padded.
    """
    z = direction_phasor(direction_deg)

    def conv(plane, kernel):
        return ndimage.correlate(plane, kernel, mode="reflect")

    gx = conv(z.real, SOBEL_X) + 1j * conv(z.imag, SOBEL_X)
    gy = conv(z.real, SOBEL_Y) + 1j * conv(z.imag, SOBEL_Y)
    return np.abs(gx + gy) / 12.0


def prepare_patch(patch: TexturePatch) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three descriptor inputs, each clipped to [0, 1]."""
    return (np.clip(patch.transmittance, 0.0, 1.0),
            np.clip(patch.retardation, 0.0, 1.0),
            np.clip(circular_sobel(patch.direction), 0.0, 1.0))


def _histogram_stats(values: np.ndarray, bins: int = 128) -> np.ndarray:
    hist, edges = np.histogram(values.ravel(), bins=bins, range=(0.0, 1.0))
    p = hist / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    mean = float(p @ centers)
    var = float(p @ (centers - mean) ** 2)
    if var > 0:
        std = np.sqrt(var)
        skew = float(p @ ((centers - mean) / std) ** 3)
        kurt = float(p @ ((centers - mean) / std) ** 4) - 3.0
    else:
        skew = kurt = 0.0
    nz = p[p > 0]
    entropy = float(-(nz @ np.log(nz)))
    return np.array([mean, var, skew, kurt, entropy])


def histogram_features(patch: TexturePatch) -> FeatureVector:
    """15 first-order statistics from 128-bin histograms of the prepared maps."""
    stats = [_histogram_stats(m) for m in prepare_patch(patch)]
    labels = tuple(f"{m}:{s}" for m in MAP_NAMES
                   for s in ("mean", "variance", "skewness", "kurtosis", "entropy"))
    return FeatureVector(np.concatenate(stats), "histogram", labels)


LBP_TIE_GUARD = 1e-12

# unit circle at 45° steps, exactly symmetric under quarter rotations
_LBP_OFFSETS = [(1.0, 0.0), (np.sqrt(0.5), np.sqrt(0.5)), (0.0, 1.0),
                (-np.sqrt(0.5), np.sqrt(0.5)), (-1.0, 0.0),
                (-np.sqrt(0.5), -np.sqrt(0.5)), (0.0, -1.0),
                (np.sqrt(0.5), -np.sqrt(0.5))]


def _lbp_codes(plane: np.ndarray, radius: int) -> np.ndarray:
    """Rotation-invariant uniform LBP codes for interior pixels.

    8 neighbors are sampled bilinearly on a circle; a bit is set when the
    neighbor exceeds the center by more than a 1e-12 tie guard (so constant
    patches yield the all-zeros code despite interpolation rounding).
    Uniform patterns map to their popcount (0..8), the rest to 9.
    """
    h, w = plane.shape
    if h <= 2 * radius or w <= 2 * radius:
        raise DataError("patch too small for the LBP radius")
    yy, xx = np.mgrid[radius:h - radius, radius:w - radius].astype(float)
    center = plane[radius:h - radius, radius:w - radius]
    bits = []
    for ox, oy in _LBP_OFFSETS:
        sampled = ndimage.map_coordinates(plane, [yy + radius * oy, xx + radius * ox],
                                          order=1, mode="nearest")
        bits.append(sampled - center > LBP_TIE_GUARD)
    bits = np.stack(bits)
    transitions = np.sum(bits != np.roll(bits, 1, axis=0), axis=0)
    popcount = np.sum(bits, axis=0)
    return np.where(transitions <= 2, popcount, len(_LBP_OFFSETS) + 1)


def lbp_features(patch: TexturePatch, radii: Tuple[int, ...] = LBP_RADII) -> FeatureVector:
    """90 features: 10-bin code histograms per map and radius (8 points)."""
    histograms = []
    labels = []
    for name, plane in zip(MAP_NAMES, prepare_patch(patch)):
        for radius in radii:
            codes = _lbp_codes(plane, radius)
            hist = np.bincount(codes.ravel(), minlength=10).astype(float)
            histograms.append(hist / hist.sum())
            labels.extend(f"{name}:lbp_r{radius}_c{c}" for c in range(10))
    return FeatureVector(np.concatenate(histograms), "lbp", tuple(labels))


_GLCM_OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


def _glcm(quantized: np.ndarray, distance: int, angle_deg: int, levels: int) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix; border pairs are dropped."""
    dy, dx = (c * distance for c in _GLCM_OFFSETS[angle_deg])
    h, w = quantized.shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    src = quantized[ys, xs]
    dst = quantized[ys.start + dy:ys.stop + dy, xs.start + dx:xs.stop + dx]
    counts = np.bincount((src.ravel() * levels + dst.ravel()), minlength=levels * levels)
    mat = counts.reshape(levels, levels).astype(float)
    mat = mat + mat.T
    total = mat.sum()
    return mat / total if total > 0 else mat


def _glcm_stats(mat: np.ndarray) -> np.ndarray:
    levels = mat.shape[0]
    i = np.arange(levels, dtype=float)
    diff2 = (i[:, None] - i[None, :]) ** 2
    contrast = float(np.sum(mat * diff2))
    homogeneity = float(np.sum(mat / (1.0 + diff2)))
    energy = float(np.sqrt(np.sum(mat ** 2)))
    pi = mat.sum(axis=1)
    pj = mat.sum(axis=0)
    mu_i = float(pi @ i)
    mu_j = float(pj @ i)
    var_i = float(pi @ (i - mu_i) ** 2)
    var_j = float(pj @ (i - mu_j) ** 2)
    if var_i > 0 and var_j > 0:
        corr = float(np.sum(mat * np.outer(i - mu_i, i - mu_j))) / np.sqrt(var_i * var_j)
    else:
        corr = 0.0
    return np.array([contrast, corr, energy, homogeneity])


def glcm_features(patch: TexturePatch, distances: Tuple[int, ...] = GLCM_DISTANCES) -> FeatureVector:
    """36 angle-averaged Haralick statistics over maps and distances."""
    out = []
    labels = []
    for name, plane in zip(MAP_NAMES, prepare_patch(patch)):
        quantized = np.minimum((np.clip(plane, 0.0, 1.0) * GLCM_LEVELS).astype(int), GLCM_LEVELS - 1)
        for distance in distances:
            stats = np.mean([_glcm_stats(_glcm(quantized, distance, a, GLCM_LEVELS))
                             for a in GLCM_ANGLES_DEG], axis=0)
            out.append(stats)
            labels.extend(f"{name}:glcm_d{distance}_{s}" for s in GLCM_STATS)
    return FeatureVector(np.concatenate(out), "glcm", tuple(labels))


def combined_features(patch: TexturePatch) -> FeatureVector:
    """Concatenation histogram | LBP | GLCM (141 features)."""
    parts = [histogram_features(patch), lbp_features(patch), glcm_features(patch)]
    return FeatureVector(np.concatenate([p.values for p in parts]), "combined",
                         tuple(l for p in parts for l in p.labels))


EXTRACTORS = {
    "hist": histogram_features,
    "lbp": lbp_features,
    "glcm": glcm_features,
    "combined": combined_features,
}
