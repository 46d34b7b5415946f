"""Spatial context sampling of anchor/positive patch pairs.

Pairs are drawn in an undistorted reference space shared by all sections of
a stack.  The positive location is placed relative to the anchor according to
the pair mode:

* ``same``  - the anchor itself,
* ``cl2d``  - uniform on an in-plane circle of the given radius,
* ``cl3d``  - uniform on a sphere of the given radius, with the out-of-plane
  component rounded to the nearest section other than the anchor's,
* ``nn``    - the same in-plane coordinate on a random adjacent section
  (equivalent to ``cl3d`` with radius 0).

Per-section displacement fields (reference -> section pixel offsets) map
sampled centers into each section's own coordinates before cropping, so
patches show unregistered tissue.  All sampling is reproducible: seeds are
split per pair index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .augment import AugmentationSpec, sample_augmentation
from .errors import DataError, EmptyForeground, OutOfBounds, OutOfVolume
from .signal import ParameterMaps

PAIR_MODES = ("same", "cl2d", "cl3d", "nn")


@dataclass
class SectionRecord:
    maps: ParameterMaps
    mask: np.ndarray                       # reference-space foreground
    displacement: Optional[np.ndarray] = None  # (h, w, 2) reference -> section offsets
    section_id: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.maps.shape:
            raise DataError("mask must match the raster size")
        if self.displacement is not None and self.displacement.shape != self.maps.shape + (2,):
            raise DataError("displacement field must be (h, w, 2)")


@dataclass
class SectionStack:
    sections: List[SectionRecord]
    spacing_um: float
    pixel_size_um: float

    def __post_init__(self):
        if not self.sections:
            raise DataError("stack needs at least one section")
        if self.spacing_um <= 0 or self.pixel_size_um <= 0:
            raise DataError("spacing and pixel size must be positive")
        shape = self.sections[0].maps.shape
        for record in self.sections:
            if record.maps.shape != shape:
                raise DataError("all sections must share raster dimensions")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.sections[0].maps.shape

    def __len__(self) -> int:
        return len(self.sections)

    def subset(self, start: int, stop: int) -> "SectionStack":
        """Contiguous sub-stack (e.g. a train/validation split)."""
        return SectionStack(self.sections[start:stop], self.spacing_um, self.pixel_size_um)

    def max_displacement(self) -> float:
        worst = 0.0
        for record in self.sections:
            if record.displacement is not None:
                worst = max(worst, float(np.abs(record.displacement).max()))
        return worst


@dataclass
class PairSpec:
    mode: str = "cl3d"
    radius_um: float = 118.0
    patch_side: int = 192

    def __post_init__(self):
        if self.mode not in PAIR_MODES:
            raise DataError(f"unknown pair mode '{self.mode}'")
        if self.radius_um < 0:
            raise DataError("radius must be non-negative")
        # normalize the degenerate aliases
        if self.mode == "cl2d" and self.radius_um == 0:
            self.mode = "same"
        if self.mode == "cl3d" and self.radius_um == 0:
            self.mode = "nn"
        if self.mode in ("same", "nn"):
            self.radius_um = 0.0


@dataclass(frozen=True)
class Location:
    section: int
    x: float
    y: float


@dataclass
class PatchPair:
    anchor: ParameterMaps
    positive: ParameterMaps
    anchor_location: Location
    positive_location: Location


def _valid_anchor_mask(record: SectionRecord, margin: int) -> np.ndarray:
    mask = record.mask
    if margin <= 0:
        return mask
    h, w = mask.shape
    if 2 * margin >= min(h, w):
        return np.zeros_like(mask)
    boxed = np.zeros_like(mask)
    boxed[margin:h - margin, margin:w - margin] = mask[margin:h - margin, margin:w - margin]
    return boxed


class AnchorIndex:
    """Precomputed flat foreground indices for uniform anchor draws."""

    def __init__(self, stack: SectionStack, margin: int = 0):
        self.stack = stack
        self.margin = margin
        self.flat = [np.flatnonzero(_valid_anchor_mask(rec, margin).ravel())
                     for rec in stack.sections]
        self.counts = np.array([f.size for f in self.flat])
        self.total = int(self.counts.sum())
        if self.total == 0:
            raise EmptyForeground("no foreground voxels available for anchors")

    def draw(self, rng: np.random.Generator) -> Location:
        pick = rng.integers(self.total)
        section = int(np.searchsorted(np.cumsum(self.counts), pick, side="right"))
        offset = pick - int(np.sum(self.counts[:section]))
        w = self.stack.shape[1]
        flat = self.flat[section][offset]
        return Location(section=section, x=float(flat % w), y=float(flat // w))


def sample_anchor(stack: SectionStack, rng: np.random.Generator, margin: int = 0) -> Location:
    """Uniform draw over (margin-restricted) foreground voxels of the stack."""
    return AnchorIndex(stack, margin).draw(rng)


def _nearest_section(z_sections: float, n: int, exclude: int) -> int:
    """Nearest section index to a fractional z, excluding one index.

    Ties are broken toward the candidate farther from the excluded section.
    """
    idx = np.arange(n)
    dist = np.abs(idx - z_sections)
    dist[exclude] = np.inf
    best = dist.min()
    candidates = idx[np.isclose(dist, best)]
    if candidates.size == 1:
        return int(candidates[0])
    return int(candidates[np.argmax(np.abs(candidates - exclude))])


def _location_ok(stack: SectionStack, loc: Location, margin: int) -> bool:
    h, w = stack.shape
    xi, yi = int(round(loc.x)), int(round(loc.y))
    if not (margin <= xi < w - margin and margin <= yi < h - margin):
        return False
    return bool(stack.sections[loc.section].mask[yi, xi])


def sample_positive(anchor: Location, spec: PairSpec, stack: SectionStack,
                    rng: np.random.Generator, margin: int = 0, retries: int = 16) -> Location:
    """Draw the positive location for an anchor; see the module docstring.

    Raises OutOfVolume when every retry leaves the raster or lands on
    background (callers then redraw the anchor).
    """
    if spec.mode == "same":
        return anchor
    radius_px = spec.radius_um / stack.pixel_size_um
    n = len(stack)
    for _ in range(max(1, retries)):
        if spec.mode == "cl2d":
            psi = rng.uniform(0.0, 2.0 * np.pi)
            loc = Location(anchor.section,
                           anchor.x + radius_px * np.cos(psi),
                           anchor.y + radius_px * np.sin(psi))
        elif spec.mode == "nn":
            if n < 2:
                raise OutOfVolume("cross-section sampling needs at least 2 sections")
            options = [s for s in (anchor.section - 1, anchor.section + 1) if 0 <= s < n]
            loc = Location(int(rng.choice(options)), anchor.x, anchor.y)
        else:  # cl3d
            if n < 2:
                raise OutOfVolume("cross-section sampling needs at least 2 sections")
            cos_polar = rng.uniform(-1.0, 1.0)
            psi = rng.uniform(0.0, 2.0 * np.pi)
            in_plane_um = spec.radius_um * np.sqrt(max(0.0, 1.0 - cos_polar ** 2))
            dz_um = spec.radius_um * cos_polar
            z = anchor.section + dz_um / stack.spacing_um
            section = _nearest_section(z, n, exclude=anchor.section)
            loc = Location(section,
                           anchor.x + in_plane_um / stack.pixel_size_um * np.cos(psi),
                           anchor.y + in_plane_um / stack.pixel_size_um * np.sin(psi))
        if _location_ok(stack, loc, margin):
            return loc
    raise OutOfVolume(f"no valid positive after {retries} retries")


def extract_patch(stack: SectionStack, loc: Location, side: int) -> ParameterMaps:
    """Crop a square patch around a reference-space location.

    The section's displacement field (when present) maps the center into the
    section's own coordinates; the center is rounded to the pixel grid.
    """
    record = stack.sections[loc.section]
    cx, cy = loc.x, loc.y
    if record.displacement is not None:
        ux = ndimage.map_coordinates(record.displacement[..., 0], [[cy], [cx]], order=1, mode="nearest")[0]
        uy = ndimage.map_coordinates(record.displacement[..., 1], [[cy], [cx]], order=1, mode="nearest")[0]
        cx, cy = cx + ux, cy + uy
    xi, yi = int(round(cx)), int(round(cy))
    top, left = yi - side // 2, xi - side // 2
    h, w = stack.shape
    if top < 0 or left < 0 or top + side > h or left + side > w:
        raise OutOfBounds(f"patch at section {loc.section} ({xi},{yi}) leaves the raster")
    maps = record.maps
    sl = (slice(top, top + side), slice(left, left + side))
    return ParameterMaps(maps.transmittance[sl].copy(), maps.direction[sl].copy(),
                         maps.retardation[sl].copy(), pixel_size=maps.pixel_size,
                         incident=maps.incident)


@dataclass
class Batch:
    crops: List[ParameterMaps]        # 2N augmented crops
    pairs: List[Tuple[int, int]]      # positive index pairs into ``crops``
    locations: List[Tuple[Location, Location]] = field(default_factory=list)


class PairSampler:
    """Reusable sampler holding the precomputed anchor index."""

    def __init__(self, stack: SectionStack, spec: PairSpec, aug: AugmentationSpec):
        if aug.patch_size != spec.patch_side:
            raise DataError("augmentation patch size must match the pair spec")
        self.stack = stack
        self.spec = spec
        self.aug = aug
        self.margin = spec.patch_side // 2 + 1 + int(np.ceil(stack.max_displacement()))
        self.index = AnchorIndex(stack, self.margin)

    def sample_pair(self, seed_seq: np.random.SeedSequence) -> Tuple[PatchPair, ParameterMaps, ParameterMaps]:
        draw_ss, aug_a_ss, aug_p_ss = seed_seq.spawn(3)
        rng = np.random.default_rng(draw_ss)
        for _ in range(64):
            anchor_loc = self.index.draw(rng)
            try:
                positive_loc = sample_positive(anchor_loc, self.spec, self.stack, rng,
                                               margin=self.margin)
            except OutOfVolume:
                continue
            anchor = extract_patch(self.stack, anchor_loc, self.spec.patch_side)
            positive = extract_patch(self.stack, positive_loc, self.spec.patch_side)
            pair = PatchPair(anchor, positive, anchor_loc, positive_loc)
            crop_a = sample_augmentation(self.aug, np.random.default_rng(aug_a_ss)).apply(anchor)
            crop_p = sample_augmentation(self.aug, np.random.default_rng(aug_p_ss)).apply(positive)
            for crop in (crop_a, crop_p):
                if crop.mask is not None and not crop.mask.all():
                    raise DataError("augmented crop contains out-of-domain pixels")
            return pair, crop_a, crop_p
        raise OutOfVolume("could not place a valid pair after 64 anchors")


def make_batch(stack: SectionStack, spec: PairSpec, aug: AugmentationSpec,
               n_pairs: int, seed) -> Batch:
    """Sample ``n_pairs`` augmented positive pairs; 2N crops plus pair indices.

    ``seed`` may be an int or a SeedSequence; each pair consumes an
    independent child stream, so batches are reproducible and order-stable.
    """
    if n_pairs < 1:
        raise DataError("need at least one pair")
    sampler = PairSampler(stack, spec, aug)
    return _batch_from_sampler(sampler, n_pairs, seed)


def _batch_from_sampler(sampler: PairSampler, n_pairs: int, seed) -> Batch:
    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    anchors, positives, locations = [], [], []
    for child in seed_seq.spawn(n_pairs):
        pair, crop_a, crop_p = sampler.sample_pair(child)
        anchors.append(crop_a)
        positives.append(crop_p)
        locations.append((pair.anchor_location, pair.positive_location))
    crops = anchors + positives
    pairs = [(i, n_pairs + i) for i in range(n_pairs)]
    return Batch(crops=crops, pairs=pairs, locations=locations)
