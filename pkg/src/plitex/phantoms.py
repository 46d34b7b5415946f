"""Synthetic fiber phantoms with analytic ground truth.

A phantom is a set of disjoint geometric primitives (cortex band with radial
fibers, tangential band, straight bundle, crossing, fan) on a raster; each
primitive prescribes direction, inclination and myelin density per pixel.
Sections are produced by pushing the orientation field through the
measurement forward model and applying controlled inter-section variation:
per-section attenuation/thickness jitter, small rigid shifts (with matching
displacement fields and direction handling), optional smooth density
modulation, and intensity noise injected on the synthesized profiles.

Ground truth (labels, cortical depth, white-matter depth, obliqueness) comes
straight from the primitive geometry, so downstream metrics have exact
targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .augment import apply_affine, scale_attenuation, scale_thickness
from .errors import DataError, OverlappingPrimitives
from .sampling import SectionRecord, SectionStack
from .signal import (FiberOrientationField, OpticsConfig, ParameterMaps,
                     forward_model, recover_maps, synthesize_profile, wrap_direction)


@dataclass
class CortexBand:
    """Annulus of radial fibers with a laminar density profile."""

    center: Tuple[float, float]
    outer_radius: float
    inner_radius: float
    tilt_deg: float = 0.0
    base_density: float = 0.35
    depth_gain: float = 0.45
    band_amp: float = 0.15
    band_freq: float = 3.0
    kind: str = "cortex_band"

    def region(self, x, y):
        rho = np.hypot(x - self.center[0], y - self.center[1])
        return (rho >= self.inner_radius) & (rho < self.outer_radius)

    def depth(self, x, y):
        rho = np.hypot(x - self.center[0], y - self.center[1])
        return (self.outer_radius - rho) / (self.outer_radius - self.inner_radius)

    def fields(self, x, y):
        phi = wrap_direction(np.rad2deg(np.arctan2(y - self.center[1], x - self.center[0])))
        depth = self.depth(x, y)
        density = np.clip(self.base_density + self.depth_gain * depth
                          + self.band_amp * np.sin(2.0 * np.pi * self.band_freq * depth),
                          0.05, 1.0)
        return phi, np.full_like(phi, self.tilt_deg), density


@dataclass
class TangentialBand:
    """Thin annulus of fibers running along the band (superficial layer)."""

    center: Tuple[float, float]
    outer_radius: float
    inner_radius: float
    density: float = 0.85
    tilt_deg: float = 0.0
    kind: str = "tangential_band"

    def region(self, x, y):
        rho = np.hypot(x - self.center[0], y - self.center[1])
        return (rho >= self.inner_radius) & (rho < self.outer_radius)

    def fields(self, x, y):
        radial = np.rad2deg(np.arctan2(y - self.center[1], x - self.center[0]))
        phi = wrap_direction(radial + 90.0)
        return phi, np.full_like(phi, self.tilt_deg), np.full_like(phi, self.density)


@dataclass
class Bundle:
    """Oriented rectangle of parallel fibers with density stripes across it.

    A non-zero angle drift curves the fibers gently along the bundle, giving
    positions within the bundle distinguishable local texture.
    """

    center: Tuple[float, float]
    length: float
    width: float
    angle_deg: float = 0.0
    density_low: float = 0.35
    density_high: float = 0.95
    stripe_period: float = 16.0
    angle_drift_deg_per_px: float = 0.0
    tilt_deg: float = 0.0
    kind: str = "bundle"

    def _local(self, x, y):
        t = np.deg2rad(self.angle_deg)
        dx, dy = x - self.center[0], y - self.center[1]
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        return u, v

    def region(self, x, y):
        u, v = self._local(x, y)
        return ((u >= -self.length / 2) & (u < self.length / 2)
                & (v >= -self.width / 2) & (v < self.width / 2))

    def fields(self, x, y):
        u, v = self._local(x, y)
        half = self.stripe_period / 2.0
        high = np.mod(np.floor(v / half), 2) == 0
        density = np.where(high, self.density_high, self.density_low)
        phi = wrap_direction(self.angle_deg + self.angle_drift_deg_per_px * u)
        return phi, np.full_like(density, self.tilt_deg), density


@dataclass
class Crossing:
    """Axis-aligned rectangle of interleaved orthogonal fiber blocks."""

    center: Tuple[float, float]
    length: float
    width: float
    angle_a: float = 0.0
    angle_b: float = 90.0
    block: float = 8.0
    density_low: float = 0.35
    density_high: float = 0.95
    angle_drift_deg_per_px: float = 0.0
    tilt_deg: float = 0.0
    kind: str = "crossing"

    def region(self, x, y):
        dx = x - self.center[0]
        dy = y - self.center[1]
        return ((dx >= -self.length / 2) & (dx < self.length / 2)
                & (dy >= -self.width / 2) & (dy < self.width / 2))

    def fields(self, x, y):
        bx = np.floor(x / self.block)
        by = np.floor(y / self.block)
        first = np.mod(bx + by, 2) == 0
        drift = self.angle_drift_deg_per_px * (y - self.center[1])
        phi = wrap_direction(np.where(first, self.angle_a, self.angle_b) + drift)
        # density checker offset by half a block so it decorrelates from phi
        dense = np.mod(np.floor(x / self.block + 0.5) + by, 2) == 0
        density = np.where(dense, self.density_high, self.density_low)
        return phi, np.full_like(phi, self.tilt_deg), density


@dataclass
class Fan:
    """Wedge of fibers fanning out from an apex."""

    apex: Tuple[float, float]
    radius_min: float
    radius_max: float
    angle_start_deg: float
    angle_end_deg: float
    density: float = 0.7
    tilt_deg: float = 0.0
    kind: str = "fan"

    def region(self, x, y):
        dx, dy = x - self.apex[0], y - self.apex[1]
        rho = np.hypot(dx, dy)
        ang = np.rad2deg(np.arctan2(dy, dx))
        span = (self.angle_end_deg - self.angle_start_deg) % 360.0
        rel = (ang - self.angle_start_deg) % 360.0
        return (rho >= self.radius_min) & (rho < self.radius_max) & (rel <= span)

    def fields(self, x, y):
        phi = wrap_direction(np.rad2deg(np.arctan2(y - self.apex[1], x - self.apex[0])))
        return phi, np.full_like(phi, self.tilt_deg), np.full_like(phi, self.density)


PRIMITIVE_KINDS = {
    "cortex_band": CortexBand,
    "tangential_band": TangentialBand,
    "bundle": Bundle,
    "crossing": Crossing,
    "fan": Fan,
}


@dataclass
class PhantomSpec:
    height: int
    width: int
    primitives: List[object]
    n_sections: int = 3
    spacing_um: float = 60.0
    pixel_size_um: float = 1.3
    incident: float = 1.0
    intensity_noise: float = 0.0
    gamma_jitter_log2: float = 0.0
    shift_jitter_px: float = 0.0
    section_field_strength: float = 0.0
    section_field_scale_px: float = 64.0
    seed: int = 0
    optics: OpticsConfig = field(default_factory=OpticsConfig)

    def to_json(self) -> str:
        raw = asdict(self)
        raw["optics"] = asdict(self.optics)
        return json.dumps(raw, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        raw = json.loads(text)
        prims = []
        for entry in raw.pop("primitives"):
            kind = entry.pop("kind")
            klass = PRIMITIVE_KINDS.get(kind)
            if klass is None:
                raise DataError(f"unknown primitive kind '{kind}'")
            entry = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
            prims.append(klass(**entry))
        optics = OpticsConfig(**raw.pop("optics")) if "optics" in raw else OpticsConfig()
        return cls(primitives=prims, optics=optics, **raw)


@dataclass
class GroundTruth:
    label: np.ndarray            # (h, w) int; 0 = background
    cortical_depth: np.ndarray   # NaN outside the cortex band
    wm_depth_mm: np.ndarray      # NaN outside white matter
    obliqueness_deg: np.ndarray  # NaN outside tissue
    region_names: Dict[int, str]


def _smooth_field(rng: np.random.Generator, shape, scale_px: float) -> np.ndarray:
    """Unit-std smooth random field from bilinear upsampling of coarse noise."""
    coarse = (max(2, int(np.ceil(shape[0] / scale_px)) + 1),
              max(2, int(np.ceil(shape[1] / scale_px)) + 1))
    noise = rng.normal(size=coarse)
    zoom = (shape[0] / coarse[0], shape[1] / coarse[1])
    smooth = ndimage.zoom(noise, zoom, order=1)[:shape[0], :shape[1]]
    smooth -= smooth.mean()
    std = smooth.std()
    return smooth / std if std > 0 else smooth


def _assemble(spec: PhantomSpec):
    y, x = np.mgrid[0:spec.height, 0:spec.width].astype(float)
    label = np.zeros((spec.height, spec.width), dtype=int)
    phi = np.zeros_like(x)
    alpha = np.zeros_like(x)
    density = np.zeros_like(x)
    depth = np.full_like(x, np.nan)
    obliqueness = np.full_like(x, np.nan)
    names: Dict[int, str] = {0: "background"}
    cortex: Optional[CortexBand] = None
    for i, prim in enumerate(spec.primitives, start=1):
        region = prim.region(x, y)
        if (label[region] != 0).any():
            raise OverlappingPrimitives(f"primitive {i} ({prim.kind}) overlaps another region")
        p_phi, p_alpha, p_density = prim.fields(x, y)
        label[region] = i
        phi[region] = p_phi[region]
        alpha[region] = p_alpha[region]
        density[region] = p_density[region]
        obliqueness[region] = prim.tilt_deg
        names[i] = prim.kind
        if isinstance(prim, CortexBand):
            cortex = prim
            depth[region] = prim.depth(x, y)[region]
    wm_depth = np.full_like(x, np.nan)
    if cortex is not None:
        rho = np.hypot(x - cortex.center[0], y - cortex.center[1])
        inside = (label > 0) & (rho < cortex.inner_radius)
        wm_depth[inside] = (cortex.inner_radius - rho[inside]) * spec.pixel_size_um / 1000.0
    truth = GroundTruth(label=label, cortical_depth=depth, wm_depth_mm=wm_depth,
                        obliqueness_deg=obliqueness, region_names=names)
    return FiberOrientationField(phi, alpha, density), truth


def generate(spec: PhantomSpec) -> Tuple[SectionStack, GroundTruth]:
    """Render all sections of a phantom; seeded and reproducible."""
    base_field, truth = _assemble(spec)
    foreground = truth.label > 0
    records = []
    root = np.random.SeedSequence(spec.seed)
    for idx, child in enumerate(root.spawn(spec.n_sections)):
        rng = np.random.default_rng(child)
        density = base_field.density
        if spec.section_field_strength > 0:
            mod = 1.0 + spec.section_field_strength * _smooth_field(
                rng, density.shape, spec.section_field_scale_px)
            density = np.where(foreground, np.clip(density * mod, 0.02, 1.0), 0.0)
        field_s = FiberOrientationField(base_field.direction, base_field.inclination, density)
        maps = forward_model(field_s, spec.optics, incident=spec.incident,
                             pixel_size=spec.pixel_size_um)
        if spec.gamma_jitter_log2 > 0:
            j = spec.gamma_jitter_log2
            maps = scale_thickness(maps, float(2.0 ** rng.uniform(-j, j)))
            maps = scale_attenuation(maps, float(2.0 ** rng.uniform(-j, j)))
        displacement = None
        if spec.shift_jitter_px > 0:
            shift = rng.uniform(-spec.shift_jitter_px, spec.shift_jitter_px, size=2)
            maps = apply_affine(maps, np.eye(2), translate=tuple(shift))
            maps.transmittance[~maps.mask] = spec.incident  # off-raster fill looks like glass
            maps.mask = None
            displacement = np.broadcast_to(shift, (spec.height, spec.width, 2)).astype(float).copy()
        if spec.intensity_noise > 0:
            stack = synthesize_profile(maps)
            noisy = np.clip(stack.data + rng.normal(0.0, spec.intensity_noise * spec.incident,
                                                    size=stack.data.shape), 0.0, None)
            stack.data = noisy
            maps = recover_maps(stack, incident=spec.incident, pixel_size=spec.pixel_size_um)
            maps.transmittance = np.clip(maps.transmittance, 0.0, spec.incident)
            maps.degenerate = None
        maps.mask = None
        records.append(SectionRecord(maps=maps, mask=foreground.copy(),
                                     displacement=displacement,
                                     section_id=f"s{idx:03d}"))
    stack = SectionStack(records, spacing_um=spec.spacing_um,
                         pixel_size_um=spec.pixel_size_um)
    return stack, truth


def two_texture_benchmark(seed: int = 0, size: int = 512, n_sections: int = 3,
                          intensity_noise: float = 0.01, gamma_jitter_log2: float = 0.15,
                          shift_jitter_px: float = 1.5,
                          pixel_size_um: float = 1.3) -> Tuple[SectionStack, GroundTruth, PhantomSpec]:
    """Labeled stack with two texture regimes of equal mean transmittance.

    Region A is a coherent striped bundle, region B an isotropic block
    crossing; both draw density from the same {low, high} values at exactly
    half area each, so only spatial texture separates them.
    """
    margin = (size // 8) - (size // 8) % 16
    gap = margin
    region_w = (size - 2 * margin - gap) // 2
    region_w -= region_w % 16
    region_h = (size - 2 * margin)
    region_h -= region_h % 16
    ax = margin + region_w / 2
    bx = size - margin - region_w / 2
    cy = margin + region_h / 2
    drift = 24.0 / size  # ~24 degrees of fiber curvature across the stack
    prims = [
        Bundle(center=(ax, cy), length=region_h, width=region_w, angle_deg=90.0,
               density_low=0.35, density_high=0.95, stripe_period=16.0,
               angle_drift_deg_per_px=drift),
        Crossing(center=(bx, cy), length=region_w, width=region_h, angle_a=0.0,
                 angle_b=90.0, block=8.0, density_low=0.35, density_high=0.95,
                 angle_drift_deg_per_px=drift),
    ]
    spec = PhantomSpec(height=size, width=size, primitives=prims, n_sections=n_sections,
                       pixel_size_um=pixel_size_um, intensity_noise=intensity_noise,
                       gamma_jitter_log2=gamma_jitter_log2, shift_jitter_px=shift_jitter_px,
                       seed=seed)
    stack, truth = generate(spec)
    truth.region_names = {0: "background", 1: "parallel", 2: "crossing"}
    return stack, truth, spec
