"""Physically-grounded augmentations of parameter maps.

All transforms operate jointly on transmittance, direction and retardation so
the result stays a valid measurement of the same (virtually modified) tissue:

* attenuation / thickness scalings modulate the signal model parameters,
* geometric warps resample the underlying intensities, expressed on the maps
  through a transmittance-weighted complex phasor  r * I_T * exp(i 2 phi),
* any transform with a non-trivial Jacobian corrects the absolute directions.

Directions use degree-folded trigonometry (`direction_phasor`) so quadrant
angles produce exact phasor components and opposing phasors cancel exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeMismatch, SingularMatrix
from .signal import ParameterMaps, direction_phasor, folded_trig, wrap_direction


def _phasor_to_maps(transmittance, phasor_sum) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decompose an accumulated phasor into retardation and direction."""
    amp = np.abs(phasor_sum)
    with np.errstate(divide="ignore", invalid="ignore"):
        retardation = np.where(transmittance > 0, amp / np.where(transmittance > 0, transmittance, 1.0), 0.0)
    retardation = np.clip(retardation, 0.0, 1.0)
    direction = wrap_direction(np.rad2deg(0.5 * np.angle(phasor_sum)))
    dead = (transmittance <= 0) | (amp == 0)
    return (np.where(transmittance > 0, transmittance, 0.0),
            np.where(dead, 0.0, direction),
            np.where(dead, 0.0, retardation))


def resample(maps: ParameterMaps, sources: np.ndarray, weights: np.ndarray) -> ParameterMaps:
    """Resample maps onto arbitrary targets given per-target source pixels.

    ``sources`` holds flat indices into the rasters, ``weights`` the matching
    non-negative weights (rows summing to 1); both are shaped (targets, taps).
    Returns flat maps of length ``targets``.
    """
    sources = np.asarray(sources)
    weights = np.asarray(weights, dtype=float)
    if sources.shape != weights.shape:
        raise ShapeMismatch("sources and weights must align")
    it = maps.transmittance.reshape(-1)[sources]
    r = maps.retardation.reshape(-1)[sources]
    phasor = direction_phasor(maps.direction.reshape(-1)[sources])
    it_out = np.sum(weights * it, axis=-1)
    acc = np.sum(weights * r * it * phasor, axis=-1)
    it_out, direction, retardation = _phasor_to_maps(it_out, acc)
    return ParameterMaps(it_out, direction, retardation,
                         pixel_size=maps.pixel_size, incident=maps.incident)


def scale_attenuation(maps: ParameterMaps, gamma: float) -> ParameterMaps:
    """Scale the attenuation coefficient: I_T' = I_0 (I_T / I_0) ** gamma."""
    if gamma <= 0:
        raise DataError("attenuation scale must be positive")
    out = maps.copy()
    if gamma == 1.0:
        return out
    out.transmittance = maps.incident * (maps.transmittance / maps.incident) ** gamma
    return out


def scale_thickness(maps: ParameterMaps, gamma: float) -> ParameterMaps:
    """Scale section thickness: delta' = gamma * delta, with matching transmittance."""
    if gamma <= 0:
        raise DataError("thickness scale must be positive")
    out = maps.copy()
    if gamma == 1.0:
        return out
    out.retardation = np.abs(np.sin(gamma * np.arcsin(np.clip(maps.retardation, 0.0, 1.0))))
    out.transmittance = maps.incident * (maps.transmittance / maps.incident) ** gamma
    return out


def correct_direction(direction_deg: np.ndarray, jacobian: np.ndarray
                      ) -> Tuple[np.ndarray, np.ndarray]:
    """Map direction angles through a transform Jacobian.

    ``jacobian`` is a single 2x2 matrix or a per-pixel (..., 2, 2) field in
    (x, y) coordinates.  Returns the corrected angles and a mask of pixels
    where the Jacobian was singular (their angle is left unchanged).
    """
    direction_deg = np.asarray(direction_deg, dtype=float)
    jac = np.asarray(jacobian, dtype=float)
    cx, sy = folded_trig(direction_deg)
    if jac.shape == (2, 2):
        dx = jac[0, 0] * cx + jac[0, 1] * sy
        dy = jac[1, 0] * cx + jac[1, 1] * sy
        det = np.full_like(direction_deg, jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    else:
        if jac.shape[:-2] != direction_deg.shape:
            raise ShapeMismatch("per-pixel Jacobian field must match the raster")
        dx = jac[..., 0, 0] * cx + jac[..., 0, 1] * sy
        dy = jac[..., 1, 0] * cx + jac[..., 1, 1] * sy
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    singular = (np.abs(det) < 1e-12) | (np.hypot(dx, dy) < 1e-12)
    corrected = wrap_direction(np.rad2deg(np.arctan2(dy, dx)))
    return np.where(singular, direction_deg, corrected), singular


def _bilinear_plane(plane: np.ndarray, src_x: np.ndarray, src_y: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(plane, [src_y, src_x], order=1, mode="constant", cval=0.0)


def _warp_to_coords(maps: ParameterMaps, src_x: np.ndarray, src_y: np.ndarray,
                    corrected_direction: np.ndarray) -> ParameterMaps:
    """Bilinear phasor resampling of the maps at source coordinates."""
    h, w = maps.shape
    phasor = maps.retardation * maps.transmittance * direction_phasor(corrected_direction)
    it_out = _bilinear_plane(maps.transmittance, src_x, src_y)
    acc = (_bilinear_plane(phasor.real, src_x, src_y)
           + 1j * _bilinear_plane(phasor.imag, src_x, src_y))
    valid = ((src_x >= -1e-9) & (src_x <= w - 1 + 1e-9)
             & (src_y >= -1e-9) & (src_y <= h - 1 + 1e-9))
    it_out = np.where(valid, it_out, 0.0)
    acc = np.where(valid, acc, 0.0)
    it_out, direction, retardation = _phasor_to_maps(it_out, acc)
    mask = valid
    if maps.mask is not None:
        fg = _bilinear_plane(maps.mask.astype(float), src_x, src_y)
        mask = valid & (fg >= 0.5)
    return ParameterMaps(it_out, direction, retardation, pixel_size=maps.pixel_size,
                         incident=maps.incident, mask=mask)


def apply_affine(maps: ParameterMaps, matrix: np.ndarray, translate=(0.0, 0.0),
                 out_shape: Optional[Tuple[int, int]] = None) -> ParameterMaps:
    """Affine warp about the raster center with direction correction.

    ``matrix`` maps source offsets to target offsets in (x, y) coordinates;
    ``translate`` shifts the result in target pixels.  Target pixels without a
    source are zero-filled and masked out.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (2, 2):
        raise ShapeMismatch("affine matrix must be 2x2")
    det = matrix[0, 0] * matrix[1, 1] - matrix[0, 1] * matrix[1, 0]
    if abs(det) < 1e-12:
        raise SingularMatrix("affine matrix is singular")
    corrected, _ = correct_direction(maps.direction, matrix)
    h, w = maps.shape
    oh, ow = out_shape if out_shape is not None else (h, w)
    inv = np.linalg.inv(matrix)
    ty, tx = np.mgrid[0:oh, 0:ow].astype(float)
    off_x = tx - (ow - 1) / 2.0 - translate[0]
    off_y = ty - (oh - 1) / 2.0 - translate[1]
    src_x = inv[0, 0] * off_x + inv[0, 1] * off_y + (w - 1) / 2.0
    src_y = inv[1, 0] * off_x + inv[1, 1] * off_y + (h - 1) / 2.0
    return _warp_to_coords(maps, src_x, src_y, corrected)


def apply_warp(maps: ParameterMaps, displacement: np.ndarray) -> ParameterMaps:
    """Warp by a dense pull-back displacement field.

    ``displacement`` has shape (h, w, 2) with (dx, dy) components on the
    target grid: a target pixel at (x, y) samples the source at
    (x + dx, y + dy).  The per-pixel rotation component of the transform is
    removed from the resampled directions using the inverse Jacobian of the
    sampling map, estimated by central differences; pixels with a singular
    Jacobian keep their uncorrected direction.
    """
    displacement = np.asarray(displacement, dtype=float)
    if displacement.shape != maps.shape + (2,):
        raise ShapeMismatch("displacement field must be (h, w, 2)")
    ux, uy = displacement[..., 0], displacement[..., 1]
    # Jacobian of g(y) = y + u(y); gradient axes are (y, x)
    dux_dy, dux_dx = np.gradient(ux)
    duy_dy, duy_dx = np.gradient(uy)
    g00 = 1.0 + dux_dx
    g01 = dux_dy
    g10 = duy_dx
    g11 = 1.0 + duy_dy
    det = g00 * g11 - g01 * g10
    singular = np.abs(det) < 1e-12
    safe_det = np.where(singular, 1.0, det)
    jac = np.empty(maps.shape + (2, 2), dtype=float)
    jac[..., 0, 0] = g11 / safe_det
    jac[..., 0, 1] = -g01 / safe_det
    jac[..., 1, 0] = -g10 / safe_det
    jac[..., 1, 1] = g00 / safe_det
    jac[singular] = np.eye(2)
    corrected, _ = correct_direction(maps.direction, jac)
    corrected = np.where(singular, maps.direction, corrected)
    h, w = maps.shape
    ty, tx = np.mgrid[0:h, 0:w].astype(float)
    return _warp_to_coords(maps, tx + ux, ty + uy, corrected)


def apply_flip(maps: ParameterMaps, horizontal: bool = False, vertical: bool = False) -> ParameterMaps:
    """Mirror the raster; single-axis flips map phi to 180° - phi."""
    out = maps.copy()
    if not horizontal and not vertical:
        return out
    sl_y = slice(None, None, -1) if vertical else slice(None)
    sl_x = slice(None, None, -1) if horizontal else slice(None)
    for name in ("transmittance", "direction", "retardation"):
        setattr(out, name, np.ascontiguousarray(getattr(out, name)[sl_y, sl_x]))
    if out.mask is not None:
        out.mask = np.ascontiguousarray(out.mask[sl_y, sl_x])
    if horizontal != vertical:
        out.direction = wrap_direction(180.0 - out.direction)
    return out


def gaussian_blur(maps: ParameterMaps, sigma: float) -> ParameterMaps:
    """Separable Gaussian blur (kernel truncated at 4 sigma, renormalized)."""
    if sigma < 0:
        raise DataError("blur sigma must be non-negative")
    if sigma == 0:
        return maps.copy()
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()

    def blur(plane):
        tmp = ndimage.correlate1d(plane, kernel, axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, kernel, axis=1, mode="reflect")

    phasor = maps.retardation * maps.transmittance * direction_phasor(maps.direction)
    it_out = blur(maps.transmittance)
    acc = blur(phasor.real) + 1j * blur(phasor.imag)
    it_out, direction, retardation = _phasor_to_maps(it_out, acc)
    return ParameterMaps(it_out, direction, retardation, pixel_size=maps.pixel_size,
                         incident=maps.incident, mask=None if maps.mask is None else maps.mask.copy())


@dataclass
class AugmentationSpec:
    """Sampling ranges and probabilities for the augmentation chain.

    The chain order is: affine + center crop, flips, thickness scaling,
    attenuation scaling, blur.  Thickness/attenuation scales are drawn as
    2 ** U(log2_range).  Serializes to a flat JSON document.
    """

    scale_range: Tuple[float, float] = (0.9, 1.3)
    rotation_range: Tuple[float, float] = (-180.0, 180.0)
    shear_range: Tuple[float, float] = (-20.0, 20.0)
    flip_prob: float = 0.5
    thickness_log2_range: Tuple[float, float] = (-1.0, 1.0)
    attenuation_log2_range: Tuple[float, float] = (-1.0, 1.0)
    blur_prob: float = 0.5
    blur_sigma_range: Tuple[float, float] = (0.0, 2.0)
    patch_size: int = 192
    crop_size: int = 128

    def __post_init__(self):
        if self.crop_size > self.patch_size:
            raise DataError("crop must not exceed the patch")

    @classmethod
    def identity(cls, patch_size: int = 192, crop_size: int = 128) -> "AugmentationSpec":
        """Ranges collapsed so sampling always yields the identity chain."""
        return cls(scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0), shear_range=(0.0, 0.0),
                   flip_prob=0.0, thickness_log2_range=(0.0, 0.0),
                   attenuation_log2_range=(0.0, 0.0), blur_prob=0.0,
                   blur_sigma_range=(0.0, 0.0), patch_size=patch_size, crop_size=crop_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationSpec":
        raw = json.loads(text)
        fields = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**fields)


def _affine_fits(matrix: np.ndarray, patch: int, crop: int) -> bool:
    """True if the inverse image of the crop stays inside the patch (1 px guard)."""
    inv = np.linalg.inv(matrix)
    half = (crop - 1) / 2.0
    corners = np.array([[half, half], [half, -half], [-half, half], [-half, -half]]).T
    src = inv @ corners
    limit = (patch - 1) / 2.0 - 1.0
    return bool(np.all(np.abs(src) <= limit))


@dataclass
class SampledAugmentation:
    """A concrete augmentation chain drawn from an AugmentationSpec."""

    matrix: np.ndarray
    flip_horizontal: bool
    flip_vertical: bool
    gamma_thickness: float
    gamma_attenuation: float
    blur_sigma: float
    patch_size: int
    crop_size: int

    def apply(self, maps: ParameterMaps) -> ParameterMaps:
        if maps.shape != (self.patch_size, self.patch_size):
            raise ShapeMismatch(f"augmentation expects a {self.patch_size} px square patch")
        crop = self.crop_size
        start = (self.patch_size - crop) // 2
        if np.array_equal(self.matrix, np.eye(2)):
            sl = slice(start, start + crop)
            out = ParameterMaps(
                maps.transmittance[sl, sl].copy(), maps.direction[sl, sl].copy(),
                maps.retardation[sl, sl].copy(), pixel_size=maps.pixel_size,
                incident=maps.incident,
                mask=None if maps.mask is None else maps.mask[sl, sl].copy())
        else:
            out = apply_affine(maps, self.matrix, out_shape=(crop, crop))
        out = apply_flip(out, self.flip_horizontal, self.flip_vertical)
        out = scale_thickness(out, self.gamma_thickness)
        out = scale_attenuation(out, self.gamma_attenuation)
        out = gaussian_blur(out, self.blur_sigma)
        return out


def _rotation(theta_deg: float) -> np.ndarray:
    c, s = np.cos(np.deg2rad(theta_deg)), np.sin(np.deg2rad(theta_deg))
    return np.array([[c, -s], [s, c]])


def sample_augmentation(spec: AugmentationSpec, rng: np.random.Generator) -> SampledAugmentation:
    """Draw one concrete augmentation chain.

    Affine parameters are redrawn (bounded) until the inverse footprint of the
    center crop fits inside the patch, so crops never contain padding; the
    fallback after exhausting retries is a scale-only transform, which always
    fits for the default geometry.
    """
    matrix = None
    for _ in range(64):
        sx = rng.uniform(*spec.scale_range)
        sy = rng.uniform(*spec.scale_range)
        theta = rng.uniform(*spec.rotation_range)
        shx = np.tan(np.deg2rad(rng.uniform(*spec.shear_range)))
        shy = np.tan(np.deg2rad(rng.uniform(*spec.shear_range)))
        shear = np.array([[1.0, shx], [shy, 1.0]])
        cand = _rotation(theta) @ shear @ np.diag([sx, sy])
        if theta == 0.0 and shx == 0.0 and shy == 0.0 and sx == 1.0 and sy == 1.0:
            cand = np.eye(2)
        if _affine_fits(cand, spec.patch_size, spec.crop_size):
            matrix = cand
            break
    if matrix is None:
        matrix = np.diag([rng.uniform(*spec.scale_range), rng.uniform(*spec.scale_range)])
    return SampledAugmentation(
        matrix=matrix,
        flip_horizontal=bool(rng.uniform() < spec.flip_prob),
        flip_vertical=bool(rng.uniform() < spec.flip_prob),
        gamma_thickness=float(2.0 ** rng.uniform(*spec.thickness_log2_range)),
        gamma_attenuation=float(2.0 ** rng.uniform(*spec.attenuation_log2_range)),
        blur_sigma=float(rng.uniform(*spec.blur_sigma_range)) if rng.uniform() < spec.blur_prob else 0.0,
        patch_size=spec.patch_size,
        crop_size=spec.crop_size,
    )
