"""Measurement physics for polarized light imaging.

A rotating-polarizer measurement records, per pixel, a sinusoidal intensity
profile over the polarizer angle rho:

    I_rho = I_T / 2 * (1 + sin(2 rho - 2 phi) * sin(delta))

with transmittance I_T, in-plane fiber direction phi and phase retardation
delta.  This module synthesizes such profiles from parameter maps, recovers
the maps back from profiles by harmonic analysis, estimates out-of-plane
inclination from retardation, and provides the channel encodings used for
visualization and as encoder input.

Conventions: directions are degrees in [0, 180); inclinations are degrees in
[0, 90]; retardation r = |sin delta| is dimensionless in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ShapeMismatch

DEFAULT_ANGLES = tuple(float(a) for a in range(0, 180, 20))


def wrap_direction(phi_deg: np.ndarray | float) -> np.ndarray | float:
    """Canonicalize direction angles to [0, 180) degrees."""
    return np.mod(phi_deg, 180.0)


def folded_trig(theta_deg) -> tuple:
    """cos/sin of an angle in degrees, exact at multiples of 90°.

    Folding into [-45°, 45°] before evaluating keeps quadrant values exact,
    so opposing direction phasors cancel exactly in resampling sums.
    """
    t = np.asarray(theta_deg, dtype=float)
    k = np.round(t / 90.0)
    rem = np.deg2rad(t - 90.0 * k)
    c, s = np.cos(rem), np.sin(rem)
    k4 = k.astype(np.int64) % 4
    cos_v = np.choose(k4, [c, -s, -c, s])
    sin_v = np.choose(k4, [s, c, -s, -c])
    return cos_v, sin_v


def direction_phasor(phi_deg) -> np.ndarray:
    """Complex unit phasor exp(i 2 phi) for directions given in degrees."""
    c, s = folded_trig(2.0 * np.asarray(phi_deg, dtype=float))
    return c + 1j * s


def direction_difference(a_deg, b_deg):
    """Smallest absolute difference between directions, modulo 180 degrees."""
    d = np.mod(np.asarray(a_deg, dtype=float) - b_deg, 180.0)
    return np.minimum(d, 180.0 - d)


@dataclass
class IntensityStack:
    """Per-pixel transmitted intensities at a set of polarizer angles."""

    angles: np.ndarray  # degrees, shape (n,)
    data: np.ndarray    # shape (n, h, w)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or self.data.shape[0] != self.angles.shape[0]:
            raise ShapeMismatch("intensity data must be (n_angles, h, w)")
        if self.angles.shape[0] < 3:
            raise DataError("need at least 3 polarizer angles")
        wrapped = np.sort(np.mod(self.angles, 180.0))
        if np.any(np.diff(wrapped) < 1e-9):
            raise DataError("polarizer angles must be distinct modulo 180°")
        if np.any(self.data < 0):
            raise DataError("intensities must be non-negative")

    @property
    def shape(self):
        return self.data.shape[1:]


@dataclass
class ParameterMaps:
    """Co-registered transmittance / direction / retardation rasters."""

    transmittance: np.ndarray   # same units as incident
    direction: np.ndarray       # degrees in [0, 180)
    retardation: np.ndarray     # |sin delta| in [0, 1]
    pixel_size: float = 1.0     # micrometers
    incident: float = 1.0       # incident intensity I_0
    mask: Optional[np.ndarray] = None        # foreground / validity mask
    degenerate: Optional[np.ndarray] = None  # pixels flagged by recover_maps

    def __post_init__(self):
        self.transmittance = np.asarray(self.transmittance, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        self.retardation = np.asarray(self.retardation, dtype=float)
        if not (self.transmittance.shape == self.direction.shape == self.retardation.shape):
            raise ShapeMismatch("parameter maps must share one raster shape")

    @property
    def shape(self):
        return self.transmittance.shape

    def validate(self):
        if np.any(self.retardation < -1e-12) or np.any(self.retardation > 1 + 1e-12):
            raise DataError("retardation out of [0, 1]")
        if np.any(self.transmittance < -1e-12) or np.any(self.transmittance > self.incident + 1e-9):
            raise DataError("transmittance out of [0, I_0]")
        return self

    def copy(self) -> "ParameterMaps":
        return ParameterMaps(
            self.transmittance.copy(), self.direction.copy(), self.retardation.copy(),
            pixel_size=self.pixel_size, incident=self.incident,
            mask=None if self.mask is None else self.mask.copy(),
            degenerate=None if self.degenerate is None else self.degenerate.copy(),
        )


@dataclass
class OpticsConfig:
    """Optical constants of the measurement and the mounted section."""

    birefringence: float = 1.5e-3    # delta n
    wavelength_nm: float = 550.0
    thickness_um: float = 60.0       # nominal section thickness t0
    attenuation_per_um: float = 0.0115525  # mu; exp(-mu*t0) ~ 0.5

    def __post_init__(self):
        for name in ("birefringence", "wavelength_nm", "thickness_um", "attenuation_per_um"):
            if getattr(self, name) <= 0:
                raise DataError(f"optics field {name} must be positive")

    @property
    def max_phase(self) -> float:
        """Phase retardation of a fully myelinated in-plane fiber (radians)."""
        return 2.0 * np.pi * self.thickness_um * self.birefringence / (self.wavelength_nm * 1e-3)


@dataclass
class FiberOrientationField:
    """Ground-truth style description of fiber geometry per pixel."""

    direction: np.ndarray    # degrees [0, 180)
    inclination: np.ndarray  # degrees [0, 90]
    density: np.ndarray      # relative myelin density [0, 1]

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=float)
        self.inclination = np.asarray(self.inclination, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if not (self.direction.shape == self.inclination.shape == self.density.shape):
            raise ShapeMismatch("orientation field rasters must share one shape")


def synthesize_profile(maps: ParameterMaps, angles: Sequence[float] = DEFAULT_ANGLES) -> IntensityStack:
    """Evaluate the sinusoidal intensity profile at each pixel and angle."""
    rho = np.deg2rad(np.asarray(angles, dtype=float))
    phi = np.deg2rad(maps.direction)
    modulation = np.sin(2.0 * rho[:, None, None] - 2.0 * phi[None]) * maps.retardation[None]
    data = 0.5 * maps.transmittance[None] * (1.0 + modulation)
    return IntensityStack(angles=np.asarray(angles, dtype=float), data=data)


def _harmonic_coefficients(stack: IntensityStack):
    """Mean and 2-rho harmonic of the profile.

    Equidistant angle grids over 180° use the discrete Fourier sums; arbitrary
    grids fall back to a least-squares fit of a0 + a2*cos(2rho) + b2*sin(2rho).
    """
    n = stack.angles.shape[0]
    rho = np.deg2rad(stack.angles)
    flat = stack.data.reshape(n, -1)
    step = 180.0 / n
    equidistant = np.allclose(np.mod(np.diff(np.sort(np.mod(stack.angles, 180.0))), 180.0),
                              step, atol=1e-9)
    if equidistant and n >= 5:
        a0 = flat.mean(axis=0)
        a2 = (2.0 / n) * (np.cos(2.0 * rho) @ flat)
        b2 = (2.0 / n) * (np.sin(2.0 * rho) @ flat)
    else:
        design = np.stack([np.ones_like(rho), np.cos(2.0 * rho), np.sin(2.0 * rho)], axis=1)
        coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
        a0, a2, b2 = coef
    shape = stack.shape
    return a0.reshape(shape), a2.reshape(shape), b2.reshape(shape)


def recover_maps(stack: IntensityStack, incident: float = 1.0,
                 degenerate_floor: Optional[float] = None,
                 pixel_size: float = 1.0) -> ParameterMaps:
    """Recover transmittance, retardation and direction from intensity profiles.

    Pixels whose transmittance falls below ``degenerate_floor`` (default
    1e-6 * incident) carry no usable modulation; they get r = 0, phi = 0 and
    are flagged in the returned ``degenerate`` raster.
    """
    if degenerate_floor is None:
        degenerate_floor = 1e-6 * incident
    a0, a2, b2 = _harmonic_coefficients(stack)
    transmittance = 2.0 * a0
    degenerate = transmittance < degenerate_floor
    safe = np.where(degenerate, 1.0, transmittance)
    retardation = np.clip(2.0 * np.hypot(a2, b2) / safe, 0.0, 1.0)
    # I = IT/2 + (IT r/2)(sin2rho cos2phi - cos2rho sin2phi)
    # => a2 = -(IT r / 2) sin 2phi,  b2 = (IT r / 2) cos 2phi
    direction = wrap_direction(np.rad2deg(0.5 * np.arctan2(-a2, b2)))
    # modulation below resolvable amplitude has no meaningful phase
    flat = retardation < 1e-12
    direction = np.where(flat | degenerate, 0.0, direction)
    retardation = np.where(flat | degenerate, 0.0, retardation)
    return ParameterMaps(transmittance, direction, retardation,
                         pixel_size=pixel_size, incident=incident, degenerate=degenerate)


def estimate_birefringent_thickness(maps: ParameterMaps, optics: OpticsConfig) -> np.ndarray:
    """Attenuation-implied cumulative birefringent thickness, in micrometers.

    Inverts Bouguer-Lambert for the tissue fraction and clamps it to the
    nominal section thickness: t = t0 * clamp(ln(I0/IT) / (mu t0), 0, 1).
    """
    ratio = np.clip(maps.transmittance / maps.incident, 1e-300, None)
    fraction = np.clip(-np.log(ratio) / (optics.attenuation_per_um * optics.thickness_um), 0.0, 1.0)
    return optics.thickness_um * fraction


def estimate_inclination(maps: ParameterMaps, optics: OpticsConfig) -> np.ndarray:
    """Out-of-plane inclination (degrees) from retardation and transmittance.

    Uses delta = 2 pi t dn / lambda * cos^2(alpha) with t estimated from the
    attenuation; pixels with no estimated tissue return 90°.
    """
    delta = np.arcsin(np.clip(maps.retardation, 0.0, 1.0))
    thickness = estimate_birefringent_thickness(maps, optics)
    full_phase = 2.0 * np.pi * thickness * optics.birefringence / (optics.wavelength_nm * 1e-3)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos2 = np.where(full_phase > 0, delta / np.where(full_phase > 0, full_phase, 1.0), 0.0)
    alpha = np.rad2deg(np.arccos(np.sqrt(np.clip(cos2, 0.0, 1.0))))
    return np.where(thickness <= 0, 90.0, alpha)


def forward_model(field: FiberOrientationField, optics: OpticsConfig,
                  incident: float = 1.0, pixel_size: float = 1.0) -> ParameterMaps:
    """Parameter maps of a known fiber geometry under the measurement physics."""
    thickness = field.density * optics.thickness_um
    cos2 = np.cos(np.deg2rad(field.inclination)) ** 2
    delta = 2.0 * np.pi * thickness * optics.birefringence / (optics.wavelength_nm * 1e-3) * cos2
    retardation = np.abs(np.sin(delta))
    transmittance = incident * np.exp(-optics.attenuation_per_um * thickness)
    return ParameterMaps(transmittance, wrap_direction(field.direction), retardation,
                         pixel_size=pixel_size, incident=incident)


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, h in [0, 1)."""
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def render_fom(maps: ParameterMaps, inclination: np.ndarray) -> np.ndarray:
    """8-bit HSV fiber orientation map: hue = 2*direction, sat = val = cos(inclination)."""
    if inclination.shape != maps.shape:
        raise ShapeMismatch("inclination raster must match the maps")
    hue = np.mod(2.0 * maps.direction, 360.0) / 360.0
    sv = np.clip(np.cos(np.deg2rad(inclination)), 0.0, 1.0)
    rgb = _hsv_to_rgb(hue, sv, sv)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def stack_channels(maps: ParameterMaps) -> np.ndarray:
    """Encoder input channels (I_T, r cos 2phi, r sin 2phi), shape (3, h, w).

    The doubled angle removes the 180° ambiguity of the direction.
    """
    c, s = folded_trig(2.0 * wrap_direction(maps.direction))
    return np.stack([
        maps.transmittance,
        maps.retardation * c,
        maps.retardation * s,
    ])
