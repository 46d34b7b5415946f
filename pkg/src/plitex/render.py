"""PNG rendering helpers and the fixed heatmap colormap.

The affinity heatmap uses an analytic 256-entry black-red-yellow-white table
so golden-image comparisons stay stable across library versions:

    r(t) = clip(3t, 0, 1),  g(t) = clip(3t - 1, 0, 1),  b(t) = clip(3t - 2, 0, 1)

evaluated at t = i / 255 and quantized to uint8.
"""

from __future__ import annotations

import io
from typing import Optional

import numpy as np
from PIL import Image

from .signal import _hsv_to_rgb


def heat_colormap() -> np.ndarray:
    """The fixed 256 x 3 uint8 heatmap table described in the module docstring."""
    t = np.linspace(0.0, 1.0, 256)
    rgb = np.stack([np.clip(3.0 * t, 0, 1), np.clip(3.0 * t - 1.0, 0, 1),
                    np.clip(3.0 * t - 2.0, 0, 1)], axis=1)
    return np.round(rgb * 255.0).astype(np.uint8)


HEAT_TABLE = heat_colormap()


def to_png_bytes(image: np.ndarray) -> bytes:
    """Encode a (h, w) or (h, w, 3) uint8 array as PNG."""
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def grayscale_image(values: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> np.ndarray:
    scaled = (np.clip(values, vmin, vmax) - vmin) / (vmax - vmin if vmax > vmin else 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def heatmap_image(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the fixed heat table."""
    idx = np.clip(np.round(np.clip(values, 0.0, 1.0) * 255.0), 0, 255).astype(int)
    return HEAT_TABLE[idx]


def label_colors(count: int) -> np.ndarray:
    """Deterministic palette: golden-angle hues, full saturation."""
    hues = np.mod(0.61803398875 * np.arange(count), 1.0)
    rgb = _hsv_to_rgb(hues, np.full(count, 0.75), np.full(count, 0.95))
    return np.round(rgb * 255.0).astype(np.uint8)


def label_image(labels: np.ndarray, count: Optional[int] = None,
                mask: Optional[np.ndarray] = None) -> np.ndarray:
    count = count if count is not None else int(labels.max()) + 1
    palette = label_colors(max(count, 1))
    img = palette[np.clip(labels, 0, count - 1)]
    if mask is not None:
        img = np.where(mask[..., None], img, 0)
    return img.astype(np.uint8)
