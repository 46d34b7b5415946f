/**
 * Overlay compositing. The service's affinity heatmap PNG is the single
 * source of truth; the client only alpha-blends it over the base image at
 * the chosen opacity. Kept as pure functions over RGBA buffers so rendering
 * is testable without a canvas.
 */

/**
 * Source-over blend of the heatmap onto an opaque base:
 *   out = base * (1 - opacity) + heat * opacity, alpha stays 255.
 * Both buffers are RGBA of the same dimensions; returns a new buffer.
 */
export function compositeOverlay(
  base: Uint8ClampedArray,
  heat: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  if (base.length !== heat.length) {
    throw new Error("base and heatmap buffers must have the same size");
  }
  const a = Math.min(1, Math.max(0, opacity));
  const out = new Uint8ClampedArray(base.length);
  for (let i = 0; i < base.length; i += 4) {
    out[i] = base[i] * (1 - a) + heat[i] * a;
    out[i + 1] = base[i + 1] * (1 - a) + heat[i + 1] * a;
    out[i + 2] = base[i + 2] * (1 - a) + heat[i + 2] * a;
    out[i + 3] = 255;
  }
  return out;
}

/** Nearest-neighbor upscale of an RGBA buffer by an integer factor. */
export function upscaleNearest(
  src: Uint8ClampedArray,
  width: number,
  height: number,
  factor: number,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * factor * height * factor * 4);
  const ow = width * factor;
  for (let y = 0; y < height * factor; y++) {
    const sy = Math.floor(y / factor);
    for (let x = 0; x < ow; x++) {
      const sx = Math.floor(x / factor);
      const si = (sy * width + sx) * 4;
      const oi = (y * ow + x) * 4;
      out[oi] = src[si];
      out[oi + 1] = src[si + 1];
      out[oi + 2] = src[si + 2];
      out[oi + 3] = src[si + 3];
    }
  }
  return out;
}
