/** Pan/zoom viewport math, separated from the canvas glue for testability. */

export interface Viewport {
  scale: number;
  offsetX: number; // screen position of image pixel (0, 0)
  offsetY: number;
}

export function identityViewport(): Viewport {
  return { scale: 1, offsetX: 0, offsetY: 0 };
}

export function screenToImage(vp: Viewport, sx: number, sy: number): { x: number; y: number } {
  return { x: (sx - vp.offsetX) / vp.scale, y: (sy - vp.offsetY) / vp.scale };
}

export function imageToScreen(vp: Viewport, ix: number, iy: number): { x: number; y: number } {
  return { x: ix * vp.scale + vp.offsetX, y: iy * vp.scale + vp.offsetY };
}

/** Zoom by a factor keeping the screen anchor point fixed. */
export function zoomAt(vp: Viewport, factor: number, sx: number, sy: number): Viewport {
  const scale = Math.min(64, Math.max(1 / 16, vp.scale * factor));
  const applied = scale / vp.scale;
  return {
    scale,
    offsetX: sx - (sx - vp.offsetX) * applied,
    offsetY: sy - (sy - vp.offsetY) * applied,
  };
}

export function pan(vp: Viewport, dx: number, dy: number): Viewport {
  return { ...vp, offsetX: vp.offsetX + dx, offsetY: vp.offsetY + dy };
}

/** Map a click in image pixels to feature-grid coordinates. */
export function imageToFeature(ix: number, iy: number, stride: number,
                               rows: number, cols: number): { x: number; y: number } | null {
  const fx = Math.round((ix - stride) / stride);
  const fy = Math.round((iy - stride) / stride);
  if (fx < 0 || fy < 0 || fx >= cols || fy >= rows) return null;
  return { x: fx, y: fy };
}
