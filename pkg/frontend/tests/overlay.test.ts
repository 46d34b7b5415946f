import { describe, expect, it } from "vitest";
import { compositeOverlay, upscaleNearest } from "../src/overlay.js";
import { imageToFeature, identityViewport, pan, screenToImage, zoomAt } from "../src/viewer.js";

function rgba(pixels: number[][]): Uint8ClampedArray {
  return new Uint8ClampedArray(pixels.flat());
}

describe("compositeOverlay", () => {
  it("matches the golden source-over blend at the set opacity", () => {
    const base = rgba([[100, 50, 200, 255], [0, 0, 0, 255]]);
    const heat = rgba([[255, 0, 0, 255], [30, 60, 90, 255]]);
    const got = compositeOverlay(base, heat, 0.6);
    // golden values: round(base * 0.4 + heat * 0.6), alpha 255
    const golden = rgba([[193, 20, 80, 255], [18, 36, 54, 255]]);
    expect(Array.from(got)).toEqual(Array.from(golden));
  });

  it("opacity 0 reproduces the base exactly; opacity 1 the heatmap", () => {
    const base = rgba([[10, 20, 30, 255], [40, 50, 60, 255]]);
    const heat = rgba([[200, 210, 220, 255], [230, 240, 250, 255]]);
    expect(Array.from(compositeOverlay(base, heat, 0)))
      .toEqual([10, 20, 30, 255, 40, 50, 60, 255]);
    expect(Array.from(compositeOverlay(base, heat, 1)))
      .toEqual([200, 210, 220, 255, 230, 240, 250, 255]);
  });

  it("identical inputs give a pixel-identical result regardless of repetition", () => {
    const base = rgba([[1, 2, 3, 255]]);
    const heat = rgba([[100, 110, 120, 255]]);
    const a = compositeOverlay(base, heat, 0.35);
    const b = compositeOverlay(base, heat, 0.35);
    expect(Array.from(a)).toEqual(Array.from(b));
  });

  it("rejects mismatched buffers", () => {
    expect(() => compositeOverlay(rgba([[0, 0, 0, 255]]),
                                  rgba([[0, 0, 0, 255], [0, 0, 0, 255]]), 0.5))
      .toThrow();
  });

  it("composition is pure client-side math (no fetch involved)", () => {
    const before = globalThis.fetch;
    let called = false;
    globalThis.fetch = (() => {
      called = true;
      return Promise.reject(new Error("unexpected"));
    }) as typeof fetch;
    try {
      compositeOverlay(rgba([[9, 9, 9, 255]]), rgba([[1, 1, 1, 255]]), 0.7);
      expect(called).toBe(false);
    } finally {
      globalThis.fetch = before;
    }
  });
});

describe("upscaleNearest", () => {
  it("replicates feature pixels into stride blocks", () => {
    const src = rgba([[255, 0, 0, 255], [0, 255, 0, 255]]); // 2x1
    const out = upscaleNearest(src, 2, 1, 2);               // -> 4x2
    expect(out.length).toBe(4 * 2 * 4);
    expect(Array.from(out.slice(0, 4))).toEqual([255, 0, 0, 255]);
    expect(Array.from(out.slice(8, 12))).toEqual([0, 255, 0, 255]);
  });
});

describe("viewport math", () => {
  it("screen/image transforms invert each other", () => {
    let vp = identityViewport();
    vp = zoomAt(vp, 2.0, 100, 80);
    vp = pan(vp, -20, 14);
    const img = screenToImage(vp, 250, 160);
    expect(img.x * vp.scale + vp.offsetX).toBeCloseTo(250, 10);
    expect(img.y * vp.scale + vp.offsetY).toBeCloseTo(160, 10);
  });

  it("zoom keeps the anchor point fixed", () => {
    const vp = zoomAt(identityViewport(), 3.0, 50, 60);
    const anchor = screenToImage(vp, 50, 60);
    expect(anchor.x).toBeCloseTo(50, 10);
    expect(anchor.y).toBeCloseTo(60, 10);
  });

  it("maps image clicks to tile centers on the feature grid", () => {
    // stride 32, tile 64: feature (0,0) is centered at image (32, 32)
    expect(imageToFeature(32, 32, 32, 7, 7)).toEqual({ x: 0, y: 0 });
    expect(imageToFeature(64, 96, 32, 7, 7)).toEqual({ x: 1, y: 2 });
    // clicks in the border region not covered by any tile are ignored
    expect(imageToFeature(5, 5, 32, 7, 7)).toBeNull();
    expect(imageToFeature(-40, 0, 32, 7, 7)).toBeNull();
    expect(imageToFeature(3000, 0, 32, 7, 7)).toBeNull();
  });
});
