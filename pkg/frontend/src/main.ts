import { ApiClient, debounce } from "./api.js";
import { compositeOverlay } from "./overlay.js";
import {
  addPoint, createSession, DEFAULT_SIGMA, deserializeSession, findMarker,
  QuerySession, removePoint, serializeSession, setOpacity, setSigma,
} from "./session.js";
import type { DatasetInfo, QueryPoint } from "./types.js";
import { identityViewport, imageToFeature, imageToScreen, pan, screenToImage,
         Viewport, zoomAt } from "./viewer.js";

const API_BASE = (window as unknown as { PLITEX_API?: string }).PLITEX_API ?? "";

class App {
  private api = new ApiClient(API_BASE);
  private dataset!: DatasetInfo;
  private session!: QuerySession;
  private viewport: Viewport = identityViewport();
  private baseImage: HTMLImageElement | null = null;
  private overlayBitmaps = new Map<string, ImageData>();
  private canvas = document.getElementById("view") as HTMLCanvasElement;
  private status = document.getElementById("status") as HTMLSpanElement;
  private dragging: { x: number; y: number } | null = null;
  private requery = debounce(() => void this.runQuery(), 250);

  async start() {
    const datasets = await this.api.datasets();
    this.dataset = datasets[0];
    this.session = createSession(this.dataset.id, this.dataset.sections[0]);
    this.session.sigma = this.dataset.default_sigma ?? DEFAULT_SIGMA;
    this.buildControls();
    this.bindCanvas();
    await this.loadBase();
  }

  private buildControls() {
    const layerSel = document.getElementById("layer") as HTMLSelectElement;
    layerSel.innerHTML = "";
    for (const layer of this.dataset.layers) {
      const opt = document.createElement("option");
      opt.value = layer;
      opt.textContent = layer;
      layerSel.appendChild(opt);
    }
    layerSel.onchange = () => {
      this.session.layer = layerSel.value;
      void this.loadBase(); // layer switch preserves the viewport
    };
    const sigma = document.getElementById("sigma") as HTMLInputElement;
    sigma.value = String(this.session.sigma);
    (document.getElementById("sigma-value") as HTMLSpanElement).textContent =
      sigma.value;
    sigma.oninput = () => {
      this.session = setSigma(this.session, Number(sigma.value));
      (document.getElementById("sigma-value") as HTMLSpanElement).textContent =
        sigma.value;
      if (this.session.points.length > 0) this.requery();
    };
    const opacity = document.getElementById("opacity") as HTMLInputElement;
    opacity.oninput = () => {
      // client-side only: no network traffic on opacity changes
      this.session = setOpacity(this.session, Number(opacity.value));
      this.render();
    };
    (document.getElementById("prev") as HTMLButtonElement).onclick = () => this.step(-1);
    (document.getElementById("next") as HTMLButtonElement).onclick = () => this.step(1);
    (document.getElementById("clear") as HTMLButtonElement).onclick = () => {
      this.session = { ...this.session, points: [] };
      this.overlayBitmaps.clear();
      this.render();
    };
    (document.getElementById("export") as HTMLButtonElement).onclick = () => {
      const blob = new Blob([serializeSession(this.session)], { type: "application/json" });
      const a = document.createElement("a");
      a.href = URL.createObjectURL(blob);
      a.download = "query-session.json";
      a.click();
    };
    (document.getElementById("import") as HTMLInputElement).onchange = async (ev) => {
      const file = (ev.target as HTMLInputElement).files?.[0];
      if (!file) return;
      this.session = deserializeSession(await file.text());
      await this.loadBase();
      if (this.session.points.length > 0) await this.runQuery();
    };
    document.addEventListener("keydown", (ev) => {
      if (ev.key === "ArrowLeft") this.step(-1);
      if (ev.key === "ArrowRight") this.step(1);
    });
  }

  private step(delta: number) {
    const sections = this.dataset.sections;
    const index = sections.indexOf(this.session.activeSection);
    const next = Math.min(sections.length - 1, Math.max(0, index + delta));
    if (sections[next] !== this.session.activeSection) {
      this.session.activeSection = sections[next];
      void this.loadBase();
    }
  }

  private bindCanvas() {
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
      this.viewport = zoomAt(this.viewport, factor, ev.offsetX, ev.offsetY);
      this.render();
    });
    this.canvas.addEventListener("mousedown", (ev) => {
      if (ev.button === 1 || ev.shiftKey) {
        this.dragging = { x: ev.offsetX, y: ev.offsetY };
        ev.preventDefault();
      }
    });
    this.canvas.addEventListener("mousemove", (ev) => {
      if (this.dragging) {
        this.viewport = pan(this.viewport, ev.offsetX - this.dragging.x,
                            ev.offsetY - this.dragging.y);
        this.dragging = { x: ev.offsetX, y: ev.offsetY };
        this.render();
      }
    });
    this.canvas.addEventListener("mouseup", () => (this.dragging = null));
    this.canvas.addEventListener("click", (ev) => void this.handleClick(ev));
  }

  private async handleClick(ev: MouseEvent) {
    if (ev.shiftKey) return;
    const img = screenToImage(this.viewport, ev.offsetX, ev.offsetY);
    const feature = imageToFeature(img.x, img.y, this.dataset.feature.stride,
                                   this.dataset.feature.rows, this.dataset.feature.cols);
    if (!feature) return;
    const point: QueryPoint = { section: this.session.activeSection, ...feature };
    const hit = findMarker(this.session, point.section, feature.x, feature.y, 0.75);
    this.session = hit ? removePoint(this.session, hit) : addPoint(this.session, point);
    if (this.session.points.length === 0) {
      // removing the last point clears the overlay without a request
      this.overlayBitmaps.clear();
      this.render();
      return;
    }
    await this.runQuery();
  }

  private async runQuery() {
    this.status.textContent = "querying...";
    try {
      const resp = await this.api.query(this.session.points, this.session.sigma,
                                        this.session.components);
      if (resp === null) return; // superseded by a newer query
      this.overlayBitmaps.clear();
      for (const section of resp.sections) {
        const image = await decodePng(section.png);
        this.overlayBitmaps.set(section.id, image);
      }
      this.status.textContent =
        `${this.session.points.length} point(s), sigma ${this.session.sigma}`;
      this.render();
    } catch (err) {
      this.status.textContent = `query failed: ${(err as Error).message}`;
    }
  }

  private async loadBase() {
    const url = this.api.sectionImageUrl(this.session.activeSection, this.session.layer);
    const image = new Image();
    await new Promise<void>((resolve, reject) => {
      image.onload = () => resolve();
      image.onerror = () => reject(new Error(`cannot load ${url}`));
      image.src = url;
    }).catch((err) => {
      this.status.textContent = (err as Error).message;
    });
    if (image.complete && image.naturalWidth > 0) {
      this.baseImage = image;
    }
    this.render();
  }

  private render() {
    const ctx = this.canvas.getContext("2d")!;
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (!this.baseImage) return;
    ctx.save();
    ctx.imageSmoothingEnabled = false;
    ctx.translate(this.viewport.offsetX, this.viewport.offsetY);
    ctx.scale(this.viewport.scale, this.viewport.scale);
    ctx.drawImage(this.baseImage, 0, 0);
    const overlay = this.overlayBitmaps.get(this.session.activeSection);
    if (overlay && this.session.points.length > 0) {
      const stride = this.dataset.feature.stride;
      const composited = compositeAgainstCanvas(
        ctx, this.baseImage, overlay, stride, this.session.overlayOpacity);
      ctx.drawImage(composited, stride, stride,
                    overlay.width * stride, overlay.height * stride);
    }
    ctx.restore();
    this.drawMarkers(ctx);
  }

  private drawMarkers(ctx: CanvasRenderingContext2D) {
    const stride = this.dataset.feature.stride;
    for (const p of this.session.points) {
      if (p.section !== this.session.activeSection) continue;
      const screen = imageToScreen(this.viewport, (p.x + 1) * stride, (p.y + 1) * stride);
      ctx.beginPath();
      ctx.arc(screen.x, screen.y, 5, 0, 2 * Math.PI);
      ctx.fillStyle = "#e33";
      ctx.fill();
      ctx.strokeStyle = "#fff";
      ctx.stroke();
    }
  }
}

/** Blend the overlay against the matching base-image region, offscreen. */
function compositeAgainstCanvas(
  _ctx: CanvasRenderingContext2D,
  base: HTMLImageElement,
  overlay: ImageData,
  stride: number,
  opacity: number,
): HTMLCanvasElement {
  const off = document.createElement("canvas");
  off.width = overlay.width;
  off.height = overlay.height;
  const octx = off.getContext("2d")!;
  // base region under the overlay, downsampled to feature resolution
  octx.drawImage(base, stride / 2, stride / 2,
                 overlay.width * stride, overlay.height * stride,
                 0, 0, overlay.width, overlay.height);
  const baseData = octx.getImageData(0, 0, overlay.width, overlay.height);
  const blended = compositeOverlay(baseData.data, overlay.data, opacity);
  octx.putImageData(new ImageData(new Uint8ClampedArray(blended), overlay.width, overlay.height), 0, 0);
  return off;
}

async function decodePng(base64: string): Promise<ImageData> {
  const raw = atob(base64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  const bitmap = await createImageBitmap(new Blob([bytes], { type: "image/png" }));
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const ctx = off.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  return ctx.getImageData(0, 0, bitmap.width, bitmap.height);
}

void new App().start();
