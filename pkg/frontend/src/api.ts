import type { DatasetInfo, QueryPoint, QueryResponse } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin client over the retrieval service. Affinities are never computed on
 * the client; every overlay comes from POST /api/query. In-flight queries
 * are aborted when a newer one starts, so stale responses never render.
 */
export class ApiClient {
  private controller: AbortController | null = null;
  public requestCount = 0;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async datasets(): Promise<DatasetInfo[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/datasets`);
    if (!resp.ok) throw new Error(`datasets failed: HTTP ${resp.status}`);
    return (await resp.json()) as DatasetInfo[];
  }

  sectionImageUrl(section: string, layer: string): string {
    return `${this.baseUrl}/api/sections/${encodeURIComponent(section)}/image` +
      `?layer=${encodeURIComponent(layer)}`;
  }

  /**
   * Run an affinity query; supersedes any in-flight query. Returns null when
   * this request was aborted by a newer one.
   */
  async query(points: QueryPoint[], sigma: number, components: number,
  ): Promise<QueryResponse | null> {
    if (points.length === 0) throw new Error("query needs at least one point");
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    this.requestCount += 1;
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/api/query`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ points, sigma, components }),
        signal: controller.signal,
      });
    } catch (err) {
      if (controller.signal.aborted) return null;
      throw err;
    }
    if (controller.signal.aborted) return null;
    if (!resp.ok) throw new Error(`query failed: HTTP ${resp.status}`);
    return (await resp.json()) as QueryResponse;
  }
}

/** Trailing-edge debounce used for the sigma slider. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}
