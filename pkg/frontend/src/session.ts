import type { QueryPoint } from "./types.js";

export const DEFAULT_SIGMA = 3.5;

/**
 * Full UI state of a retrieval session. Serializable, so a session can be
 * exported, shared and reconstructed exactly.
 */
export interface QuerySession {
  datasetId: string;
  points: QueryPoint[];
  sigma: number;
  components: number; // 0 = all available
  activeSection: string;
  layer: string;
  overlayOpacity: number;
}

export function createSession(datasetId: string, firstSection: string): QuerySession {
  return {
    datasetId,
    points: [],
    sigma: DEFAULT_SIGMA,
    components: 0,
    activeSection: firstSection,
    layer: "transmittance",
    overlayOpacity: 0.6,
  };
}

export function samePoint(a: QueryPoint, b: QueryPoint): boolean {
  return a.section === b.section && a.x === b.x && a.y === b.y;
}

/** Append a query point; duplicates are allowed (the mean is unchanged). */
export function addPoint(session: QuerySession, point: QueryPoint): QuerySession {
  return { ...session, points: [...session.points, point] };
}

/** Remove the first point matching the location (click on a marker). */
export function removePoint(session: QuerySession, point: QueryPoint): QuerySession {
  const index = session.points.findIndex((p) => samePoint(p, point));
  if (index < 0) return session;
  const points = session.points.slice();
  points.splice(index, 1);
  return { ...session, points };
}

/** Marker hit within `radius` feature pixels of the click, or null. */
export function findMarker(
  session: QuerySession,
  section: string,
  x: number,
  y: number,
  radius: number,
): QueryPoint | null {
  let best: QueryPoint | null = null;
  let bestDist = radius;
  for (const p of session.points) {
    if (p.section !== section) continue;
    const d = Math.hypot(p.x - x, p.y - y);
    if (d <= bestDist) {
      best = p;
      bestDist = d;
    }
  }
  return best;
}

export function setSigma(session: QuerySession, sigma: number): QuerySession {
  if (!(sigma > 0)) throw new Error("sigma must be positive");
  return { ...session, sigma };
}

export function setOpacity(session: QuerySession, opacity: number): QuerySession {
  return { ...session, overlayOpacity: Math.min(1, Math.max(0, opacity)) };
}

export function serializeSession(session: QuerySession): string {
  return JSON.stringify(session);
}

export function deserializeSession(text: string): QuerySession {
  const raw = JSON.parse(text) as Partial<QuerySession>;
  if (typeof raw.datasetId !== "string" || !Array.isArray(raw.points)) {
    throw new Error("not a serialized query session");
  }
  for (const p of raw.points) {
    if (typeof p.section !== "string" || typeof p.x !== "number" || typeof p.y !== "number") {
      throw new Error("malformed query point");
    }
  }
  const sigma = typeof raw.sigma === "number" && raw.sigma > 0 ? raw.sigma : DEFAULT_SIGMA;
  return {
    datasetId: raw.datasetId,
    points: raw.points as QueryPoint[],
    sigma,
    components: typeof raw.components === "number" ? raw.components : 0,
    activeSection: typeof raw.activeSection === "string" ? raw.activeSection : "",
    layer: typeof raw.layer === "string" ? raw.layer : "transmittance",
    overlayOpacity: typeof raw.overlayOpacity === "number" ? raw.overlayOpacity : 0.6,
  };
}
