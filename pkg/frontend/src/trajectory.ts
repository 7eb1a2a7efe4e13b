/** Trajectory editing: resample a drawn polyline to per-frame samples. */

import { FPS, Vec2 } from "./protocol";

export const MIN_PATH_LENGTH_M = 3.0;

export function pathLength(points: Vec2[]): number {
  let total = 0;
  for (let i = 1; i < points.length; i++) {
    total += Math.hypot(
      points[i][0] - points[i - 1][0],
      points[i][1] - points[i - 1][1],
    );
  }
  return total;
}

/**
 * Resample a polyline at uniform arc-length spacing speed/FPS so index k is
 * the target position at frame k. Both endpoints are included; the final
 * sample sits exactly on the path end.
 */
export function resampleTrajectory(points: Vec2[], speedMps: number): Vec2[] {
  if (points.length < 2) {
    throw new Error("need at least two points");
  }
  if (speedMps <= 0) {
    throw new Error("speed must be positive");
  }
  const step = speedMps / FPS;
  const total = pathLength(points);
  const count = Math.round(total / step);

  const out: Vec2[] = [];
  let seg = 1;
  let segStart = 0; // arc length at the start of segment `seg`
  let segLen = Math.hypot(
    points[1][0] - points[0][0],
    points[1][1] - points[0][1],
  );
  for (let k = 0; k < count; k++) {
    const s = k * step;
    while (s > segStart + segLen && seg < points.length - 1) {
      segStart += segLen;
      seg += 1;
      segLen = Math.hypot(
        points[seg][0] - points[seg - 1][0],
        points[seg][1] - points[seg - 1][1],
      );
    }
    const f = segLen > 0 ? (s - segStart) / segLen : 0;
    const a = points[seg - 1];
    const b = points[seg];
    out.push([a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]);
  }
  out.push([...points[points.length - 1]] as Vec2);
  return out;
}

export type TrajectoryDraft =
  | { ok: true; points: Vec2[] }
  | { ok: false; warning: string };

/**
 * Validate a drawn path and produce the set_trajectory payload. Paths under
 * the 3 m minimum yield a warning and no message.
 */
export function buildTrajectory(points: Vec2[], speedMps: number): TrajectoryDraft {
  if (points.length < 2) {
    return { ok: false, warning: "draw at least two points" };
  }
  const length = pathLength(points);
  if (length < MIN_PATH_LENGTH_M) {
    return {
      ok: false,
      warning: `path is ${length.toFixed(2)} m; the minimum is ${MIN_PATH_LENGTH_M} m`,
    };
  }
  return { ok: true, points: resampleTrajectory(points, speedMps) };
}
