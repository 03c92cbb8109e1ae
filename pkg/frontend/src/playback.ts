/** Skeleton playback helpers. Rendering is a pure function of the fetched
 * frames; no client-side motion mutation happens here. */

import type { GenerateResponse, KeyframeError } from "./api.js";
import { decodeF32 } from "./wire.js";

export interface FramePose {
  /** per-joint [x, y, z] in meters */
  joints: [number, number, number][];
}

/** Extract the pose at frame t from a (T, J, 3) joint_positions array. */
export function poseAt(resp: GenerateResponse, t: number): FramePose {
  const [frames, joints, coords] = resp.joint_positions.shape;
  if (coords !== 3) throw new Error(`expected 3 coords, got ${coords}`);
  if (t < 0 || t >= frames) throw new RangeError(`frame ${t} outside [0, ${frames})`);
  const data = decodeF32(resp.joint_positions);
  const pose: [number, number, number][] = [];
  for (let j = 0; j < joints; j++) {
    const base = (t * joints + j) * 3;
    pose.push([data[base], data[base + 1], data[base + 2]]);
  }
  return { joints: pose };
}

/** Top-down XY trace of one joint across all frames. */
export function jointTrace(resp: GenerateResponse, joint: number): [number, number][] {
  const [frames, joints] = resp.joint_positions.shape;
  const data = decodeF32(resp.joint_positions);
  const out: [number, number][] = [];
  for (let t = 0; t < frames; t++) {
    const base = (t * joints + joint) * 3;
    out.push([data[base], data[base + 1]]);
  }
  return out;
}

/** Mean of per-keyframe errors; matches the service's avg_err. */
export function overlayAverage(errors: KeyframeError[]): number | null {
  if (!errors.length) return null;
  return errors.reduce((a, e) => a + e.error, 0) / errors.length;
}

export function errorAt(errors: KeyframeError[], frame: number,
                        joint: number): number | null {
  const hit = errors.find((e) => e.frame === frame && e.joint === joint);
  return hit ? hit.error : null;
}

/** World-to-canvas transform fitting a set of XY points with padding. */
export function fitView(points: [number, number][], width: number, height: number,
                        pad = 20) {
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (const [x, y] of points) {
    minX = Math.min(minX, x);
    maxX = Math.max(maxX, x);
    minY = Math.min(minY, y);
    maxY = Math.max(maxY, y);
  }
  if (!points.length || !isFinite(minX)) {
    minX = -1; maxX = 1; minY = -1; maxY = 1;
  }
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanY = Math.max(maxY - minY, 1e-6);
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  return {
    toCanvas(x: number, y: number): [number, number] {
      return [pad + (x - minX) * scale, height - pad - (y - minY) * scale];
    },
    toWorld(cx: number, cy: number): [number, number] {
      return [minX + (cx - pad) / scale, minY + (height - pad - cy) / scale];
    },
    scale,
  };
}

/** Frames identical => rendered poses identical (pure-function playback). */
export function posesEqual(a: GenerateResponse, b: GenerateResponse): boolean {
  if (a.joint_positions.shape.join() !== b.joint_positions.shape.join()) return false;
  return a.joint_positions.data === b.joint_positions.data;
}
