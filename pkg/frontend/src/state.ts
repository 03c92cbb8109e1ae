/** Session state and pure reducers for the control studio.
 *
 * Constraint edits never mutate a completed result; every generation is
 * appended to history together with its request snapshot.
 */

import type { GenerateRequest, GenerateResponse } from "./api.js";

export interface Keypoint {
  frame: number;
  x: number;
  y: number;
  z?: number; // optional height handle
}

export interface SessionState {
  prompt: string;
  length: number;
  planner: "ddm" | "ar";
  guidanceScale: number | null;
  eta: number;
  innerSteps: number;
  seed: number;
  /** joint index -> keypoints, kept sorted by frame */
  constraints: ReadonlyMap<number, readonly Keypoint[]>;
  /** tokens pinned from the last generation; edits re-decode instead of replanning */
  pinnedTokens: readonly number[] | null;
  lastResult: GenerateResponse | null;
  history: readonly HistoryEntry[];
  inFlight: boolean;
  queuedEdit: boolean;
}

export interface HistoryEntry {
  request: GenerateRequest | { tokens: readonly number[]; length: number };
  result: GenerateResponse;
  via: "generate" | "control-decode";
}

export function initialState(): SessionState {
  return {
    prompt: "",
    length: 64,
    planner: "ddm",
    guidanceScale: null,
    eta: 0.08,
    innerSteps: 1,
    seed: 0,
    constraints: new Map(),
    pinnedTokens: null,
    lastResult: null,
    history: [],
    inFlight: false,
    queuedEdit: false,
  };
}

function cloneConstraints(
  constraints: ReadonlyMap<number, readonly Keypoint[]>,
): Map<number, Keypoint[]> {
  const out = new Map<number, Keypoint[]>();
  for (const [joint, pts] of constraints) out.set(joint, pts.map((p) => ({ ...p })));
  return out;
}

export function addKeypoint(state: SessionState, joint: number,
                            point: Keypoint): SessionState {
  if (point.frame < 0 || point.frame >= state.length) {
    throw new RangeError(`frame ${point.frame} outside [0, ${state.length})`);
  }
  const constraints = cloneConstraints(state.constraints);
  const pts = (constraints.get(joint) ?? []).filter((p) => p.frame !== point.frame);
  pts.push({ ...point });
  pts.sort((a, b) => a.frame - b.frame);
  constraints.set(joint, pts);
  return { ...state, constraints };
}

export function moveKeypoint(state: SessionState, joint: number, frame: number,
                             x: number, y: number, z?: number): SessionState {
  const constraints = cloneConstraints(state.constraints);
  const pts = constraints.get(joint) ?? [];
  const pt = pts.find((p) => p.frame === frame);
  if (!pt) return state;
  pt.x = x;
  pt.y = y;
  if (z !== undefined) pt.z = z;
  return { ...state, constraints };
}

export function deleteKeypoint(state: SessionState, joint: number,
                               frame: number): SessionState {
  const constraints = cloneConstraints(state.constraints);
  const pts = (constraints.get(joint) ?? []).filter((p) => p.frame !== frame);
  if (pts.length) constraints.set(joint, pts);
  else constraints.delete(joint);
  return { ...state, constraints };
}

export function clearConstraints(state: SessionState): SessionState {
  return { ...state, constraints: new Map() };
}

/** Linear interpolation between the keypoints at f0 and f1 (inclusive). */
export function denseFill(state: SessionState, joint: number, f0: number,
                          f1: number): SessionState {
  const pts = state.constraints.get(joint) ?? [];
  const a = pts.find((p) => p.frame === f0);
  const b = pts.find((p) => p.frame === f1);
  if (!a || !b || f1 <= f0) return state;
  let next = state;
  for (let f = f0; f <= f1; f++) {
    const t = (f - f0) / (f1 - f0);
    const z = a.z !== undefined && b.z !== undefined
      ? a.z + (b.z - a.z) * t
      : a.z ?? b.z;
    next = addKeypoint(next, joint, {
      frame: f,
      x: a.x + (b.x - a.x) * t,
      y: a.y + (b.y - a.y) * t,
      ...(z !== undefined ? { z } : {}),
    });
  }
  return next;
}

export function constraintCount(state: SessionState): number {
  let n = 0;
  for (const pts of state.constraints.values()) n += pts.length;
  return n;
}

/** Generation settles: pin tokens so constraint edits take the fast re-decode
 * path; the completed result is appended to history, never mutated. */
export function applyResult(state: SessionState,
                            entry: HistoryEntry): SessionState {
  return {
    ...state,
    pinnedTokens: [...entry.result.tokens],
    lastResult: entry.result,
    history: [...state.history, entry],
    inFlight: false,
  };
}

/** Prompt/planner/seed/length changes invalidate pinned tokens. */
export function editPlanningInputs(state: SessionState,
                                   patch: Partial<Pick<SessionState,
                                     "prompt" | "planner" | "seed" | "length"
                                     | "guidanceScale">>): SessionState {
  return { ...state, ...patch, pinnedTokens: null };
}

export function beginRequest(state: SessionState): SessionState {
  return { ...state, inFlight: true, queuedEdit: false };
}

/** Edits during an in-flight request are queued, not raced. */
export function noteEditDuringFlight(state: SessionState): SessionState {
  return state.inFlight ? { ...state, queuedEdit: true } : state;
}
