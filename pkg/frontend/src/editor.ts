/** Constraint editor core: turns keypoints into the service's LocalCondition
 * payload (targets + mask), exactly matching the /v1 control schema. */

import type { ControlBlock, GenerateRequest, ControlDecodeRequest } from "./api.js";
import type { SessionState } from "./state.js";
import { constraintCount } from "./state.js";
import { encodeF32, encodeU8 } from "./wire.js";

export interface ModelInfo {
  joint_names: string[];
  feature_dim: number;
  fps: number;
  downrate: number;
  max_length: number;
  planners: string[];
}

export function buildControlBlock(state: SessionState,
                                  jointCount: number): ControlBlock | null {
  if (constraintCount(state) === 0) return null;
  const t = state.length;
  const targets = new Float32Array(t * jointCount * 3);
  const mask = new Uint8Array(t * jointCount);
  for (const [joint, pts] of state.constraints) {
    if (joint < 0 || joint >= jointCount) {
      throw new RangeError(`joint ${joint} outside skeleton (J=${jointCount})`);
    }
    for (const p of pts) {
      const base = (p.frame * jointCount + joint) * 3;
      targets[base] = p.x;
      targets[base + 1] = p.y;
      targets[base + 2] = p.z ?? 0;
      mask[p.frame * jointCount + joint] = 1;
    }
  }
  return {
    targets: encodeF32(targets, [t, jointCount, 3]),
    mask: encodeU8(mask, [t, jointCount]),
    eta: state.eta,
    inner_steps: state.innerSteps,
  };
}

/** Full request for a fresh plan-and-decode run. Requests without any
 * keypoints carry no control block. */
export function buildGenerateRequest(state: SessionState, model: ModelInfo,
                                     decoderGuidance = true): GenerateRequest {
  const control = buildControlBlock(state, model.joint_names.length);
  const request: GenerateRequest = {
    prompt: state.prompt,
    length: state.length,
    planner: state.planner,
    guidance_scale: state.guidanceScale,
    seed: state.seed,
    flags: { planner_local_cond: true, decoder_guidance: decoderGuidance },
    temperature: 1.0,
  };
  if (control) request.control = control;
  return request;
}

/** Fast path for constraint edits: re-decode pinned tokens under new control
 * without replanning. */
export function buildControlDecodeRequest(state: SessionState,
                                          model: ModelInfo): ControlDecodeRequest {
  if (!state.pinnedTokens) throw new Error("no pinned tokens to re-decode");
  const control = buildControlBlock(state, model.joint_names.length);
  const request: ControlDecodeRequest = {
    tokens: [...state.pinnedTokens],
    length: state.length,
    seed: state.seed,
  };
  if (control) request.control = control;
  return request;
}

/** Side-by-side comparison: one guided request, one with guidance disabled.
 * With eta at 0 the two motions are identical for a pinned seed. */
export function buildCompareRequests(state: SessionState, model: ModelInfo) {
  return {
    guided: buildGenerateRequest(state, model, true),
    unguided: buildGenerateRequest(state, model, false),
  };
}
