/** Typed client for the /v1 generation service. */

import type { WireArray } from "./wire.js";

export interface ControlBlock {
  targets: WireArray;
  mask: WireArray;
  eta?: number;
  inner_steps?: number;
}

export interface GenerateRequest {
  prompt?: string;
  length: number;
  planner?: "ddm" | "ar";
  guidance_scale?: number | null;
  seed?: number;
  control?: ControlBlock;
  flags?: { planner_local_cond?: boolean; decoder_guidance?: boolean };
  temperature?: number;
}

export interface ControlDecodeRequest {
  tokens: number[];
  length: number;
  control?: ControlBlock;
  seed?: number;
}

export interface KeyframeError {
  frame: number;
  joint: number;
  error: number;
}

export interface GenerateResponse {
  frames: WireArray;
  joint_positions: WireArray;
  fps: number;
  tokens: number[];
  keyframe_errors: KeyframeError[];
  avg_err: number | null;
  timings: { planner_ms: number; decode_ms: number; refine_ms: number };
  refine_calls: number;
  planner_forward_passes?: number;
}

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(`service ${status}: ${detail}`);
  }
}

async function post<T>(base: string, path: string, body: unknown): Promise<T> {
  const res = await fetch(`${base}${path}`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!res.ok) {
    let detail = res.statusText;
    try {
      detail = JSON.stringify((await res.json()).detail);
    } catch {
      // keep statusText
    }
    throw new ServiceError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

export class Client {
  constructor(private base: string = "") {}

  health() {
    return fetch(`${this.base}/v1/health`).then((r) => r.json());
  }

  model() {
    return fetch(`${this.base}/v1/model`).then((r) => {
      if (!r.ok) throw new ServiceError(r.status, r.statusText);
      return r.json();
    });
  }

  generate(request: GenerateRequest): Promise<GenerateResponse> {
    return post(this.base, "/v1/generate", request);
  }

  controlDecode(request: ControlDecodeRequest): Promise<GenerateResponse> {
    return post(this.base, "/v1/control-decode", request);
  }

  tokenize(frames: WireArray): Promise<{ tokens: number[]; compression_ratio: number }> {
    return post(this.base, "/v1/tokenize", { frames });
  }
}
