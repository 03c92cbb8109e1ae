/** DOM wiring for the control studio. All generation goes through the
 * service; the UI never synthesizes motion client-side. */

import { Client, GenerateResponse } from "./api.js";
import { buildCompareRequests, buildControlDecodeRequest, ModelInfo } from "./editor.js";
import { errorAt, fitView, jointTrace, overlayAverage, poseAt } from "./playback.js";
import * as S from "./state.js";

const client = new Client("");
let state = S.initialState();
let model: ModelInfo | null = null;
let unguided: GenerateResponse | null = null;
let playhead = 0;
let timer: number | null = null;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function setStatus(text: string, isError = false) {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function selectedJoint(): number {
  return parseInt(($("joint") as HTMLSelectElement).value, 10);
}

function syncInputs() {
  state = S.editPlanningInputs(state, {
    prompt: ($("prompt") as HTMLInputElement).value,
    planner: ($("planner") as HTMLSelectElement).value as "ddm" | "ar",
    seed: parseInt(($("seed") as HTMLInputElement).value, 10) || 0,
    length: parseInt(($("length") as HTMLInputElement).value, 10) || 64,
  });
  const w = ($("guidance") as HTMLInputElement).value.trim();
  state = S.editPlanningInputs(state, { guidanceScale: w ? parseFloat(w) : null });
  state = { ...state, eta: parseFloat(($("eta") as HTMLInputElement).value) };
  $("eta-value").textContent = state.eta.toFixed(2);
}

function drawEditor() {
  const canvas = $("editor") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const points: [number, number][] = [];
  for (const pts of state.constraints.values()) {
    for (const p of pts) points.push([p.x, p.y]);
  }
  if (state.lastResult) points.push(...jointTrace(state.lastResult, 0));
  const view = fitView(points.length ? points : [[-2, -2], [2, 2]],
                       canvas.width, canvas.height);
  (canvas as any)._view = view;
  if (state.lastResult) {
    drawTrace(ctx, jointTrace(state.lastResult, selectedJoint()), view, "#3a7bd5");
  }
  if (unguided) {
    drawTrace(ctx, jointTrace(unguided, selectedJoint()), view, "#9fb7d415");
  }
  ctx.fillStyle = "#d54";
  for (const [joint, pts] of state.constraints) {
    for (const p of pts) {
      const [cx, cy] = view.toCanvas(p.x, p.y);
      ctx.beginPath();
      if (joint === selectedJoint()) {
        ctx.moveTo(cx, cy - 5);
        ctx.lineTo(cx + 5, cy + 4);
        ctx.lineTo(cx - 5, cy + 4);
        ctx.closePath();
      } else {
        ctx.arc(cx, cy, 3, 0, Math.PI * 2);
      }
      ctx.fill();
    }
  }
}

function drawTrace(ctx: CanvasRenderingContext2D, trace: [number, number][],
                   view: ReturnType<typeof fitView>, color: string) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  trace.forEach(([x, y], i) => {
    const [cx, cy] = view.toCanvas(x, y);
    if (i === 0) ctx.moveTo(cx, cy);
    else ctx.lineTo(cx, cy);
  });
  ctx.stroke();
}

function drawPanels() {
  drawSkeleton($("panel-guided") as HTMLCanvasElement, state.lastResult, "guided");
  drawSkeleton($("panel-unguided") as HTMLCanvasElement, unguided, "unguided");
  const res = state.lastResult;
  if (res) {
    const overlay = overlayAverage(res.keyframe_errors);
    $("metrics").textContent =
      `avg err ${res.avg_err == null ? "n/a" : res.avg_err.toFixed(4) + " m"}` +
      (overlay != null ? ` | overlay mean ${overlay.toFixed(4)} m` : "") +
      ` | planner ${res.timings.planner_ms.toFixed(0)} ms` +
      ` | decode ${res.timings.decode_ms.toFixed(0)} ms` +
      ` | refine ${res.timings.refine_ms.toFixed(0)} ms (${res.refine_calls} steps)`;
  }
}

const BONES: [number, number][] = [[0, 1], [0, 2], [0, 3]];

function drawSkeleton(canvas: HTMLCanvasElement, res: GenerateResponse | null,
                      label: string) {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#888";
  ctx.fillText(label, 8, 14);
  if (!res) return;
  const t = Math.min(playhead, res.joint_positions.shape[0] - 1);
  const pose = poseAt(res, t);
  const pts: [number, number][] = pose.joints.map((j) => [j[0], j[2]]);
  const trace = jointTrace(res, 0);
  const view = fitView(trace, canvas.width, canvas.height, 30);
  // top-down path + current frame marker
  drawTrace(ctx, trace, view, "#3a7bd5");
  ctx.fillStyle = "#222";
  const side = pose.joints.map((j) => view.toCanvas(j[0], j[1]));
  for (const [a, b] of BONES) {
    ctx.strokeStyle = "#222";
    ctx.beginPath();
    ctx.moveTo(side[a][0], side[a][1]);
    ctx.lineTo(side[b][0], side[b][1]);
    ctx.stroke();
  }
  for (const [cx, cy] of side) {
    ctx.beginPath();
    ctx.arc(cx, cy, 4, 0, Math.PI * 2);
    ctx.fill();
  }
  // per-keyframe error badge at the playhead
  const err = errorAt(res.keyframe_errors, t, selectedJoint());
  if (err != null) {
    ctx.fillStyle = "#d54";
    ctx.fillText(`e=${err.toFixed(3)} m`, 8, canvas.height - 8);
  }
}

async function runGenerate() {
  if (!model) return;
  if (state.inFlight) {
    state = S.noteEditDuringFlight(state);
    return;
  }
  syncInputs();
  state = S.beginRequest(state);
  setStatus("generating…");
  try {
    const { guided, unguided: unguidedReq } = buildCompareRequests(state, model);
    const [resG, resU] = [await client.generate(guided), await client.generate(unguidedReq)];
    unguided = resU;
    state = S.applyResult(state, { request: guided, result: resG, via: "generate" });
    playhead = 0;
    setStatus("done");
  } catch (err) {
    state = { ...state, inFlight: false };
    setStatus(`${err}`, true);
  }
  drawEditor();
  drawPanels();
  if (state.queuedEdit) void runRedecode();
}

async function runRedecode() {
  if (!model) return;
  if (!state.pinnedTokens) return runGenerate();
  if (state.inFlight) {
    state = S.noteEditDuringFlight(state);
    return;
  }
  state = S.beginRequest(state);
  setStatus("re-decoding pinned tokens…");
  try {
    const request = buildControlDecodeRequest(state, model);
    const res = await client.controlDecode(request);
    state = S.applyResult(state, { request, result: res, via: "control-decode" });
    setStatus(`done (planner ${res.timings.planner_ms} ms)`);
  } catch (err) {
    state = { ...state, inFlight: false };
    setStatus(`${err}`, true);
  }
  drawEditor();
  drawPanels();
  if (state.queuedEdit) void runRedecode();
}

function togglePlay() {
  if (timer != null) {
    clearInterval(timer);
    timer = null;
    return;
  }
  const res = state.lastResult;
  if (!res) return;
  timer = setInterval(() => {
    playhead = (playhead + 1) % res.joint_positions.shape[0];
    ($("timeline") as HTMLInputElement).value = String(playhead);
    drawPanels();
  }, 1000 / res.fps) as unknown as number;
}

async function boot() {
  try {
    model = (await client.model()) as ModelInfo;
  } catch (err) {
    setStatus(`service unreachable: ${err}`, true);
    return;
  }
  const jointSel = $("joint") as HTMLSelectElement;
  jointSel.innerHTML = model.joint_names
    .map((n, i) => `<option value="${i}">${n}</option>`).join("");
  ($("length") as HTMLInputElement).value = String(Math.min(64, model.max_length));
  setStatus(`model ready: ${model.planners.join("/")} downrate ${model.downrate}`);

  $("generate").addEventListener("click", () => void runGenerate());
  $("redecode").addEventListener("click", () => void runRedecode());
  $("play").addEventListener("click", togglePlay);
  $("clear").addEventListener("click", () => {
    state = S.clearConstraints(state);
    drawEditor();
  });
  $("densefill").addEventListener("click", () => {
    const joint = selectedJoint();
    const pts = state.constraints.get(joint) ?? [];
    if (pts.length >= 2) {
      state = S.denseFill(state, joint, pts[0].frame, pts[pts.length - 1].frame);
      drawEditor();
      if (state.pinnedTokens) void runRedecode();
    }
  });
  $("eta").addEventListener("input", () => syncInputs());
  ($("timeline") as HTMLInputElement).addEventListener("input", (e) => {
    playhead = parseInt((e.target as HTMLInputElement).value, 10) || 0;
    drawPanels();
  });
  const editor = $("editor") as HTMLCanvasElement;
  editor.addEventListener("click", (e) => {
    const view = (editor as any)._view;
    if (!view || !model) return;
    const rect = editor.getBoundingClientRect();
    const [x, y] = view.toWorld(e.clientX - rect.left, e.clientY - rect.top);
    const frame = parseInt(($("timeline") as HTMLInputElement).value, 10) || 0;
    if (frame >= state.length) {
      setStatus(`frame ${frame} out of range for length ${state.length}`, true);
      return;
    }
    state = S.addKeypoint(state, selectedJoint(), { frame, x, y, z: 0.9 });
    drawEditor();
    if (state.pinnedTokens) void runRedecode();
  });
  ($("timeline") as HTMLInputElement).max = String(state.length - 1);
  drawEditor();
}

void boot();
