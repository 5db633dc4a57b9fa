// Browser entry point: socket wiring, canvas overlay, operator buttons,
// results browser. All session numbers shown come from the received
// documents; this file only draws them.

import { abortSession, startCalibration, startSession, type GatewaySocket } from "./commands.js";
import { MARKER_COLOR, MARKER_RADIUS_PX, markerPlacement, type StimulusRect } from "./marker.js";
import { RenderLoop, browserScheduler } from "./render-loop.js";
import { remainingMs, type UiSessionView } from "./state.js";
import { aggregateSummary, pairRows, sessionBadge } from "./results.js";
import type { PlanDoc, SessionEnvelopeDoc, WireDoc } from "./types.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function stimulusRect(canvas: HTMLCanvasElement): StimulusRect {
  return { x: 0, y: 0, width: canvas.width, height: canvas.height };
}

function drawScene(view: UiSessionView, canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#202830";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#e8e8e8";
  ctx.font = "16px sans-serif";
  const s = view.stimulus;
  if (s.phase === "familiarization") {
    ctx.fillText(`${s.imageId ?? ""}  ${s.prompt}`, canvas.width / 2 - 80, canvas.height / 2);
  } else if (s.phase === "test") {
    ctx.fillText(s.leftImageId ?? "", canvas.width * 0.25 - 30, canvas.height / 2);
    ctx.fillText(s.rightImageId ?? "", canvas.width * 0.75 - 30, canvas.height / 2);
    ctx.strokeStyle = "#4a5562";
    ctx.beginPath();
    ctx.moveTo(canvas.width / 2, 0);
    ctx.lineTo(canvas.width / 2, canvas.height);
    ctx.stroke();
  } else if (s.phase === "finished") {
    ctx.fillText("session finished", canvas.width / 2 - 60, canvas.height / 2);
  }
  const marker = markerPlacement(view, stimulusRect(canvas));
  if (marker.visible) {
    ctx.beginPath();
    ctx.arc(marker.x, marker.y, MARKER_RADIUS_PX, 0, 2 * Math.PI);
    ctx.strokeStyle = MARKER_COLOR;
    ctx.lineWidth = 3;
    ctx.stroke();
  }
}

function drawPanels(view: UiSessionView): void {
  byId("bpm").textContent = view.bpm == null ? "--" : view.bpm.toFixed(0);
  const banner = byId("alarm");
  if (view.observerState === "alarm_standby") {
    banner.textContent = `standby: ${view.alarmReason ?? "observer lost"}`;
    banner.style.display = "block";
  } else {
    banner.style.display = "none";
  }
  const remaining = remainingMs(view);
  byId("remaining").textContent =
    remaining == null ? "--" : `${Math.ceil(remaining / 1000)} s left`;
  if (view.result) {
    const summary = aggregateSummary(view.result);
    byId("aggregate").textContent = summary.label;
    const rows = pairRows(view.result)
      .map((r) => `<tr><td>${r.pairId}</td><td>${r.kind}</td><td>${r.fractionLabel}</td></tr>`)
      .join("");
    byId("pairs").innerHTML = rows;
  }
}

async function loadSessions(patient: string): Promise<void> {
  const response = await fetch(`/api/sessions?patient=${encodeURIComponent(patient)}`);
  const sessions = (await response.json()) as SessionEnvelopeDoc[];
  const list = byId("sessions");
  list.innerHTML = sessions
    .map((s) => `<li>${s.session_id} <em>${sessionBadge(s)}</em></li>`)
    .join("");
}

export function main(): void {
  const canvas = byId<HTMLCanvasElement>("stage");
  const loop = new RenderLoop(browserScheduler(), (view) => {
    drawScene(view, canvas);
    drawPanels(view);
  });
  const ws = new WebSocket(`ws://${location.host}/ws`);
  const socket: GatewaySocket = {
    send: (doc) => ws.send(JSON.stringify({ ...doc, seq: 0, t_ms: Date.now() })),
  };
  let plan: PlanDoc | null = null;
  ws.onmessage = (event) => {
    const doc = JSON.parse(event.data) as WireDoc;
    if (doc.type === "PLAN_PUSH" && doc.payload["plan"]) {
      plan = doc.payload["plan"] as PlanDoc;
    }
    loop.dispatch(doc);
  };
  byId("btn-abort").onclick = () => abortSession(socket);
  byId("btn-calibrate").onclick = () => startCalibration(socket);
  byId("btn-start").onclick = () => {
    if (plan) startSession(socket, plan);
  };
  byId("btn-sessions").onclick = () => void loadSessions("anonymous");
}

if (typeof document !== "undefined" && document.getElementById("stage")) {
  main();
}
