// Operator commands: each maps to exactly one control message through the
// gateway socket. Plan pushes are validated client-side first; invalid plans
// send nothing.

import { validatePlan } from "./plan.js";
import type { PatientDoc, PlanDoc, WireDoc } from "./types.js";

export interface GatewaySocket {
  send(doc: Pick<WireDoc, "type" | "payload">): void;
}

export function abortSession(socket: GatewaySocket): void {
  socket.send({ type: "ABORT", payload: {} });
}

export function startCalibration(socket: GatewaySocket): void {
  socket.send({ type: "CALIB_START", payload: {} });
}

export function pushPlan(socket: GatewaySocket, plan: PlanDoc): string[] {
  const errors = validatePlan(plan);
  if (errors.length > 0) return errors;
  socket.send({ type: "PLAN_PUSH", payload: { plan, start: false } });
  return [];
}

export function startSession(socket: GatewaySocket, plan: PlanDoc): string[] {
  const errors = validatePlan(plan);
  if (errors.length > 0) return errors;
  socket.send({ type: "PLAN_PUSH", payload: { plan, start: true } });
  return [];
}

export function createPatient(socket: GatewaySocket, patient: PatientDoc): void {
  socket.send({ type: "PATIENT_PUT", payload: { patient } });
}
