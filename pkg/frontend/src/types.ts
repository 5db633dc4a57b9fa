// Wire message shapes as served by the gateway: the node protocol's JSON
// documents without the length framing.

export type MessageType =
  | "HELLO"
  | "PLAN_PUSH"
  | "CALIB_START"
  | "CALIB_DONE"
  | "STIM_SHOW"
  | "GAZE_TICK"
  | "STATUS"
  | "BATCH_BEGIN"
  | "BATCH_CHUNK"
  | "BATCH_END"
  | "RESULT"
  | "ABORT"
  | "ACK"
  | "ERROR"
  | "PATIENT_PUT";

export interface WireDoc {
  type: MessageType;
  seq: number;
  t_ms: number;
  payload: Record<string, unknown>;
}

export interface ImageRefDoc {
  id: string;
  path: string;
  role: "familiar" | "novel";
  prompt?: string;
}

export interface PairSpecDoc {
  pair_id: string;
  kind: "both_new" | "known_right" | "known_left";
  left_image: ImageRefDoc;
  right_image: ImageRefDoc;
  duration_ms: number;
  blank_after_ms: number;
}

export interface PlanDoc {
  familiarization: ImageRefDoc[];
  familiarization_ms: number;
  test_pairs: PairSpecDoc[];
  shuffle_seed: number;
}

export interface GazeTickPayload {
  frame_index: number;
  t_ms: number;
  gaze_x: number | null;
  valid: boolean;
  invalid_reason: string | null;
  bpm: number | null;
  stimulus_pair_id: string | null;
}

export interface StimShowPayload {
  phase: "familiarization" | "test" | "blank";
  image_id?: string;
  prompt?: string;
  pair_id?: string;
  left_image_id?: string;
  right_image_id?: string;
  t_ms?: number;
}

export interface StatusPayload {
  state: "ok" | "alarm_standby";
  reason: string | null;
  since_ms: number;
}

export interface PairRecordDoc {
  pair_id: string;
  kind: string;
  left_ms: number;
  right_ms: number;
  novel_ms: number | null;
  known_ms: number | null;
  novelty_fraction: number | null;
}

export interface SessionResultDoc {
  patient_id: string;
  plan_hash: string;
  per_pair: PairRecordDoc[];
  novelty_preference: number | null;
  healthy_reference: number;
  hrv: { rmssd_ms: number; sdnn_ms: number } | null;
  alarms: Array<[number, string]>;
  status: "complete" | "aborted";
}

export interface SessionEnvelopeDoc {
  session_id: string;
  patient_id: string;
  plan: PlanDoc;
  result: SessionResultDoc | null;
  status: "complete" | "aborted";
  started_at: number;
}

export interface PatientDoc {
  patient_id: string;
  label?: string;
  birth_year?: number | null;
  notes?: string;
}
