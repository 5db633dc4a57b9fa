// Pure session-view reducer: the rendered state is a function of the
// received message sequence and nothing else, so a recorded transcript
// replays to an identical state sequence.

import type {
  GazeTickPayload,
  PlanDoc,
  SessionResultDoc,
  StatusPayload,
  StimShowPayload,
  WireDoc,
} from "./types.js";

export interface StimulusView {
  phase: "idle" | "familiarization" | "test" | "blank" | "finished";
  imageId: string | null;
  prompt: string;
  pairId: string | null;
  leftImageId: string | null;
  rightImageId: string | null;
}

export interface UiSessionView {
  stimulus: StimulusView;
  gazeX: number | null;
  gazeValid: boolean;
  invalidReason: string | null;
  bpm: number | null;
  observerState: "ok" | "alarm_standby";
  alarmReason: string | null;
  planTotalMs: number | null;
  stimulusStartedMs: number | null;
  lastTickMs: number | null;
  calibration: { finalMse?: number; nSamples?: number } | null;
  result: SessionResultDoc | null;
  bpmTrace: Array<[number, number]>;
  tickCount: number;
}

export function initialView(): UiSessionView {
  return {
    stimulus: {
      phase: "idle",
      imageId: null,
      prompt: "",
      pairId: null,
      leftImageId: null,
      rightImageId: null,
    },
    gazeX: null,
    gazeValid: false,
    invalidReason: null,
    bpm: null,
    observerState: "ok",
    alarmReason: null,
    planTotalMs: null,
    stimulusStartedMs: null,
    lastTickMs: null,
    calibration: null,
    result: null,
    bpmTrace: [],
    tickCount: 0,
  };
}

export function planTotalMs(plan: PlanDoc): number {
  const familiarization = plan.familiarization.length * plan.familiarization_ms;
  const test = plan.test_pairs.reduce((sum, p) => sum + p.duration_ms + p.blank_after_ms, 0);
  return familiarization + test;
}

const BPM_TRACE_LIMIT = 4096;

export function reduce(view: UiSessionView, msg: WireDoc): UiSessionView {
  switch (msg.type) {
    case "PLAN_PUSH": {
      const plan = msg.payload["plan"] as PlanDoc | undefined;
      if (!plan) return view;
      return { ...view, planTotalMs: planTotalMs(plan) };
    }
    case "CALIB_DONE": {
      const payload = msg.payload as { final_mse?: number; n_samples?: number };
      return {
        ...view,
        calibration: { finalMse: payload.final_mse, nSamples: payload.n_samples },
      };
    }
    case "STIM_SHOW": {
      const p = msg.payload as unknown as StimShowPayload;
      return {
        ...view,
        stimulus: {
          phase: p.phase,
          imageId: p.image_id ?? null,
          prompt: p.prompt ?? "",
          pairId: p.pair_id ?? null,
          leftImageId: p.left_image_id ?? null,
          rightImageId: p.right_image_id ?? null,
        },
        stimulusStartedMs: p.t_ms ?? view.lastTickMs,
      };
    }
    case "GAZE_TICK": {
      const p = msg.payload as unknown as GazeTickPayload;
      const trace =
        p.bpm != null
          ? [...view.bpmTrace.slice(-(BPM_TRACE_LIMIT - 1)), [p.t_ms, p.bpm] as [number, number]]
          : view.bpmTrace;
      return {
        ...view,
        gazeX: p.valid ? p.gaze_x : null,
        gazeValid: p.valid,
        invalidReason: p.invalid_reason,
        bpm: p.bpm ?? view.bpm,
        lastTickMs: p.t_ms,
        bpmTrace: trace,
        tickCount: view.tickCount + 1,
      };
    }
    case "STATUS": {
      const p = msg.payload as unknown as StatusPayload;
      return {
        ...view,
        observerState: p.state,
        alarmReason: p.state === "alarm_standby" ? p.reason : null,
      };
    }
    case "RESULT": {
      const result = msg.payload["result"] as SessionResultDoc | undefined;
      return {
        ...view,
        result: result ?? null,
        stimulus: { ...view.stimulus, phase: "finished" },
      };
    }
    default:
      return view;
  }
}

export function elapsedMs(view: UiSessionView): number | null {
  return view.lastTickMs;
}

export function remainingMs(view: UiSessionView): number | null {
  if (view.planTotalMs == null || view.lastTickMs == null) return null;
  return Math.max(0, view.planTotalMs - view.lastTickMs);
}

export function replay(messages: WireDoc[]): UiSessionView[] {
  const states: UiSessionView[] = [];
  let view = initialView();
  for (const msg of messages) {
    view = reduce(view, msg);
    states.push(view);
  }
  return states;
}
