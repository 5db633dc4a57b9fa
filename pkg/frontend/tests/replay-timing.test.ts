import { describe, expect, it } from "vitest";

import { RenderLoop, type FrameScheduler } from "../src/render-loop.js";
import { markerPlacement } from "../src/marker.js";
import type { UiSessionView } from "../src/state.js";
import type { WireDoc } from "../src/types.js";

// Deterministic 60 Hz frame clock: callbacks fire at the next frame boundary.
class ManualScheduler implements FrameScheduler {
  time = 0;
  private queue: Array<(nowMs: number) => void> = [];

  request(callback: (nowMs: number) => void): void {
    this.queue.push(callback);
  }

  now(): number {
    return this.time;
  }

  pumpFrame(): void {
    this.time += 1000 / 60;
    const batch = this.queue;
    this.queue = [];
    for (const callback of batch) callback(this.time);
  }
}

function tick(seq: number, tMs: number, gazeX: number): WireDoc {
  return {
    type: "GAZE_TICK",
    seq,
    t_ms: tMs,
    payload: {
      frame_index: seq,
      t_ms: tMs,
      gaze_x: gazeX,
      valid: true,
      invalid_reason: null,
      bpm: 62,
      stimulus_pair_id: "pair00",
    },
  };
}

describe("replay timing", () => {
  it("switches the displayed pair within one render frame of STIM_SHOW", () => {
    const scheduler = new ManualScheduler();
    const draws: Array<{ pairId: string | null; at: number }> = [];
    const loop = new RenderLoop(scheduler, (view, nowMs) =>
      draws.push({ pairId: view.stimulus.pairId, at: nowMs }),
    );
    const sentAt = scheduler.now();
    loop.dispatch({
      type: "STIM_SHOW",
      seq: 1,
      t_ms: 0,
      payload: { phase: "test", pair_id: "pair05", left_image_id: "a", right_image_id: "b" },
    });
    scheduler.pumpFrame();
    const shown = draws.find((d) => d.pairId === "pair05");
    expect(shown).toBeDefined();
    expect(shown!.at - sentAt).toBeLessThanOrEqual(100);
  });

  it("updates the marker at 25 Hz or better under a 30 ticks/s replay", () => {
    const scheduler = new ManualScheduler();
    const rect = { x: 0, y: 0, width: 960, height: 540 };
    let lastX: number | null = null;
    let markerUpdates = 0;
    const loop = new RenderLoop(scheduler, (view: UiSessionView) => {
      const marker = markerPlacement(view, rect);
      if (marker.visible && marker.x !== lastX) {
        markerUpdates += 1;
        lastX = marker.x;
      }
    });

    // two seconds of ticks at 30/s against a 60 Hz frame clock
    const durationMs = 2000;
    let seq = 1;
    let nextTickAt = 0;
    while (scheduler.time < durationMs) {
      while (nextTickAt <= scheduler.time) {
        loop.dispatch(tick(seq, Math.round(nextTickAt), (seq % 100) / 100));
        seq += 1;
        nextTickAt += 1000 / 30;
      }
      scheduler.pumpFrame();
    }
    const updateHz = markerUpdates / (durationMs / 1000);
    expect(updateHz).toBeGreaterThanOrEqual(25);
  });

  it("coalesces a burst of ticks into one draw of the latest state", () => {
    const scheduler = new ManualScheduler();
    const draws: number[] = [];
    const loop = new RenderLoop(scheduler, (view) => draws.push(view.tickCount));
    for (let i = 1; i <= 10; i++) {
      loop.dispatch(tick(i, i * 33, 0.5));
    }
    scheduler.pumpFrame();
    expect(draws).toEqual([10]);
    expect(loop.current().tickCount).toBe(10);
  });
});
