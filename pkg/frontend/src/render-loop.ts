// Frame-coalesced rendering: every message updates the view state
// immediately; drawing is scheduled once per animation frame, so a burst of
// gaze ticks collapses to the latest state (latest-wins applies only to
// drawing, never to state).

import { initialView, reduce, type UiSessionView } from "./state.js";
import type { WireDoc } from "./types.js";

export interface FrameScheduler {
  request(callback: (nowMs: number) => void): void;
  now(): number;
}

export class RenderLoop {
  private view: UiSessionView = initialView();
  private pending = false;

  constructor(
    private scheduler: FrameScheduler,
    private draw: (view: UiSessionView, nowMs: number) => void,
  ) {}

  current(): UiSessionView {
    return this.view;
  }

  dispatch(msg: WireDoc): void {
    this.view = reduce(this.view, msg);
    if (!this.pending) {
      this.pending = true;
      this.scheduler.request((nowMs) => {
        this.pending = false;
        this.draw(this.view, nowMs);
      });
    }
  }
}

export function browserScheduler(): FrameScheduler {
  return {
    request: (callback) => requestAnimationFrame((t) => callback(t)),
    now: () => performance.now(),
  };
}
