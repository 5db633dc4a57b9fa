// Gaze marker geometry: the estimate is horizontal only, so the marker sits
// on the stimulus row's vertical midline at x proportional to gaze.

import type { UiSessionView } from "./state.js";

export interface StimulusRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

export interface MarkerPlacement {
  visible: boolean;
  x: number;
  y: number;
}

export function markerPlacement(view: UiSessionView, rect: StimulusRect): MarkerPlacement {
  if (!view.gazeValid || view.gazeX == null) {
    return { visible: false, x: 0, y: 0 };
  }
  return {
    visible: true,
    x: rect.x + view.gazeX * rect.width,
    y: rect.y + rect.height / 2,
  };
}

export const MARKER_RADIUS_PX = 12;
export const MARKER_COLOR = "#d32f2f";
