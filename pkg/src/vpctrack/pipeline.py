"""Shared per-frame processing for live streaming and offline batch replay.

Both node modes feed frames through process_stream, so a recorded archive
replayed offline produces bit-identical per-frame outputs to the live run
that recorded it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .archive import build_archive, read_archive
from .frames import Frame, StreamManifest, decode_png, encode_png
from .gaze import (
    AccuracyReport,
    CalibPattern,
    GazeNet,
    GazeSample,
    analyze_frame,
    assess_accuracy,
    collect_calibration,
    generate_click_points,
    predict,
    sweep_pattern,
    train,
)
from .geometry import Rect
from .haar import CascadeModel
from .ppg import DegenerateBox, LivePulseTracker, RoiOutOfBounds, channel_mean, forehead_roi


@dataclass(frozen=True)
class ProcessedFrame:
    sample: GazeSample
    face_box: Optional[Rect]
    red_mean: Optional[float]
    green_mean: Optional[float]
    blue_mean: Optional[float]
    bpm: Optional[float]


def process_stream(
    frames: Iterable[Frame],
    face_model: CascadeModel,
    eye_model: CascadeModel,
    net: Optional[GazeNet],
    fps: float = 30.0,
) -> Iterator[ProcessedFrame]:
    """Per frame: detection, gaze estimate, forehead channel means, live BPM."""
    pulse = LivePulseTracker(fps=fps)
    for frame in frames:
        analysis = analyze_frame(frame, face_model, eye_model)
        if analysis.patch is None or net is None:
            reason = analysis.invalid_reason or "eyes_not_found"
            sample = GazeSample(frame.index, frame.timestamp_ms, None, False, reason)
        else:
            sample = GazeSample(
                frame.index, frame.timestamp_ms, predict(net, analysis.patch), True, None
            )
        red = green = blue = None
        if analysis.face_box is not None:
            try:
                roi = forehead_roi(analysis.face_box, frame.width, frame.height)
                red = channel_mean(frame, roi, "R")
                green = channel_mean(frame, roi, "G")
                blue = channel_mean(frame, roi, "B")
            except (RoiOutOfBounds, DegenerateBox):
                pass
        pulse.feed(frame.timestamp_ms, green)
        yield ProcessedFrame(
            sample=sample,
            face_box=analysis.face_box,
            red_mean=red,
            green_mean=green,
            blue_mean=blue,
            bpm=pulse.current.bpm if pulse.current else None,
        )


def trace_csv(records: Sequence[ProcessedFrame]) -> str:
    """Per-frame prediction table: frame_index, t_ms, gaze_x, valid, reason, bpm."""
    lines = ["frame_index,t_ms,gaze_x,valid,reason,bpm"]
    for r in records:
        s = r.sample
        gaze = "" if s.gaze_x is None else repr(s.gaze_x)
        bpm = "" if r.bpm is None else repr(r.bpm)
        lines.append(
            f"{s.frame_index},{s.t_ms},{gaze},{int(s.valid)},{s.invalid_reason or ''},{bpm}"
        )
    return "\n".join(lines) + "\n"


def run_calibration(
    frames: Iterable[Frame],
    pattern: CalibPattern,
    face_model: CascadeModel,
    eye_model: CascadeModel,
    *,
    epochs: int = 400,
    learning_rate: float = 0.02,
    batch_size: int = 32,
    seed: int = 0,
) -> GazeNet:
    """Collect pursuit samples over the pattern and train to the overfit regime."""
    samples = collect_calibration(frames, pattern, face_model, eye_model)
    return train(
        samples, epochs=epochs, learning_rate=learning_rate, batch_size=batch_size, seed=seed
    )


def run_click_assessment(
    net: GazeNet,
    face_model: CascadeModel,
    eye_model: CascadeModel,
    scene_for_gaze,
    n_points: int = 100,
    frames_per_point: int = 3,
    fps: float = 30.0,
    seed: int = 0,
) -> AccuracyReport:
    """Click-point protocol against rendered scenes.

    scene_for_gaze(true_x) must yield a SyntheticSceneSpec whose observer
    looks at true_x; each point's prediction is the mean over the valid
    frames of a short burst.
    """
    from .frames import render_synthetic

    points = generate_click_points(n_points, seed=seed)
    predictions = []
    for i, (true_x, _true_y) in enumerate(points):
        spec = scene_for_gaze(true_x)
        burst = render_synthetic(
            spec, fps, int(round(frames_per_point * 1000.0 / fps)), seed=seed * 100003 + i
        )
        values = []
        for frame in burst:
            analysis = analyze_frame(frame, face_model, eye_model)
            if analysis.patch is not None:
                values.append(predict(net, analysis.patch))
        predictions.append(float(np.mean(values)) if values else 0.5)
    return assess_accuracy(points, predictions)


MANIFEST_ENTRY = "manifest.json"


def record_archive(
    frames: Iterable[Frame],
    fps: float,
    screen_width_px: int = 1920,
    screen_height_px: int = 1080,
) -> bytes:
    """Pack a frame stream as PNG blobs plus a manifest into one archive blob."""
    entries = []
    manifest_frames = []
    for frame in frames:
        name = f"frame_{frame.index:06d}.png"
        entries.append((name, encode_png(frame.pixels)))
        manifest_frames.append({"path": name, "t_ms": frame.timestamp_ms})
    manifest = {
        "fps": fps,
        "screen_width_px": screen_width_px,
        "screen_height_px": screen_height_px,
        "frames": manifest_frames,
    }
    blobs = [(MANIFEST_ENTRY, json.dumps(manifest, sort_keys=True).encode())] + entries
    return build_archive(blobs)


def replay_archive(archive: bytes) -> tuple[StreamManifest, Iterator[Frame]]:
    """Decode an archive back into the exact recorded frame stream."""
    blobs = read_archive(archive)
    manifest = StreamManifest.from_json(json.loads(blobs[MANIFEST_ENTRY].decode()))

    def generate():
        for i, (name, t_ms) in enumerate(manifest.frame_entries):
            pixels = decode_png(blobs[name])
            yield Frame(
                index=i,
                timestamp_ms=t_ms,
                width=pixels.shape[1],
                height=pixels.shape[0],
                pixels=pixels,
            )

    return manifest, generate()


def calibration_scene(spec_template, pattern: CalibPattern):
    """Scene whose observer pursues the pattern: gaze track mirrors circle x."""
    from .frames import SyntheticSceneSpec

    t0, t1 = pattern.span()
    track = [(t, pattern.x_at(t)) for t in range(t0, t1 + 1, 100)]
    return SyntheticSceneSpec(
        gaze_track=track,
        pulse_hz=spec_template.pulse_hz,
        face_box_norm=spec_template.face_box_norm,
        noise_sigma=spec_template.noise_sigma,
        width=spec_template.width,
        height=spec_template.height,
    )
