"""Gaze calibration and estimation.

The observer pursues a moving circle; every frame with exactly one face and a
detected designated eye contributes a (32x32 eye patch, circle x) pair. A
small dense network (1024-500-100-1, rectified hidden units, sigmoid output)
is trained to overfit those pairs by minibatch SGD on squared error, then
maps patches to the horizontal gaze position in [0, 1] during the session.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .frames import Frame
from .geometry import Rect
from .haar import CascadeModel, IntegralImage, detect, locate_eyes

PATCH_SIZE = 32
LAYER_SIZES = (PATCH_SIZE * PATCH_SIZE, 500, 100, 1)

# Face-scan operating point: desk-distance faces are large in frame, so the
# scan starts at a quarter of the frame height; the finer scale step keeps
# neighbor groups dense enough for stable averaging.
FACE_SCAN = dict(scale_factor=1.05, min_neighbors=8, kind="face")


class BoxOutOfBounds(Exception):
    pass


class InsufficientSamples(Exception):
    def __init__(self, collected: int, required: int, skipped: dict):
        super().__init__(
            f"only {collected} calibration samples collected (need {required}); skipped: {skipped}"
        )
        self.collected = collected
        self.required = required
        self.skipped = skipped


class NonFiniteLoss(Exception):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class ShapeMismatch(Exception):
    pass


class LengthMismatch(Exception):
    pass


class OddCount(Exception):
    pass


@dataclass(frozen=True)
class EyePatch:
    values: np.ndarray  # (32, 32) float64 in [0, 1]
    source_frame_index: int
    source_box: Rect

    def __post_init__(self):
        if self.values.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ShapeMismatch(f"patch shape {self.values.shape}")
        self.values.setflags(write=False)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True)
class CalibSample:
    patch: EyePatch
    target_x: float

    def __post_init__(self):
        if not 0.0 <= self.target_x <= 1.0:
            raise ValueError(f"target_x {self.target_x} outside [0, 1]")


@dataclass(frozen=True)
class GazeSample:
    frame_index: int
    t_ms: int
    gaze_x: Optional[float]
    valid: bool
    invalid_reason: Optional[str]  # None | no_face | multiple_faces | eyes_not_found

    def __post_init__(self):
        if self.valid != (self.gaze_x is not None):
            raise ValueError("gaze_x must be present exactly when valid")
        if self.valid != (self.invalid_reason is None):
            raise ValueError("invalid_reason must be present exactly when invalid")


@dataclass
class CalibPattern:
    """Timed positions of the pursuit circle, in normalized screen coordinates."""

    points: list[tuple[int, float, float]]  # (t_ms, x, y)

    def __post_init__(self):
        ts = [t for t, _, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("pattern timestamps must be strictly increasing")
        for _, x, y in self.points:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError("pattern coordinates must lie in [0, 1]")

    def x_at(self, t_ms: float) -> float:
        ts = np.array([t for t, _, _ in self.points], dtype=np.float64)
        xs = np.array([x for _, x, _ in self.points], dtype=np.float64)
        return float(np.interp(t_ms, ts, xs))

    def span(self) -> tuple[int, int]:
        return self.points[0][0], self.points[-1][0]


def sweep_pattern(
    duration_ms: int = 30000, rows: Sequence[float] = (0.25, 0.5, 0.75), t0_ms: int = 0
) -> CalibPattern:
    """Left-to-right sweeps at several heights, constant speed, equal time per row."""
    per_row = duration_ms // len(rows)
    points = []
    for i, y in enumerate(rows):
        start = t0_ms + i * per_row
        points.append((start, 0.0, y))
        points.append((start + per_row - 1, 1.0, y))
    return CalibPattern(points)


def extract_patch(frame: Frame, eye_box: Rect) -> EyePatch:
    """Crop, convert to luminance, resample to 32x32, min-max normalize.

    A constant crop (no contrast) maps to an all-0.5 patch.
    """
    if not eye_box.within(frame.width, frame.height) or eye_box.area == 0:
        raise BoxOutOfBounds(f"eye box {eye_box} outside {frame.width}x{frame.height}")
    crop = frame.pixels[eye_box.y : eye_box.y2, eye_box.x : eye_box.x2]
    p = crop.astype(np.float64)
    lum = 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]
    resized = _bilinear_resize(lum, PATCH_SIZE, PATCH_SIZE)
    lo = resized.min()
    hi = resized.max()
    if hi - lo < 1e-12:
        values = np.full((PATCH_SIZE, PATCH_SIZE), 0.5)
    else:
        values = (resized - lo) / (hi - lo)
    return EyePatch(values=values, source_frame_index=frame.index, source_box=eye_box)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = img.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


@dataclass
class FrameAnalysis:
    face_box: Optional[Rect]
    designated_eye: Optional[Rect]
    other_eye: Optional[Rect]
    invalid_reason: Optional[str]
    patch: Optional[EyePatch]


def analyze_frame(
    frame: Frame, face_model: CascadeModel, eye_model: CascadeModel
) -> FrameAnalysis:
    """Shared per-frame front end: face scan, eye location, patch extraction."""
    ii = IntegralImage.from_frame(frame)
    faces = detect(face_model, ii, min_size=frame.height // 4, **FACE_SCAN)
    if not faces:
        return FrameAnalysis(None, None, None, "no_face", None)
    if len(faces) > 1:
        return FrameAnalysis(None, None, None, "multiple_faces", None)
    face_box = faces[0].box
    designated, other = locate_eyes(eye_model, ii, face_box)
    if designated is None:
        return FrameAnalysis(face_box, None, None, "eyes_not_found", None)
    patch_box = designated.box.clip(frame.width, frame.height)
    patch = extract_patch(frame, patch_box)
    return FrameAnalysis(
        face_box, designated.box, other.box if other else None, None, patch
    )


def collect_calibration(
    stream: Iterable[Frame],
    pattern: CalibPattern,
    face_model: CascadeModel,
    eye_model: CascadeModel,
    min_samples: int = 200,
) -> list[CalibSample]:
    """One sample per frame that shows exactly one face and a designated eye."""
    samples = []
    skipped = {"no_face": 0, "multiple_faces": 0, "eyes_not_found": 0}
    for frame in stream:
        analysis = analyze_frame(frame, face_model, eye_model)
        if analysis.patch is None:
            skipped[analysis.invalid_reason] += 1
            continue
        samples.append(CalibSample(patch=analysis.patch, target_x=pattern.x_at(frame.timestamp_ms)))
    if len(samples) < min_samples:
        raise InsufficientSamples(len(samples), min_samples, skipped)
    return samples


class GazeNet:
    """Dense 1024-500-100-1 regressor; rectified hidden units, sigmoid output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], meta: Optional[dict] = None):
        self.weights = weights
        self.biases = biases
        self.meta = meta or {}
        sizes = self.layer_sizes
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape}, bias {b.shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @staticmethod
    def initialize(sizes: Sequence[int] = LAYER_SIZES, seed: int = 0) -> "GazeNet":
        rng = np.random.default_rng(seed)
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return GazeNet(weights, biases, meta={"seed": seed})

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        z = a @ self.weights[-1] + self.biases[-1]
        return 1.0 / (1.0 + np.exp(-z))

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "meta": self.meta,
        }

    @staticmethod
    def from_json(doc: dict) -> "GazeNet":
        sizes = doc["layer_sizes"]
        weights = [
            np.asarray(doc["weights"][i], dtype=np.float64).reshape(sizes[i], sizes[i + 1])
            for i in range(len(sizes) - 1)
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        return GazeNet(weights, biases, meta=doc.get("meta", {}))

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(json.dumps(self.to_json()))

    @staticmethod
    def load(path) -> "GazeNet":
        from pathlib import Path

        return GazeNet.from_json(json.loads(Path(path).read_text()))


def loss_and_gradients(
    net: GazeNet, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error over the batch and its gradients by backpropagation."""
    activations = [x]
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        activations.append(a)
    z_out = a @ net.weights[-1] + net.biases[-1]
    pred = 1.0 / (1.0 + np.exp(-z_out))
    diff = pred - y.reshape(-1, 1)
    n = x.shape[0]
    loss = float(np.mean(diff * diff))

    grad_w = [np.empty_like(w) for w in net.weights]
    grad_b = [np.empty_like(b) for b in net.biases]
    delta = (2.0 / n) * diff * pred * (1.0 - pred)
    grad_w[-1] = activations[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    for layer in range(len(net.weights) - 2, -1, -1):
        delta = (delta @ net.weights[layer + 1].T) * (activations[layer + 1] > 0)
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
    return loss, grad_w, grad_b


def train(
    samples: Sequence[CalibSample],
    *,
    epochs: int = 2000,
    learning_rate: float = 0.01,
    batch_size: int = 32,
    seed: int = 0,
    sizes: Sequence[int] = LAYER_SIZES,
    min_samples: int = 200,
) -> GazeNet:
    """Minibatch SGD on squared error, deliberately run into the overfit regime.

    No early stopping: the final-epoch parameters are returned, with the final
    training MSE recorded in net.meta["final_mse"].
    """
    if len(samples) < min_samples:
        raise InsufficientSamples(len(samples), min_samples, {})
    x = np.stack([s.patch.flat() for s in samples])
    y = np.array([s.target_x for s in samples])
    if x.shape[1] != sizes[0]:
        raise ShapeMismatch(f"patch size {x.shape[1]} vs input layer {sizes[0]}")
    net = GazeNet.initialize(sizes, seed)
    rng = np.random.default_rng(seed + 1)
    n = len(samples)
    final_mse = math.inf
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grad_w, grad_b = loss_and_gradients(net, x[idx], y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch)
            for w, gw in zip(net.weights, grad_w):
                w -= learning_rate * gw
            for b, gb in zip(net.biases, grad_b):
                b -= learning_rate * gb
            epoch_loss += loss
            batches += 1
        final_mse = epoch_loss / max(batches, 1)
    net.meta.update(
        {
            "seed": seed,
            "epochs": epochs,
            "learning_rate": learning_rate,
            "batch_size": batch_size,
            "final_mse": final_mse,
            "n_samples": n,
        }
    )
    return net


def predict(net: GazeNet, patch: EyePatch) -> float:
    """Forward pass; strictly inside (0, 1) by construction."""
    flat = patch.flat()
    if flat.shape[0] != net.layer_sizes[0]:
        raise ShapeMismatch(f"patch {flat.shape[0]} vs input layer {net.layer_sizes[0]}")
    return float(net.forward(flat[None, :])[0, 0])


def track(
    stream: Iterable[Frame],
    net: GazeNet,
    face_model: CascadeModel,
    eye_model: CascadeModel,
) -> list[GazeSample]:
    """One GazeSample per frame; detection failures become invalid samples."""
    samples = []
    for frame in stream:
        analysis = analyze_frame(frame, face_model, eye_model)
        if analysis.patch is None:
            samples.append(
                GazeSample(frame.index, frame.timestamp_ms, None, False, analysis.invalid_reason)
            )
        else:
            samples.append(
                GazeSample(frame.index, frame.timestamp_ms, predict(net, analysis.patch), True, None)
            )
    return samples


@dataclass
class AccuracyReport:
    n_points: int
    mean_abs_error_pct: float
    lr_discrimination_pct: float
    per_point: list[tuple[float, float]]  # (true_x, predicted_x)

    def to_json(self) -> dict:
        return {
            "n_points": self.n_points,
            "mean_abs_error_pct": self.mean_abs_error_pct,
            "lr_discrimination_pct": self.lr_discrimination_pct,
            "per_point": [[t, p] for t, p in self.per_point],
        }

    def to_csv(self) -> str:
        lines = ["true_x,predicted_x"]
        lines += [f"{t!r},{p!r}" for t, p in self.per_point]
        return "\n".join(lines) + "\n"


# Reported human-trial operating point, kept as the reference record the
# synthetic pipeline run is compared against.
REFERENCE_ACCURACY = {"n_points": 100, "mean_abs_error_pct": 3.00, "lr_discrimination_pct": 100.0}


def assess_accuracy(
    click_points: Sequence[tuple[float, float]], predictions: Sequence[float]
) -> AccuracyReport:
    if len(click_points) != len(predictions):
        raise LengthMismatch(f"{len(click_points)} points vs {len(predictions)} predictions")
    if not click_points:
        raise LengthMismatch("no points")
    per_point = [(float(tx), float(p)) for (tx, _), p in zip(click_points, predictions)]
    errors = [abs(p - t) for t, p in per_point]
    agree = [((t > 0.5) == (p > 0.5)) for t, p in per_point]
    return AccuracyReport(
        n_points=len(per_point),
        mean_abs_error_pct=100.0 * sum(errors) / len(errors),
        lr_discrimination_pct=100.0 * sum(agree) / len(agree),
        per_point=per_point,
    )


def generate_click_points(n: int, seed: int = 0) -> list[tuple[float, float]]:
    """n/2 points on each screen half, shuffled; never on the x = 0.5 boundary."""
    if n % 2 != 0:
        raise OddCount(f"point count {n} must be even")
    rng = np.random.default_rng(seed)
    left = [(rng.uniform(0.05, 0.45), rng.uniform(0.1, 0.9)) for _ in range(n // 2)]
    right = [(rng.uniform(0.55, 0.95), rng.uniform(0.1, 0.9)) for _ in range(n // 2)]
    points = left + right
    rng.shuffle(points)
    return [(float(x), float(y)) for x, y in points]
