"""Frame streams: recorded PNG sequences and the deterministic synthetic scene renderer.

Every downstream stage (detection, calibration, pulse extraction) consumes the
Frame values produced here, so the renderer doubles as the ground-truth oracle
for end-to-end tests: it knows the true gaze position, the true face box and
the true pulse frequency of every frame it emits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError


class MissingFile(Exception):
    def __init__(self, entry_index: int, path: str):
        super().__init__(f"frame entry {entry_index}: file not found: {path}")
        self.entry_index = entry_index
        self.path = path


class DecodeError(Exception):
    def __init__(self, entry_index: int, path: str, detail: str):
        super().__init__(f"frame entry {entry_index}: cannot decode {path}: {detail}")
        self.entry_index = entry_index
        self.path = path


class DimensionMismatch(Exception):
    def __init__(self, entry_index: int, path: str, got: tuple[int, int], want: tuple[int, int]):
        super().__init__(
            f"frame entry {entry_index}: {path} is {got[0]}x{got[1]}, manifest says {want[0]}x{want[1]}"
        )
        self.entry_index = entry_index
        self.path = path


class InvalidManifest(Exception):
    pass


class InvalidSpec(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    """One timestamped RGB image. `pixels` is a read-only (h, w, 3) uint8 array."""

    index: int
    timestamp_ms: int
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.index < 0 or self.timestamp_ms < 0:
            raise ValueError("index and timestamp_ms must be nonnegative")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width and height must be positive")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixels shape {self.pixels.shape} does not match {self.height}x{self.width}x3"
            )
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        self.pixels.setflags(write=False)


@dataclass
class StreamManifest:
    """Recorded-sequence description: ordered (path, t_ms) entries plus display geometry."""

    fps: float
    frame_entries: list[tuple[str, int]]
    screen_width_px: int
    screen_height_px: int

    def __post_init__(self):
        if self.fps <= 0:
            raise InvalidManifest("fps must be positive")
        if not self.frame_entries:
            raise InvalidManifest("manifest has no frame entries")
        if self.screen_width_px <= 0 or self.screen_height_px <= 0:
            raise InvalidManifest("screen dimensions must be positive")
        times = [t for _, t in self.frame_entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidManifest("frame timestamps must be strictly increasing")
        n = len(times)
        if n > 1:
            nominal = 1000.0 * (n - 1)
            actual = self.fps * (times[-1] - times[0])
            if abs(actual - nominal) > 0.05 * nominal:
                raise InvalidManifest(
                    f"fps {self.fps} inconsistent with timestamps: span {times[-1] - times[0]} ms "
                    f"for {n} frames"
                )

    @staticmethod
    def from_json(doc: dict) -> "StreamManifest":
        return StreamManifest(
            fps=float(doc["fps"]),
            frame_entries=[(e["path"], int(e["t_ms"])) for e in doc["frames"]],
            screen_width_px=int(doc["screen_width_px"]),
            screen_height_px=int(doc["screen_height_px"]),
        )

    def to_json(self) -> dict:
        return {
            "fps": self.fps,
            "screen_width_px": self.screen_width_px,
            "screen_height_px": self.screen_height_px,
            "frames": [{"path": p, "t_ms": t} for p, t in self.frame_entries],
        }

    @staticmethod
    def load(path: str | Path) -> "StreamManifest":
        return StreamManifest.from_json(json.loads(Path(path).read_text()))


@dataclass
class SyntheticSceneSpec:
    """Parameters of the schematic rendered scene.

    gaze_track gives the true horizontal gaze (0..1) as a piecewise-linear
    function of time; pulse_hz, when set, drives a sinusoidal green-channel
    modulation of all skin pixels; noise_sigma adds seeded Gaussian pixel noise.
    """

    gaze_track: list[tuple[int, float]]
    pulse_hz: Optional[float] = None
    face_box_norm: tuple[float, float, float, float] = (0.25, 0.15, 0.5, 0.65)
    noise_sigma: float = 0.0
    width: int = 320
    height: int = 240
    extra_face_boxes: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.gaze_track:
            raise InvalidSpec("gaze_track must not be empty")
        times = [t for t, _ in self.gaze_track]
        if any(b < a for a, b in zip(times, times[1:])):
            raise InvalidSpec("gaze_track timestamps must be nondecreasing")
        if any(not (0.0 <= x <= 1.0) for _, x in self.gaze_track):
            raise InvalidSpec("gaze_track positions must lie in [0, 1]")
        if self.pulse_hz is not None and not (0.7 <= self.pulse_hz <= 4.0):
            raise InvalidSpec(f"pulse_hz {self.pulse_hz} outside [0.7, 4.0]")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be nonnegative")
        if self.width <= 0 or self.height <= 0:
            raise InvalidSpec("frame dimensions must be positive")

    @staticmethod
    def from_json(doc: dict) -> "SyntheticSceneSpec":
        return SyntheticSceneSpec(
            gaze_track=[(int(t), float(x)) for t, x in doc["gaze_track"]],
            pulse_hz=doc.get("pulse_hz"),
            face_box_norm=tuple(doc.get("face_box_norm", (0.25, 0.15, 0.5, 0.65))),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            width=int(doc.get("width", 320)),
            height=int(doc.get("height", 240)),
            extra_face_boxes=[tuple(b) for b in doc.get("extra_face_boxes", [])],
        )

    def to_json(self) -> dict:
        doc = {
            "gaze_track": [[t, x] for t, x in self.gaze_track],
            "pulse_hz": self.pulse_hz,
            "face_box_norm": list(self.face_box_norm),
            "noise_sigma": self.noise_sigma,
            "width": self.width,
            "height": self.height,
        }
        if self.extra_face_boxes:
            doc["extra_face_boxes"] = [list(b) for b in self.extra_face_boxes]
        return doc

    def face_box_px(self, box=None) -> tuple[float, float, float, float]:
        bx, by, bw, bh = box if box is not None else self.face_box_norm
        return (bx * self.width, by * self.height, bw * self.width, bh * self.height)

    def gaze_at(self, t_ms: float) -> float:
        times = np.array([t for t, _ in self.gaze_track], dtype=np.float64)
        values = np.array([x for _, x in self.gaze_track], dtype=np.float64)
        return float(np.interp(t_ms, times, values))


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(pixels), "RGB").save(path, format="PNG")


def encode_png(pixels: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def open_stream(manifest: StreamManifest, base_dir: str | Path | None = None) -> Iterator[Frame]:
    """Yield frames in manifest order with manifest timestamps.

    Raises MissingFile / DecodeError / DimensionMismatch naming the offending
    entry. The returned generator exhausts exactly once.
    """
    base = Path(base_dir) if base_dir is not None else None

    def generate():
        w = h = None
        for i, (rel, t_ms) in enumerate(manifest.frame_entries):
            path = Path(rel) if base is None else base / rel
            if not path.is_file():
                raise MissingFile(i, str(path))
            try:
                pixels = read_png(path)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                raise DecodeError(i, str(path), str(exc)) from exc
            fh, fw = pixels.shape[0], pixels.shape[1]
            if w is None:
                w, h = fw, fh
            if (fw, fh) != (w, h):
                raise DimensionMismatch(i, str(path), (fw, fh), (w, h))
            yield Frame(index=i, timestamp_ms=t_ms, width=fw, height=fh, pixels=pixels)

    return generate()


# Scene palette (RGB). Chosen so that in luminance the eyebrow/eye band is
# markedly darker than forehead and cheeks, the head darker than the
# background, and the pupil darker than the sclera: the structure the shipped
# cascades key on.
_BG = (120.0, 120.0, 126.0)
_SKIN = (205.0, 170.0, 150.0)
_BROW = (60.0, 45.0, 40.0)
_SCLERA = (192.0, 178.0, 168.0)
_IRIS = (150.0, 135.0, 125.0)
_PUPIL = (25.0, 20.0, 20.0)
_MOUTH = (120.0, 60.0, 60.0)

SKIN_GREEN_BASE = _SKIN[1]
PULSE_AMPLITUDE = 10.0

# Face layout, as fractions of the face box. Eye geometry is exposed so tests
# and the patch extractor can locate the true eye positions.
HEAD_CENTER = (0.5, 0.5)
HEAD_SEMI = (0.44, 0.46)
BROW_CENTERS = ((0.27, 0.255), (0.73, 0.255))
BROW_SEMI = (0.16, 0.045)
EYE_CENTERS = ((0.27, 0.38), (0.73, 0.38))
EYE_SOCKET_SEMI = (0.11, 0.055)
IRIS_RADIUS_FRAC = 0.062
PUPIL_RADIUS_FRAC = 0.050
PUPIL_TRAVEL_FRAC = 0.4  # full-scale travel as a fraction of socket width
MOUTH_CENTER = (0.5, 0.78)
MOUTH_SEMI = (0.16, 0.035)


def _paint_ellipse(img: np.ndarray, cx: float, cy: float, rx: float, ry: float, color) -> None:
    """Alpha-composite an ellipse with a soft ~1px edge (keeps sub-pixel geometry)."""
    h, w = img.shape[0], img.shape[1]
    x0 = max(0, int(math.floor(cx - rx - 2)))
    x1 = min(w, int(math.ceil(cx + rx + 2)))
    y0 = max(0, int(math.floor(cy - ry - 2)))
    y1 = min(h, int(math.ceil(cy + ry + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    r = np.sqrt(((xs + 0.5 - cx) / rx) ** 2 + ((ys + 0.5 - cy) / ry) ** 2)
    sharp = min(rx, ry)
    alpha = np.clip(0.5 + (1.0 - r) * sharp, 0.0, 1.0)[..., None]
    region = img[y0:y1, x0:x1]
    region *= 1.0 - alpha
    region += alpha * np.asarray(color, dtype=np.float64)


def pupil_center_px(spec: SyntheticSceneSpec, gaze_x: float, eye: int = 1, box=None) -> tuple[float, float]:
    """True pupil center in frame pixels; eye 0 = image-left, 1 = image-right."""
    fx, fy, fw, fh = spec.face_box_px(box)
    ex, ey = EYE_CENTERS[eye]
    socket_w = 2.0 * EYE_SOCKET_SEMI[0] * fw
    offset = (gaze_x - 0.5) * PUPIL_TRAVEL_FRAC * socket_w
    return (fx + ex * fw + offset, fy + ey * fh)


def eye_box_px(spec: SyntheticSceneSpec, eye: int = 1, box=None, margin: float = 1.8):
    """Bounding box around one eye socket, with margin, in integer pixels."""
    from .geometry import Rect

    fx, fy, fw, fh = spec.face_box_px(box)
    ex, ey = EYE_CENTERS[eye]
    rx = EYE_SOCKET_SEMI[0] * fw * margin
    ry = max(EYE_SOCKET_SEMI[1] * fh * margin, rx * 0.6)
    cx, cy = fx + ex * fw, fy + ey * fh
    return Rect(int(round(cx - rx)), int(round(cy - ry)), int(round(2 * rx)), int(round(2 * ry)))


def _render_face(img: np.ndarray, spec: SyntheticSceneSpec, box, gaze_x: float, green_offset: float) -> None:
    fx, fy, fw, fh = spec.face_box_px(box)
    skin = (_SKIN[0], _SKIN[1] + green_offset, _SKIN[2])
    _paint_ellipse(
        img,
        fx + HEAD_CENTER[0] * fw,
        fy + HEAD_CENTER[1] * fh,
        HEAD_SEMI[0] * fw,
        HEAD_SEMI[1] * fh,
        skin,
    )
    for bx, by in BROW_CENTERS:
        _paint_ellipse(
            img, fx + bx * fw, fy + by * fh, BROW_SEMI[0] * fw, max(BROW_SEMI[1] * fh, 1.5), _BROW
        )
    for i, (ex, ey) in enumerate(EYE_CENTERS):
        _paint_ellipse(
            img,
            fx + ex * fw,
            fy + ey * fh,
            EYE_SOCKET_SEMI[0] * fw,
            max(EYE_SOCKET_SEMI[1] * fh, 2.0),
            _SCLERA,
        )
        px, py = pupil_center_px(spec, gaze_x, eye=i, box=box)
        ir = max(IRIS_RADIUS_FRAC * fw, 2.0)
        _paint_ellipse(img, px, py, ir, ir, _IRIS)
        pr = max(PUPIL_RADIUS_FRAC * fw, 1.5)
        _paint_ellipse(img, px, py, pr, pr, _PUPIL)
    _paint_ellipse(
        img,
        fx + MOUTH_CENTER[0] * fw,
        fy + MOUTH_CENTER[1] * fh,
        MOUTH_SEMI[0] * fw,
        max(MOUTH_SEMI[1] * fh, 1.5),
        _MOUTH,
    )


def render_frame(
    spec: SyntheticSceneSpec,
    index: int,
    t_ms: int,
    rng: Optional[np.random.Generator] = None,
) -> Frame:
    """Render one frame at time t_ms. Pass the stream's RNG for noise continuity."""
    gaze_x = spec.gaze_at(t_ms)
    img = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    img[:] = np.asarray(_BG)
    if spec.pulse_hz is not None:
        green_offset = PULSE_AMPLITUDE * math.sin(2.0 * math.pi * spec.pulse_hz * (t_ms / 1000.0))
    else:
        green_offset = 0.0
    _render_face(img, spec, None, gaze_x, green_offset)
    for box in spec.extra_face_boxes:
        _render_face(img, spec, box, gaze_x, green_offset)
    if spec.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Frame(index=index, timestamp_ms=t_ms, width=spec.width, height=spec.height, pixels=pixels)


def frame_times(fps: float, duration_ms: int) -> list[int]:
    n = int(round(duration_ms * fps / 1000.0))
    return [int(round(i * 1000.0 / fps)) for i in range(n)]


def render_synthetic(
    spec: SyntheticSceneSpec, fps: float, duration_ms: int, seed: int = 0
) -> Iterator[Frame]:
    """Deterministic frame stream: same spec, fps, duration and seed give identical bytes."""
    if duration_ms <= 0:
        raise InvalidSpec("duration_ms must be positive")
    times = frame_times(fps, duration_ms)

    def generate():
        rng = np.random.default_rng(seed)
        for i, t in enumerate(times):
            yield render_frame(spec, i, t, rng)

    return generate()


def write_stream(
    frames: Sequence[Frame] | Iterator[Frame],
    out_dir: str | Path,
    fps: float,
    screen_width_px: int = 1920,
    screen_height_px: int = 1080,
) -> StreamManifest:
    """Materialize a frame stream as PNGs plus a manifest JSON (test fixtures, batch replay)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for frame in frames:
        name = f"frame_{frame.index:06d}.png"
        write_png(out / name, frame.pixels)
        entries.append((name, frame.timestamp_ms))
    manifest = StreamManifest(
        fps=fps,
        frame_entries=entries,
        screen_width_px=screen_width_px,
        screen_height_px=screen_height_px,
    )
    (out / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))
    return manifest
