"""Pulse and heart-rate-variability extraction from the forehead region.

Per frame, the mean pixel value of the forehead region of interest is taken
in each color channel; the green-channel series carries the blood-volume
pulse. Heart rate comes from the dominant in-band spectral peak of the
detrended, band-limited series; variability metrics come from the spacing of
the band-limited signal's peaks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .frames import Frame
from .geometry import Rect

BAND_LOW_HZ = 0.7
BAND_HIGH_HZ = 4.0
MIN_WINDOW_S = 8.0
MIN_CONFIDENCE = 0.2
GAP_BRIDGE_MS = 1000


class DegenerateBox(Exception):
    pass


class RoiOutOfBounds(Exception):
    pass


class SeriesTooShort(Exception):
    pass


class NoPulse(Exception):
    pass


class TooFewBeats(Exception):
    pass


@dataclass(frozen=True)
class PpgSeries:
    t_ms: np.ndarray
    values: np.ndarray
    channel: str = "G"
    fps: float = 30.0

    def __post_init__(self):
        if self.t_ms.shape != self.values.shape or self.t_ms.ndim != 1:
            raise ValueError("t_ms and values must be 1-d arrays of equal length")
        if len(self.t_ms) > 1 and not (np.diff(self.t_ms) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        self.t_ms.setflags(write=False)
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.t_ms)

    def span_ms(self) -> float:
        return float(self.t_ms[-1] - self.t_ms[0]) if len(self) > 1 else 0.0

    def to_csv(self) -> str:
        lines = ["t_ms,value"]
        lines += [f"{int(t)},{v!r}" for t, v in zip(self.t_ms, self.values)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PulseEstimate:
    bpm: float
    confidence: float
    window: tuple[int, int]

    def to_json(self) -> dict:
        return {
            "bpm": self.bpm,
            "confidence": self.confidence,
            "window": [self.window[0], self.window[1]],
        }


@dataclass
class HrvSummary:
    inter_beat_intervals_ms: list[float]
    rmssd_ms: float
    sdnn_ms: float

    def to_json(self) -> dict:
        return {
            "inter_beat_intervals_ms": self.inter_beat_intervals_ms,
            "rmssd_ms": self.rmssd_ms,
            "sdnn_ms": self.sdnn_ms,
        }


# Forehead band, as fractions of the detected face box.
ROI_X_FRAC = (0.20, 0.80)
ROI_Y_FRAC = (0.10, 0.30)


def forehead_roi(face_box: Rect, frame_width: int, frame_height: int) -> Rect:
    """Middle 60% of the face box horizontally, 10-30% band vertically, clipped."""
    x = face_box.x + int(round(ROI_X_FRAC[0] * face_box.w))
    w = int(round((ROI_X_FRAC[1] - ROI_X_FRAC[0]) * face_box.w))
    y = face_box.y + int(round(ROI_Y_FRAC[0] * face_box.h))
    h = int(round((ROI_Y_FRAC[1] - ROI_Y_FRAC[0]) * face_box.h))
    roi = Rect(x, y, w, h).clip(frame_width, frame_height)
    if roi.area == 0:
        raise DegenerateBox(f"forehead ROI of {face_box} clips to zero area")
    return roi


_CHANNELS = {"R": 0, "G": 1, "B": 2}


def channel_mean(frame: Frame, roi: Rect, channel: str = "G") -> float:
    """Exact mean pixel value of the channel over the region (sum / pixel count)."""
    if not roi.within(frame.width, frame.height) or roi.area == 0:
        raise RoiOutOfBounds(f"roi {roi} outside {frame.width}x{frame.height}")
    c = _CHANNELS[channel]
    block = frame.pixels[roi.y : roi.y2, roi.x : roi.x2, c]
    return float(int(block.sum(dtype=np.int64))) / roi.area


def _detrend(values: np.ndarray, t_s: np.ndarray) -> np.ndarray:
    a, b = np.polyfit(t_s, values, 1)
    return values - (a * t_s + b)


def _bandpass_fft(values: np.ndarray, dt_s: float, low_hz: float, high_hz: float) -> np.ndarray:
    """Zero-phase band-pass by zeroing FFT bins outside [low, high]."""
    spectrum = np.fft.rfft(values)
    freqs = np.fft.rfftfreq(len(values), dt_s)
    spectrum[(freqs < low_hz) | (freqs > high_hz)] = 0.0
    return np.fft.irfft(spectrum, n=len(values))


def estimate_bpm(series: PpgSeries, window_s: float = 10.0) -> PulseEstimate:
    """Dominant in-band frequency over the most recent window.

    Linear detrend, band-limit to 0.7-4 Hz, magnitude spectrum; the peak bin
    is refined by parabolic interpolation over its two neighbors. Confidence
    is the peak bin's share of total in-band power.
    """
    if window_s < MIN_WINDOW_S:
        raise SeriesTooShort(f"window {window_s}s below minimum {MIN_WINDOW_S}s")
    # samples are instants; the series covers one sample period past the last
    span = series.span_ms()
    period = span / (len(series) - 1) if len(series) > 1 else 0.0
    if span + period < window_s * 1000.0:
        raise SeriesTooShort(f"series spans {span}ms, need {window_s * 1000}ms")
    t_end = series.t_ms[-1]
    mask = series.t_ms >= t_end - window_s * 1000.0
    t = series.t_ms[mask].astype(np.float64)
    v = series.values[mask].astype(np.float64)
    n = len(v)
    if n < 16:
        raise SeriesTooShort(f"window holds {n} samples")
    t_s = (t - t[0]) / 1000.0
    dt = float(t_s[-1] / (n - 1))
    detrended = _detrend(v, t_s)
    # flat illumination: nothing physiological to find (guards against the
    # femto-scale float residue a constant series leaves in the spectrum)
    if float(np.var(detrended)) < 1e-9:
        raise NoPulse("signal is flat")
    filtered = _bandpass_fft(detrended, dt, BAND_LOW_HZ, BAND_HIGH_HZ)
    spectrum = np.abs(np.fft.rfft(filtered))
    freqs = np.fft.rfftfreq(n, dt)
    in_band = (freqs >= BAND_LOW_HZ) & (freqs <= BAND_HIGH_HZ)
    power = spectrum**2
    total = float(power[in_band].sum())
    if total <= 0.0:
        raise NoPulse("no in-band power")
    band_idx = np.flatnonzero(in_band)
    k = int(band_idx[np.argmax(power[band_idx])])
    confidence = float(power[k]) / total
    if confidence < MIN_CONFIDENCE:
        raise NoPulse(f"dominant-peak power fraction {confidence:.3f} below {MIN_CONFIDENCE}")
    df = freqs[1] - freqs[0]
    if 0 < k < len(spectrum) - 1:
        m_prev, m_mid, m_next = spectrum[k - 1], spectrum[k], spectrum[k + 1]
        denom = m_prev - 2.0 * m_mid + m_next
        delta = 0.5 * (m_prev - m_next) / denom if denom != 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    freq = freqs[k] + delta * df
    return PulseEstimate(bpm=60.0 * freq, confidence=confidence, window=(int(t[0]), int(t[-1])))


def _find_peaks(values: np.ndarray, min_separation: int, min_prominence: float) -> list[int]:
    candidates = [
        i
        for i in range(1, len(values) - 1)
        if values[i - 1] < values[i] >= values[i + 1]
    ]
    kept = []
    for i in candidates:
        # prominence: height above the higher of the two valley minima that
        # separate this peak from the nearest higher terrain on each side
        left = values[:i]
        higher_left = np.flatnonzero(left > values[i])
        lo = higher_left[-1] + 1 if len(higher_left) else 0
        left_min = values[lo:i].min() if i > lo else values[i]
        right = values[i + 1 :]
        higher_right = np.flatnonzero(right > values[i])
        hi = i + 1 + higher_right[0] if len(higher_right) else len(values)
        right_min = values[i + 1 : hi].min() if hi > i + 1 else values[i]
        prominence = values[i] - max(left_min, right_min)
        if prominence >= min_prominence:
            kept.append(i)
    kept.sort(key=lambda i: values[i], reverse=True)
    selected: list[int] = []
    for i in kept:
        if all(abs(i - j) >= min_separation for j in selected):
            selected.append(i)
    return sorted(selected)


def hrv_summary(series: PpgSeries, window_s: Optional[float] = None) -> HrvSummary:
    """Inter-beat intervals from band-limited signal peaks; RMSSD and SDNN over them.

    Peak times are refined by parabolic interpolation for sub-sample spacing.
    """
    if series.span_ms() < 15000.0:
        raise SeriesTooShort(f"series spans {series.span_ms()}ms, need 15000ms")
    window = window_s if window_s is not None else series.span_ms() / 1000.0
    pulse = estimate_bpm(series, window_s=window)
    t = series.t_ms.astype(np.float64)
    v = series.values.astype(np.float64)
    t_s = (t - t[0]) / 1000.0
    dt = float(t_s[-1] / (len(v) - 1))
    # peak localization needs the beat-interval modulation sidebands, which sit
    # at multiples of the beat rate +- half the rate; the lower band edge
    # follows the measured rate down so those components survive the filter
    lo = max(0.25, 0.45 * pulse.bpm / 60.0)
    filtered = _bandpass_fft(v, dt, lo, BAND_HIGH_HZ)
    min_sep_s = 60.0 / (1.5 * pulse.bpm)
    min_sep = max(1, int(round(min_sep_s / dt)))
    prominence = 0.25 * float(filtered.std())
    peaks = _find_peaks(filtered, min_sep, prominence)
    if len(peaks) < 4:
        raise TooFewBeats(f"{len(peaks)} peaks found, need 4")
    peak_times = []
    for i in peaks:
        if 0 < i < len(filtered) - 1:
            denom = filtered[i - 1] - 2.0 * filtered[i] + filtered[i + 1]
            delta = 0.5 * (filtered[i - 1] - filtered[i + 1]) / denom if denom != 0 else 0.0
            delta = float(np.clip(delta, -0.5, 0.5))
        else:
            delta = 0.0
        peak_times.append(float(np.interp(i + delta, np.arange(len(t)), t)))
    intervals = np.diff(peak_times)
    diffs = np.diff(intervals)
    rmssd = float(np.sqrt(np.mean(diffs * diffs))) if len(diffs) else 0.0
    sdnn = float(np.std(intervals))
    return HrvSummary(
        inter_beat_intervals_ms=[float(x) for x in intervals],
        rmssd_ms=rmssd,
        sdnn_ms=sdnn,
    )


def build_series(
    points: Sequence[tuple[int, Optional[float]]], channel: str = "G", fps: float = 30.0
) -> list[PpgSeries]:
    """Assemble per-frame means into gap-free segments.

    Gaps up to one second are bridged by linear interpolation; longer gaps
    split the series, and downstream variability metrics run per segment.
    """
    segments: list[PpgSeries] = []
    cur_t: list[int] = []
    cur_v: list[float] = []
    last_valid: Optional[tuple[int, float]] = None
    pending_gap: list[int] = []

    def flush():
        nonlocal cur_t, cur_v
        if len(cur_t) >= 2:
            segments.append(
                PpgSeries(
                    t_ms=np.array(cur_t, dtype=np.int64),
                    values=np.array(cur_v, dtype=np.float64),
                    channel=channel,
                    fps=fps,
                )
            )
        cur_t, cur_v = [], []

    for t, value in points:
        if value is None:
            pending_gap.append(t)
            continue
        if pending_gap and last_valid is not None:
            gap_span = t - last_valid[0]
            if gap_span <= GAP_BRIDGE_MS:
                for tg in pending_gap:
                    frac = (tg - last_valid[0]) / gap_span
                    cur_t.append(tg)
                    cur_v.append(last_valid[1] + frac * (value - last_valid[1]))
            else:
                flush()
        pending_gap = []
        cur_t.append(t)
        cur_v.append(value)
        last_valid = (t, value)
    flush()
    return segments


def hrv_over_segments(segments: Sequence[PpgSeries]) -> Optional[HrvSummary]:
    """Pool per-segment inter-beat intervals; differences never cross segments."""
    intervals: list[float] = []
    diffs: list[float] = []
    for segment in segments:
        try:
            summary = hrv_summary(segment)
        except (SeriesTooShort, NoPulse, TooFewBeats):
            continue
        intervals.extend(summary.inter_beat_intervals_ms)
        seg = np.asarray(summary.inter_beat_intervals_ms)
        diffs.extend(np.diff(seg).tolist())
    if len(intervals) < 3:
        return None
    diffs_arr = np.asarray(diffs)
    rmssd = float(np.sqrt(np.mean(diffs_arr * diffs_arr))) if len(diffs_arr) else 0.0
    return HrvSummary(
        inter_beat_intervals_ms=[float(x) for x in intervals],
        rmssd_ms=rmssd,
        sdnn_ms=float(np.std(np.asarray(intervals))),
    )


class LivePulseTracker:
    """Sliding-window heart-rate display feed: 10 s window, 1 s hop, latest wins."""

    def __init__(self, window_s: float = 10.0, hop_s: float = 1.0, fps: float = 30.0):
        self.window_s = window_s
        self.hop_s = hop_s
        self.fps = fps
        self._t: list[int] = []
        self._v: list[float] = []
        self._next_eval_ms: float = window_s * 1000.0
        self.current: Optional[PulseEstimate] = None

    def feed(self, t_ms: int, value: Optional[float]) -> Optional[PulseEstimate]:
        """Append one frame's mean; returns a new estimate when the hop elapses."""
        if value is not None:
            self._t.append(t_ms)
            self._v.append(value)
        if t_ms < self._next_eval_ms or len(self._t) < 2:
            return None
        self._next_eval_ms = t_ms + self.hop_s * 1000.0
        cutoff = t_ms - self.window_s * 1000.0 - 2000.0
        while self._t and self._t[0] < cutoff:
            self._t.pop(0)
            self._v.pop(0)
        series = PpgSeries(
            t_ms=np.array(self._t, dtype=np.int64),
            values=np.array(self._v, dtype=np.float64),
            fps=self.fps,
        )
        try:
            self.current = estimate_bpm(series, window_s=self.window_s)
        except (SeriesTooShort, NoPulse):
            return None
        return self.current
