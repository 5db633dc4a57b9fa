"""Fixation events from the horizontal gaze sample stream.

Dispersion-based grouping on the one-dimensional signal: a maximal run of
consecutive valid samples whose spread stays within the dispersion bound
becomes an event when it lasts long enough. Events are attributed to the
left or right screen half for dwell-time scoring.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .gaze import GazeSample

DISPERSION_MAX_DEFAULT = 0.05
MIN_DURATION_MS_DEFAULT = 100


@dataclass(frozen=True)
class FixationEvent:
    t_start_ms: int
    t_end_ms: int
    mean_x: float
    side: str  # "left" | "right"
    n_frames: int

    def __post_init__(self):
        if self.n_frames < 3:
            raise ValueError("fixation needs at least 3 samples")
        if self.side not in ("left", "right"):
            raise ValueError(f"bad side {self.side}")
        if (self.side == "left") != (self.mean_x < 0.5):
            raise ValueError("side must match mean_x against the 0.5 boundary")

    @property
    def duration_ms(self) -> int:
        return self.t_end_ms - self.t_start_ms

    def to_json(self) -> list:
        return [self.t_start_ms, self.t_end_ms, self.mean_x, self.side]


def _nominal_period_ms(samples: Sequence[GazeSample]) -> int:
    diffs = sorted(
        b.t_ms - a.t_ms for a, b in zip(samples, samples[1:]) if b.t_ms > a.t_ms
    )
    if not diffs:
        return 33
    return diffs[len(diffs) // 2]


def detect_fixations(
    samples: Sequence[GazeSample],
    dispersion_max: float = DISPERSION_MAX_DEFAULT,
    min_duration_ms: int = MIN_DURATION_MS_DEFAULT,
) -> list[FixationEvent]:
    """Greedy maximal-run grouping.

    A run qualifies when it has >= 3 samples and spans >= min_duration_ms
    between its first and last sample; the emitted event covers one nominal
    frame period past the last sample, so an n-sample run at f fps spans n/f.
    Invalid samples terminate runs; a run whose mean lands exactly on the 0.5
    boundary is discarded.
    """
    period = _nominal_period_ms(samples)
    events: list[FixationEvent] = []
    run: list[GazeSample] = []

    def close_run():
        nonlocal run
        if len(run) >= 3 and run[-1].t_ms - run[0].t_ms >= min_duration_ms:
            mean_x = sum(s.gaze_x for s in run) / len(run)
            if mean_x != 0.5:
                events.append(
                    FixationEvent(
                        t_start_ms=run[0].t_ms,
                        t_end_ms=run[-1].t_ms + period,
                        mean_x=mean_x,
                        side="left" if mean_x < 0.5 else "right",
                        n_frames=len(run),
                    )
                )
        run = []

    for sample in samples:
        if not sample.valid:
            close_run()
            continue
        if run:
            xs = [s.gaze_x for s in run] + [sample.gaze_x]
            if max(xs) - min(xs) <= dispersion_max:
                run.append(sample)
                continue
            close_run()
        run.append(sample)
    close_run()
    return events


def side_times(
    events: Sequence[FixationEvent], interval: tuple[int, int]
) -> tuple[int, int]:
    """Event durations clipped to the interval, bucketed by side; milliseconds."""
    t0, t1 = interval
    if t0 >= t1:
        raise ValueError(f"empty interval ({t0}, {t1})")
    left = 0
    right = 0
    for event in events:
        overlap = min(event.t_end_ms, t1) - max(event.t_start_ms, t0)
        if overlap <= 0:
            continue
        if event.side == "left":
            left += overlap
        else:
            right += overlap
    return left, right
