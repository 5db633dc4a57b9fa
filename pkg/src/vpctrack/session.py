"""The paired-comparison session: plan building, the schedule state machine,
observer-positioning alarms, and novelty-preference scoring.

A plan shows 12 familiarization images (15 s each), then 18 image pairs in
three kinds: both images new, new-left/known-right, new-right/known-left.
Dwell time on the novel image of the known/novel pairs, as a fraction of
total pair dwell, is the memory score; healthy observers sit near 0.70.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .fixation import detect_fixations, side_times
from .gaze import GazeSample

FAMILIARIZATION_COUNT = 12
NOVEL_POOL_COUNT = 24
FAMILIARIZATION_MS = 15000
TEST_PHASE_MS = 240000
PAIR_DISPLAY_MS = 13000
PAIR_COUNT = 18
HEALTHY_NOVELTY_REFERENCE = 0.70

ALARM_AFTER_INVALID = 10
RECOVER_AFTER_VALID = 15


class PoolSizeMismatch(Exception):
    pass


class DuplicateId(Exception):
    pass


class MissingPair(Exception):
    pass


class AbortedByOperator(Exception):
    """Raised through the engine to flag the partial result; the result is kept."""


@dataclass(frozen=True)
class ImageRef:
    id: str
    path: str
    role: str  # "familiar" | "novel"
    prompt: str = ""

    def to_json(self) -> dict:
        doc = {"id": self.id, "path": self.path, "role": self.role}
        if self.prompt:
            doc["prompt"] = self.prompt
        return doc

    @staticmethod
    def from_json(doc: dict) -> "ImageRef":
        return ImageRef(doc["id"], doc["path"], doc["role"], doc.get("prompt", ""))


@dataclass(frozen=True)
class PairSpec:
    pair_id: str
    kind: str  # "both_new" | "known_right" | "known_left"
    left_image: ImageRef
    right_image: ImageRef
    duration_ms: int
    blank_after_ms: int

    def __post_init__(self):
        if self.kind == "known_right":
            ok = self.right_image.role == "familiar" and self.left_image.role == "novel"
        elif self.kind == "known_left":
            ok = self.left_image.role == "familiar" and self.right_image.role == "novel"
        elif self.kind == "both_new":
            ok = self.left_image.role == "novel" and self.right_image.role == "novel"
        else:
            raise ValueError(f"bad pair kind {self.kind}")
        if not ok:
            raise ValueError(f"pair {self.pair_id}: image roles inconsistent with kind {self.kind}")

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "kind": self.kind,
            "left_image": self.left_image.to_json(),
            "right_image": self.right_image.to_json(),
            "duration_ms": self.duration_ms,
            "blank_after_ms": self.blank_after_ms,
        }

    @staticmethod
    def from_json(doc: dict) -> "PairSpec":
        return PairSpec(
            doc["pair_id"],
            doc["kind"],
            ImageRef.from_json(doc["left_image"]),
            ImageRef.from_json(doc["right_image"]),
            int(doc["duration_ms"]),
            int(doc["blank_after_ms"]),
        )


@dataclass
class SessionPlan:
    familiarization: list[ImageRef]
    test_pairs: list[PairSpec]
    shuffle_seed: int
    familiarization_ms: int = FAMILIARIZATION_MS

    def __post_init__(self):
        if len(self.familiarization) != FAMILIARIZATION_COUNT:
            raise PoolSizeMismatch(
                f"{len(self.familiarization)} familiarization images, need {FAMILIARIZATION_COUNT}"
            )
        kinds = [p.kind for p in self.test_pairs]
        counts = {k: kinds.count(k) for k in ("both_new", "known_right", "known_left")}
        if len(self.test_pairs) != PAIR_COUNT or any(c != 6 for c in counts.values()):
            raise ValueError(f"pair kinds {counts}, need six of each")
        familiar_ids = {img.id for img in self.familiarization}
        for pair in self.test_pairs:
            for img in (pair.left_image, pair.right_image):
                if img.role == "novel" and img.id in familiar_ids:
                    raise ValueError(f"novel image {img.id} appears in familiarization")

    def to_json(self) -> dict:
        return {
            "familiarization": [img.to_json() for img in self.familiarization],
            "familiarization_ms": self.familiarization_ms,
            "test_pairs": [p.to_json() for p in self.test_pairs],
            "shuffle_seed": self.shuffle_seed,
        }

    @staticmethod
    def from_json(doc: dict) -> "SessionPlan":
        return SessionPlan(
            familiarization=[ImageRef.from_json(d) for d in doc["familiarization"]],
            test_pairs=[PairSpec.from_json(d) for d in doc["test_pairs"]],
            shuffle_seed=int(doc["shuffle_seed"]),
            familiarization_ms=int(doc.get("familiarization_ms", FAMILIARIZATION_MS)),
        )

    def plan_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def familiarization_total_ms(self) -> int:
        return self.familiarization_ms * len(self.familiarization)

    def test_total_ms(self) -> int:
        return sum(p.duration_ms + p.blank_after_ms for p in self.test_pairs)


def build_plan(
    familiar_pool: Sequence[ImageRef], novel_pool: Sequence[ImageRef], seed: int
) -> SessionPlan:
    """Deterministic plan from the two image pools.

    Six both-new pairs consume twelve novels; the remaining twelve novels meet
    each familiar image exactly once, six with the familiar image on each
    side. Pair order is a seeded shuffle. Display is 13 s per pair; the
    inter-pair blanks absorb the remainder so the test phase is exactly 240 s.
    """
    if len(familiar_pool) != FAMILIARIZATION_COUNT or len(novel_pool) != NOVEL_POOL_COUNT:
        raise PoolSizeMismatch(
            f"pools are {len(familiar_pool)}/{len(novel_pool)}, "
            f"need {FAMILIARIZATION_COUNT}/{NOVEL_POOL_COUNT}"
        )
    ids = [img.id for img in familiar_pool] + [img.id for img in novel_pool]
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"duplicate image id {dup}")
    familiars = [ImageRef(i.id, i.path, "familiar", i.prompt) for i in familiar_pool]
    novels = [ImageRef(i.id, i.path, "novel", i.prompt) for i in novel_pool]

    rng = random.Random(seed)
    familiarization = familiars[:]
    rng.shuffle(familiarization)
    shuffled_novels = novels[:]
    rng.shuffle(shuffled_novels)
    shuffled_familiars = familiars[:]
    rng.shuffle(shuffled_familiars)

    pairs = []
    for i in range(6):
        left, right = shuffled_novels[2 * i], shuffled_novels[2 * i + 1]
        pairs.append(("both_new", left, right))
    for i in range(6):
        novel, familiar = shuffled_novels[12 + i], shuffled_familiars[i]
        pairs.append(("known_right", novel, familiar))  # novel left, familiar right
    for i in range(6):
        novel, familiar = shuffled_novels[18 + i], shuffled_familiars[6 + i]
        pairs.append(("known_left", familiar, novel))
    rng.shuffle(pairs)

    blank_total = TEST_PHASE_MS - PAIR_COUNT * PAIR_DISPLAY_MS
    base_blank = blank_total // PAIR_COUNT
    extras = blank_total - base_blank * PAIR_COUNT  # distributed to the last pairs
    test_pairs = []
    for idx, (kind, left, right) in enumerate(pairs):
        blank = base_blank + (1 if idx >= PAIR_COUNT - extras else 0)
        test_pairs.append(
            PairSpec(
                pair_id=f"pair{idx:02d}",
                kind=kind,
                left_image=left,
                right_image=right,
                duration_ms=PAIR_DISPLAY_MS,
                blank_after_ms=blank,
            )
        )
    return SessionPlan(familiarization=familiarization, test_pairs=test_pairs, shuffle_seed=seed)


@dataclass(frozen=True)
class ObserverStatus:
    state: str  # "ok" | "alarm_standby"
    reason: Optional[str]  # None | no_face | multiple_faces | eyes_not_found
    since_ms: int

    def __post_init__(self):
        if (self.reason is None) != (self.state == "ok"):
            raise ValueError("reason must be set exactly in alarm_standby")

    def to_json(self) -> dict:
        return {"state": self.state, "reason": self.reason, "since_ms": self.since_ms}


class GuardState:
    """Hysteresis: alarm after 10 consecutive invalid samples, recover after 15 valid."""

    def __init__(self):
        self.state = "ok"
        self.invalid_run = 0
        self.valid_run = 0
        self.last_reason: Optional[str] = None

    def update(self, sample: GazeSample) -> Optional[ObserverStatus]:
        if sample.valid:
            self.valid_run += 1
            self.invalid_run = 0
        else:
            self.invalid_run += 1
            self.valid_run = 0
            self.last_reason = sample.invalid_reason
        if self.state == "ok" and self.invalid_run >= ALARM_AFTER_INVALID:
            self.state = "alarm_standby"
            return ObserverStatus("alarm_standby", self.last_reason, sample.t_ms)
        if self.state == "alarm_standby" and self.valid_run >= RECOVER_AFTER_VALID:
            self.state = "ok"
            return ObserverStatus("ok", None, sample.t_ms)
        return None


def observer_guard(samples: Iterable[GazeSample]) -> list[ObserverStatus]:
    """Status transitions for a sample stream (initial ok state is implicit)."""
    guard = GuardState()
    transitions = []
    for sample in samples:
        change = guard.update(sample)
        if change is not None:
            transitions.append(change)
    return transitions


@dataclass
class PairRecord:
    pair_id: str
    kind: str
    left_ms: int
    right_ms: int
    novel_ms: Optional[int]
    known_ms: Optional[int]
    novelty_fraction: Optional[float]
    raw_left_ms: int = 0
    raw_right_ms: int = 0

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "kind": self.kind,
            "left_ms": self.left_ms,
            "right_ms": self.right_ms,
            "novel_ms": self.novel_ms,
            "known_ms": self.known_ms,
            "novelty_fraction": self.novelty_fraction,
            "raw_left_ms": self.raw_left_ms,
            "raw_right_ms": self.raw_right_ms,
        }


@dataclass
class SessionResult:
    patient_id: str
    plan_hash: str
    per_pair: list[PairRecord]
    novelty_preference: Optional[float]
    hrv: Optional[dict]
    alarms: list[tuple[int, str]]
    status: str  # "complete" | "aborted"
    gaze_trace_ref: str = ""

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "plan_hash": self.plan_hash,
            "per_pair": [r.to_json() for r in self.per_pair],
            "novelty_preference": self.novelty_preference,
            "healthy_reference": HEALTHY_NOVELTY_REFERENCE,
            "hrv": self.hrv,
            "alarms": [[t, reason] for t, reason in self.alarms],
            "status": self.status,
            "gaze_trace_ref": self.gaze_trace_ref,
        }

    @staticmethod
    def from_json(doc: dict) -> "SessionResult":
        return SessionResult(
            patient_id=doc["patient_id"],
            plan_hash=doc["plan_hash"],
            per_pair=[
                PairRecord(
                    pair_id=d["pair_id"],
                    kind=d["kind"],
                    left_ms=d["left_ms"],
                    right_ms=d["right_ms"],
                    novel_ms=d["novel_ms"],
                    known_ms=d["known_ms"],
                    novelty_fraction=d["novelty_fraction"],
                    raw_left_ms=d.get("raw_left_ms", 0),
                    raw_right_ms=d.get("raw_right_ms", 0),
                )
                for d in doc["per_pair"]
            ],
            novelty_preference=doc["novelty_preference"],
            hrv=doc.get("hrv"),
            alarms=[(t, r) for t, r in doc.get("alarms", [])],
            status=doc["status"],
            gaze_trace_ref=doc.get("gaze_trace_ref", ""),
        )


def score_pairs(
    plan: SessionPlan, pair_times: dict[str, tuple[int, int]], raw_times: Optional[dict] = None
) -> tuple[list[PairRecord], Optional[float]]:
    """Map left/right dwell to novel/known per pair kind and aggregate.

    Pairs with zero measured dwell contribute no fraction; the aggregate is
    total novel time over total (novel + known) time across known/novel pairs.
    """
    records = []
    novel_total = 0
    known_total = 0
    for pair in plan.test_pairs:
        if pair.pair_id not in pair_times:
            raise MissingPair(f"no recorded interval for {pair.pair_id}")
        left_ms, right_ms = pair_times[pair.pair_id]
        raw_left, raw_right = (raw_times or {}).get(pair.pair_id, (0, 0))
        if pair.kind == "both_new":
            novel_ms = known_ms = fraction = None
        else:
            if pair.kind == "known_right":
                novel_ms, known_ms = left_ms, right_ms
            else:
                novel_ms, known_ms = right_ms, left_ms
            total = novel_ms + known_ms
            fraction = novel_ms / total if total > 0 else None
            if total > 0:
                novel_total += novel_ms
                known_total += known_ms
        records.append(
            PairRecord(
                pair_id=pair.pair_id,
                kind=pair.kind,
                left_ms=left_ms,
                right_ms=right_ms,
                novel_ms=novel_ms,
                known_ms=known_ms,
                novelty_fraction=fraction,
                raw_left_ms=raw_left,
                raw_right_ms=raw_right,
            )
        )
    grand = novel_total + known_total
    aggregate = novel_total / grand if grand > 0 else None
    return records, aggregate


@dataclass
class ScheduleItem:
    kind: str  # "familiar" | "pair" | "blank"
    duration_ms: int
    image: Optional[ImageRef] = None
    pair: Optional[PairSpec] = None


def plan_schedule(plan: SessionPlan) -> list[ScheduleItem]:
    items = [
        ScheduleItem("familiar", plan.familiarization_ms, image=img)
        for img in plan.familiarization
    ]
    for pair in plan.test_pairs:
        items.append(ScheduleItem("pair", pair.duration_ms, pair=pair))
        if pair.blank_after_ms > 0:
            items.append(ScheduleItem("blank", pair.blank_after_ms, pair=pair))
    return items


class SessionEngine:
    """Sample-driven schedule state machine.

    Engine time is the gaze sample clock; the stimulus clock advances only
    while the observer guard is in the ok state, so standby pauses stretch
    wall time without shortening display time. Stimulus transitions and
    status changes are emitted through the event callback as they occur.
    """

    def __init__(
        self,
        plan: SessionPlan,
        patient_id: str = "",
        on_event: Optional[Callable[[str, int, dict], None]] = None,
    ):
        self.plan = plan
        self.patient_id = patient_id
        self.on_event = on_event or (lambda kind, t_ms, payload: None)
        self.items = plan_schedule(plan)
        self.guard = GuardState()
        self.samples: list[GazeSample] = []
        self.greens: list[tuple[int, Optional[float]]] = []
        self.alarms: list[tuple[int, str]] = []
        self.item_index = -1
        self.elapsed_in_item = 0.0
        self.segments: dict[str, list[tuple[int, int]]] = {
            p.pair_id: [] for p in plan.test_pairs
        }
        self._open_segment: Optional[int] = None
        self._last_t: Optional[int] = None
        self.aborted = False
        self.done = False

    @property
    def current_item(self) -> Optional[ScheduleItem]:
        if 0 <= self.item_index < len(self.items):
            return self.items[self.item_index]
        return None

    def _emit_stim(self, t_ms: int) -> None:
        item = self.current_item
        if item is None:
            self.on_event("session_end", t_ms, {})
            return
        if item.kind == "familiar":
            payload = {
                "phase": "familiarization",
                "image_id": item.image.id,
                "prompt": item.image.prompt,
                "index": self.item_index,
            }
        elif item.kind == "pair":
            payload = {
                "phase": "test",
                "pair_id": item.pair.pair_id,
                "left_image_id": item.pair.left_image.id,
                "right_image_id": item.pair.right_image.id,
                "index": self.item_index,
            }
        else:
            payload = {"phase": "blank", "pair_id": item.pair.pair_id, "index": self.item_index}
        self.on_event("stim", t_ms, payload)

    def _open_pair_segment(self, t_ms: int) -> None:
        item = self.current_item
        if item is not None and item.kind == "pair":
            self._open_segment = t_ms

    def _close_pair_segment(self, t_ms: int) -> None:
        item = self.current_item
        if item is not None and item.kind == "pair" and self._open_segment is not None:
            if t_ms > self._open_segment:
                self.segments[item.pair.pair_id].append((self._open_segment, t_ms))
        self._open_segment = None

    def _advance(self, t_ms: int, dt: float) -> None:
        self.elapsed_in_item += dt
        while not self.done:
            item = self.current_item
            if self.item_index >= 0 and item is not None and self.elapsed_in_item < item.duration_ms:
                break
            if self.item_index >= 0:
                self._close_pair_segment(t_ms)
                self.elapsed_in_item -= item.duration_ms if item else 0.0
            else:
                self.elapsed_in_item = 0.0
            self.item_index += 1
            if self.item_index >= len(self.items):
                self.done = True
                self._emit_stim(t_ms)
                break
            self._emit_stim(t_ms)
            self._open_pair_segment(t_ms)

    def feed(self, sample: GazeSample, green: Optional[float] = None) -> None:
        if self.done or self.aborted:
            return
        if self._last_t is None:
            self._last_t = sample.t_ms
            self._advance(sample.t_ms, 0.0)
        else:
            dt = sample.t_ms - self._last_t
            self._last_t = sample.t_ms
            if self.guard.state == "ok":
                self._advance(sample.t_ms, dt)
        self.samples.append(sample)
        self.greens.append((sample.t_ms, green))
        change = self.guard.update(sample)
        if change is not None:
            if change.state == "alarm_standby":
                self.alarms.append((change.since_ms, change.reason))
                self._close_pair_segment(sample.t_ms)
                self.on_event("status", sample.t_ms, change.to_json())
            else:
                self._open_pair_segment(sample.t_ms)
                self.on_event("status", sample.t_ms, change.to_json())

    def abort(self, t_ms: int) -> None:
        self.aborted = True
        self._close_pair_segment(t_ms)
        self.on_event("abort", t_ms, {})

    def finish(self) -> SessionResult:
        from .ppg import build_series, hrv_over_segments

        if not self.done and not self.aborted and self._last_t is not None:
            self._close_pair_segment(self._last_t)
        events = detect_fixations(self.samples)
        pair_times = {}
        raw_times = {}
        for pair in self.plan.test_pairs:
            left = right = 0
            raw_left = raw_right = 0
            for seg in self.segments[pair.pair_id]:
                sl, sr = side_times(events, seg)
                left += sl
                right += sr
                rl, rr = self._raw_side_times(seg)
                raw_left += rl
                raw_right += rr
            pair_times[pair.pair_id] = (left, right)
            raw_times[pair.pair_id] = (raw_left, raw_right)
        if self.done:
            records, aggregate = score_pairs(self.plan, pair_times, raw_times)
        else:
            # partial: score what exists, never raise on missing pairs
            for pair in self.plan.test_pairs:
                pair_times.setdefault(pair.pair_id, (0, 0))
            records, aggregate = score_pairs(self.plan, pair_times, raw_times)
        hrv = hrv_over_segments(build_series(self.greens))
        return SessionResult(
            patient_id=self.patient_id,
            plan_hash=self.plan.plan_hash(),
            per_pair=records,
            novelty_preference=aggregate,
            hrv=hrv.to_json() if hrv else None,
            alarms=self.alarms,
            status="complete" if self.done and not self.aborted else "aborted",
        )

    def _raw_side_times(self, segment: tuple[int, int]) -> tuple[int, int]:
        t0, t1 = segment
        period = 33
        left = right = 0
        for s in self.samples:
            if s.valid and t0 <= s.t_ms < t1:
                if s.gaze_x < 0.5:
                    left += period
                elif s.gaze_x > 0.5:
                    right += period
        return left, right


def run_session(
    plan: SessionPlan,
    samples: Iterable[GazeSample],
    greens: Optional[Iterable[Optional[float]]] = None,
    patient_id: str = "",
    on_event: Optional[Callable[[str, int, dict], None]] = None,
    abort_at_ms: Optional[int] = None,
) -> SessionResult:
    """Drive the engine over a recorded or scripted sample stream."""
    engine = SessionEngine(plan, patient_id=patient_id, on_event=on_event)
    greens_iter = iter(greens) if greens is not None else None
    for sample in samples:
        if abort_at_ms is not None and sample.t_ms >= abort_at_ms and not engine.done:
            engine.abort(sample.t_ms)
            break
        green = next(greens_iter, None) if greens_iter is not None else None
        engine.feed(sample, green)
        if engine.done:
            break
    return engine.finish()
