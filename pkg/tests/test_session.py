from __future__ import annotations

import pytest

from vpctrack.gaze import GazeSample
from vpctrack.session import (
    DuplicateId,
    FAMILIARIZATION_MS,
    ImageRef,
    MissingPair,
    PAIR_DISPLAY_MS,
    PoolSizeMismatch,
    SessionEngine,
    SessionPlan,
    build_plan,
    observer_guard,
    plan_schedule,
    run_session,
    score_pairs,
)


def pools():
    familiar = [ImageRef(f"fam{i:02d}", f"fam{i:02d}.png", "familiar", f"prompt {i}") for i in range(12)]
    novel = [ImageRef(f"nov{i:02d}", f"nov{i:02d}.png", "novel") for i in range(24)]
    return familiar, novel


@pytest.fixture()
def plan():
    familiar, novel = pools()
    return build_plan(familiar, novel, seed=1)


# ------------------------------------------------------------------ plan

def test_plan_phase_totals(plan):
    assert plan.familiarization_total_ms() == 12 * FAMILIARIZATION_MS == 180000
    assert plan.test_total_ms() == 240000


def test_plan_kind_counts(plan):
    kinds = [p.kind for p in plan.test_pairs]
    assert kinds.count("both_new") == 6
    assert kinds.count("known_right") == 6
    assert kinds.count("known_left") == 6


def test_plan_side_balance(plan):
    left = sum(1 for p in plan.test_pairs if p.kind == "known_left")
    right = sum(1 for p in plan.test_pairs if p.kind == "known_right")
    assert left == right == 6
    familiar_ids = [
        (p.left_image.id if p.kind == "known_left" else p.right_image.id)
        for p in plan.test_pairs
        if p.kind != "both_new"
    ]
    assert len(set(familiar_ids)) == 12


def test_plan_novels_never_in_familiarization(plan):
    familiar_ids = {img.id for img in plan.familiarization}
    for p in plan.test_pairs:
        for img in (p.left_image, p.right_image):
            if img.role == "novel":
                assert img.id not in familiar_ids


def test_plan_deterministic_and_seed_sensitive():
    familiar, novel = pools()
    a = build_plan(familiar, novel, seed=7)
    b = build_plan(familiar, novel, seed=7)
    c = build_plan(familiar, novel, seed=8)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()
    multiset = lambda p: sorted(
        (q.kind, *sorted((q.left_image.id, q.right_image.id))) for q in p.test_pairs
    )
    # different order, same familiar/novel structure counts
    assert [q.kind for q in a.test_pairs] != [q.kind for q in c.test_pairs] or [
        q.pair_id for q in a.test_pairs
    ] != [q.pair_id for q in c.test_pairs]
    assert len(multiset(a)) == len(multiset(c)) == 18


def test_plan_pool_size_mismatch():
    familiar, novel = pools()
    with pytest.raises(PoolSizeMismatch):
        build_plan(familiar[:11], novel, seed=0)
    with pytest.raises(PoolSizeMismatch):
        build_plan(familiar, novel[:20], seed=0)


def test_plan_duplicate_id():
    familiar, novel = pools()
    novel[0] = ImageRef("fam00", "x.png", "novel")
    with pytest.raises(DuplicateId):
        build_plan(familiar, novel, seed=0)


def test_plan_json_round_trip(plan):
    again = SessionPlan.from_json(plan.to_json())
    assert again.to_json() == plan.to_json()
    assert again.plan_hash() == plan.plan_hash()


# ----------------------------------------------------------------- score

def test_score_kind_mapping(plan):
    times = {}
    for p in plan.test_pairs:
        times[p.pair_id] = (700, 300)
    records, aggregate = score_pairs(plan, times)
    for r in records:
        if r.kind == "known_right":
            assert r.novel_ms == 700 and r.known_ms == 300
            assert r.novelty_fraction == pytest.approx(0.7)
        elif r.kind == "known_left":
            assert r.novel_ms == 300 and r.known_ms == 700
            assert r.novelty_fraction == pytest.approx(0.3)
        else:
            assert r.novelty_fraction is None
    assert aggregate == pytest.approx(0.5)


def test_score_zero_time_pair_excluded(plan):
    times = {p.pair_id: (0, 0) for p in plan.test_pairs}
    known = [p for p in plan.test_pairs if p.kind != "both_new"]
    times[known[0].pair_id] = (900, 100)
    records, aggregate = score_pairs(plan, times)
    fractions = [r.novelty_fraction for r in records if r.novelty_fraction is not None]
    assert len(fractions) == 1
    expected = 0.9 if known[0].kind == "known_right" else 0.1
    assert aggregate == pytest.approx(expected)


def test_score_missing_pair(plan):
    with pytest.raises(MissingPair):
        score_pairs(plan, {})


def test_score_scale_invariance(plan):
    times = {p.pair_id: (600, 200) for p in plan.test_pairs}
    _, agg1 = score_pairs(plan, times)
    times10 = {k: (a * 10, b * 10) for k, (a, b) in times.items()}
    _, agg2 = score_pairs(plan, times10)
    assert agg1 == pytest.approx(agg2)


# ----------------------------------------------------------------- guard

def valid(i, t, x=0.3):
    return GazeSample(i, t, x, True, None)


def invalid(i, t, reason="no_face"):
    return GazeSample(i, t, None, False, reason)


def test_guard_stays_ok_on_valid_stream():
    samples = [valid(i, i * 33) for i in range(100)]
    assert observer_guard(samples) == []


def test_guard_alarm_and_recovery():
    samples = [invalid(i, i * 33) for i in range(10)]
    samples += [valid(10 + i, 330 + i * 33) for i in range(15)]
    transitions = observer_guard(samples)
    assert len(transitions) == 2
    assert transitions[0].state == "alarm_standby" and transitions[0].reason == "no_face"
    assert transitions[1].state == "ok"


def test_guard_hysteresis_never_fires_on_flicker():
    samples = []
    t = 0
    for block in range(20):
        kind = invalid if block % 2 == 0 else valid
        for _ in range(5):
            samples.append(kind(len(samples), t))
            t += 33
    assert observer_guard(samples) == []


# ------------------------------------------------------------- engine

def scripted_session_samples(plan, dwell):
    """One sample per 33 ms; dwell(pair, offset_ms, duration_ms) -> x or None.

    Item switches follow the nominal cumulative schedule, matching the
    engine's remainder-carrying boundaries to within one frame.
    """
    schedule = plan_schedule(plan)
    samples = []
    idx = 0
    start = 0
    for item in schedule:
        end = start + item.duration_ms
        t = idx * 33
        while t < end:
            if item.kind == "pair":
                x = dwell(item.pair, t - start, item.duration_ms)
            else:
                x = 0.3
            if x is None:
                samples.append(invalid(idx, t))
            else:
                samples.append(valid(idx, t, x))
            idx += 1
            t = idx * 33
        start = end
    # trailing samples so the final item completes
    for _ in range(8):
        samples.append(valid(idx, idx * 33, 0.3))
        idx += 1
    return samples


def novel_side_x(pair, inner=0.25):
    if pair.kind == "known_right":
        return inner  # novel sits left
    return 1.0 - inner


def test_one_sided_dwell_scores_unity(plan):
    samples = scripted_session_samples(plan, lambda p, o, d: novel_side_x(p))
    result = run_session(plan, samples)
    assert result.status == "complete"
    for r in result.per_pair:
        if r.kind != "both_new":
            assert r.novelty_fraction == pytest.approx(1.0)
    assert result.novelty_preference == pytest.approx(1.0)


def test_split_dwell_scores_seventy_thirty(plan):
    def dwell(pair, offset, duration):
        frac = offset / duration
        if pair.kind == "both_new":
            return 0.4
        return novel_side_x(pair) if frac < 0.7 else (1.0 - novel_side_x(pair))

    samples = scripted_session_samples(plan, dwell)
    result = run_session(plan, samples)
    assert result.status == "complete"
    assert result.novelty_preference == pytest.approx(0.70, abs=0.02)


def test_equal_dwell_scores_half(plan):
    def dwell(pair, offset, duration):
        return 0.2 if (offset // 500) % 2 == 0 else 0.8

    samples = scripted_session_samples(plan, dwell)
    result = run_session(plan, samples)
    assert result.novelty_preference == pytest.approx(0.5, abs=0.02)


def test_stim_events_follow_plan_order(plan):
    events = []
    samples = scripted_session_samples(plan, lambda p, o, d: novel_side_x(p))
    run_session(plan, samples, on_event=lambda kind, t, payload: events.append((kind, payload)))
    stims = [p for k, p in events if k == "stim"]
    fam = [p for p in stims if p.get("phase") == "familiarization"]
    test_pairs = [p for p in stims if p.get("phase") == "test"]
    assert [p["image_id"] for p in fam] == [img.id for img in plan.familiarization]
    assert [p["pair_id"] for p in test_pairs] == [q.pair_id for q in plan.test_pairs]


def test_alarm_pause_preserves_display_time(plan):
    # invalid block inside the first familiarization image pauses the schedule
    events = []

    def on_event(kind, t, payload):
        events.append((kind, t, payload))

    samples = []
    idx = 0
    t = 0
    for _ in range(200):
        samples.append(valid(idx, t))
        idx += 1
        t += 33
    for _ in range(90):  # ~3 s alarm
        samples.append(invalid(idx, t))
        idx += 1
        t += 33
    while t < 600000:
        samples.append(valid(idx, t, 0.3))
        idx += 1
        t += 33
    result = run_session(plan, samples, on_event=on_event)
    assert result.status == "complete"
    assert len(result.alarms) == 1
    stims = [(t, p) for k, t, p in events if k == "stim"]
    # second familiarization image appears late by roughly the alarm span
    second = stims[1]
    alarm_span_ms = (90 - 10 + 15) * 33  # invalid run + recovery hysteresis
    assert second[0] >= FAMILIARIZATION_MS + 2500
    ends = [t for k, t, p in events if k == "session_end"]
    assert ends and ends[0] >= 420000 + 2500


def test_aborted_session_flagged(plan):
    samples = scripted_session_samples(plan, lambda p, o, d: novel_side_x(p))
    result = run_session(plan, samples, abort_at_ms=200000)
    assert result.status == "aborted"
    assert result.novelty_preference is not None or all(
        r.novelty_fraction is None for r in result.per_pair
    )


def test_engine_records_raw_side_times(plan):
    samples = scripted_session_samples(plan, lambda p, o, d: novel_side_x(p))
    result = run_session(plan, samples)
    for r in result.per_pair:
        if r.kind == "known_right":
            assert r.raw_left_ms > 0 and r.raw_right_ms == 0
