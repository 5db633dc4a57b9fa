"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test prints an `ACCEPTANCE <name>: PASS` line (bypassing capture) when
its criterion holds. The whole module exercises only the Python package; no
dashboard build is involved.
"""
from __future__ import annotations

import sys
import threading
import time

import numpy as np
import pytest

from vpctrack.frames import SyntheticSceneSpec, render_synthetic
from vpctrack.gaze import GazeNet, loss_and_gradients, sweep_pattern
from vpctrack.geometry import Rect
from vpctrack.haar import IntegralImage, eval_window, integral_image, luminance_u8
from vpctrack.pipeline import (
    calibration_scene,
    process_stream,
    run_calibration,
    run_click_assessment,
)
from vpctrack.ppg import NoPulse, PpgSeries, estimate_bpm, hrv_summary
from vpctrack.session import ImageRef, build_plan, run_session
from vpctrack.wire import (
    ProtocolFailed,
    SeqRegression,
    StreamDecoder,
    WireMessage,
    decode_one,
    encode,
    hello_server,
    loopback_pair,
)


def report(name: str) -> None:
    from conftest import ACCEPTANCE_LINES

    line = f"ACCEPTANCE {name}: PASS"
    ACCEPTANCE_LINES.append(line)
    print(line, file=sys.__stdout__, flush=True)


# ------------------------------------------------------------------------
# Accuracy protocol reproduction: synthetic observer, 30 s pursuit sweep,
# 100-point click assessment at noise sigma 5; discrimination 100%, mean
# absolute horizontal error <= 3% of screen width, in under 5 minutes.

def test_accuracy_protocol_reproduction(face_model, eye_model):
    t_start = time.monotonic()
    template = SyntheticSceneSpec(gaze_track=[(0, 0.5)], noise_sigma=5.0)
    pattern = sweep_pattern(duration_ms=30000)
    calib_frames = render_synthetic(calibration_scene(template, pattern), 30.0, 30000, seed=42)
    net = run_calibration(
        calib_frames, pattern, face_model, eye_model,
        epochs=450, learning_rate=0.02, batch_size=32, seed=0,
    )

    def scene_for_gaze(x):
        return SyntheticSceneSpec(gaze_track=[(0, x)], noise_sigma=5.0)

    result = run_click_assessment(
        net, face_model, eye_model, scene_for_gaze, n_points=100, frames_per_point=3, seed=7
    )
    elapsed = time.monotonic() - t_start
    left = sum(1 for t, _ in result.per_point if t < 0.5)
    assert left == 50
    assert result.lr_discrimination_pct == 100.0
    assert result.mean_abs_error_pct <= 3.0
    assert elapsed < 300.0
    report(
        f"accuracy-protocol (MAE {result.mean_abs_error_pct:.2f}%, "
        f"discrimination {result.lr_discrimination_pct:.0f}%, {elapsed:.0f}s)"
    )


# ------------------------------------------------------------------------
# Integral-image / cascade oracle equivalence, exact.

def reference_eval(model, pixels, window, scale):
    p = pixels.astype(np.float64)
    lum = np.rint(0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]).astype(np.int64)
    x, y, w, h = window.x, window.y, window.w, window.h
    n = w * h
    block = lum[y : y + h, x : x + w]
    s1 = float(int(block.sum()))
    s2 = float(int((block * block).sum()))
    mean = s1 / n
    sd = max(np.sqrt(max(s2 / n - mean * mean, 0.0)), 1.0)
    denom = (n / float(model.base_window_w * model.base_window_h)) * sd
    for stage in model.stages:
        total = 0.0
        for wc in stage.weak_classifiers:
            scaled = []
            for r in wc.feature.rects:
                rx = int(round(r.x * scale))
                ry = int(round(r.y * scale))
                rw = min(int(round(r.w * scale)), w - rx)
                rh = min(int(round(r.h * scale)), h - ry)
                scaled.append((rx, ry, rw, rh, r.weight))
            tail = sum(wt * (rw * rh) for _, _, rw, rh, wt in scaled[1:])
            first = scaled[0]
            scaled[0] = (first[0], first[1], first[2], first[3], -tail / (first[2] * first[3]))
            f = 0.0
            for rx, ry, rw, rh, wt in scaled:
                f += wt * float(int(lum[y + ry : y + ry + rh, x + rx : x + rx + rw].sum()))
            total += wc.left_value if f / denom < wc.threshold else wc.right_value
        if total < stage.stage_threshold:
            return False
    return True


def test_cascade_oracle_equivalence(mini3_model):
    rng = np.random.default_rng(2024)
    from vpctrack.frames import Frame

    checked = 0
    for frame_seed in range(10):
        pixels = np.random.default_rng(frame_seed).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        frame = Frame(0, 0, 64, 64, pixels)
        ii = integral_image(frame)
        for _ in range(100):
            scale = float(rng.uniform(1.0, 2.2))
            w = int(round(24 * scale))
            x = int(rng.integers(0, 64 - w + 1))
            y = int(rng.integers(0, 64 - w + 1))
            window = Rect(x, y, w, w)
            assert eval_window(mini3_model, ii, window, scale) == reference_eval(
                mini3_model, frame.pixels, window, scale
            )
            checked += 1
    assert checked == 1000

    pixels = np.random.default_rng(77).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    frame = Frame(0, 0, 8, 8, pixels)
    lum = luminance_u8(frame.pixels)
    ii = integral_image(frame)
    rect_checks = 0
    for x in range(8):
        for y in range(8):
            for w in range(1, 9 - x):
                for h in range(1, 9 - y):
                    assert ii.rect_sum(x, y, w, h) == lum[y : y + h, x : x + w].sum()
                    rect_checks += 1
    report(f"cascade-oracle-equivalence (1000 windows exact, {rect_checks} rect sums exact)")


# ------------------------------------------------------------------------
# Gradient check on a shrunken network, >= 100 probes, rel error < 1e-4.

def test_gradient_check():
    rng = np.random.default_rng(5)
    net = GazeNet.initialize(sizes=(16, 8, 4, 1), seed=11)
    x = rng.uniform(0, 1, (4, 16))
    y = rng.uniform(0, 1, 4)
    _, grad_w, grad_b = loss_and_gradients(net, x, y)

    def loss():
        pred = net.forward(x)
        diff = pred - y.reshape(-1, 1)
        return float(np.mean(diff * diff))

    step = 1e-5
    probes = 0
    worst = 0.0
    params = [(w, grad_w[i]) for i, w in enumerate(net.weights)]
    params += [(b, grad_b[i]) for i, b in enumerate(net.biases)]
    for tensor, grads in params:
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss()
            tensor[idx] = orig - step
            down = loss()
            tensor[idx] = orig
            fd = (up - down) / (2 * step)
            rel = abs(grads[idx] - fd) / max(abs(grads[idx]) + abs(fd), 1e-8)
            worst = max(worst, rel)
            probes += 1
    assert probes >= 100
    assert worst < 1e-4
    report(f"gradient-check ({probes} probes, max rel err {worst:.2e})")


# ------------------------------------------------------------------------
# BPM recovery through the full frame -> region mean -> spectrum path.

def test_bpm_recovery_full_path(face_model, eye_model):
    t_start = time.monotonic()

    def green_series(pulse_hz):
        spec = SyntheticSceneSpec(
            gaze_track=[(0, 0.5)], pulse_hz=pulse_hz, width=240, height=180
        )
        frames = render_synthetic(spec, 30.0, 12500, seed=3)
        t, g = [], []
        for record in process_stream(frames, face_model, eye_model, None, 30.0):
            if record.green_mean is not None:
                t.append(record.sample.t_ms)
                g.append(record.green_mean)
        return PpgSeries(t_ms=np.array(t, dtype=np.int64), values=np.array(g))

    errors = []
    for hz in (0.8, 1.0, 1.2, 1.5, 2.0):
        estimate = estimate_bpm(green_series(hz), window_s=12.0)
        errors.append(abs(estimate.bpm - 60.0 * hz))
        assert errors[-1] <= 2.0, f"{hz} Hz recovered as {estimate.bpm:.2f} BPM"

    constant = green_series(None)
    with pytest.raises(NoPulse):
        estimate_bpm(constant, window_s=12.0)
    elapsed = time.monotonic() - t_start
    assert elapsed < 60.0
    report(f"bpm-recovery (max err {max(errors):.2f} BPM, constant -> NoPulse, {elapsed:.0f}s)")


# ------------------------------------------------------------------------
# HRV closed forms.

def beat_train(beats, duration_ms, width_ms=120.0):
    t = np.arange(0, duration_ms, 1.0)
    v = np.zeros_like(t)
    for bt in beats:
        v += np.exp(-0.5 * ((t - bt) / width_ms) ** 2)
    return PpgSeries(t_ms=t.astype(np.int64), values=v, fps=1000.0)


def test_hrv_closed_forms():
    periodic = hrv_summary(beat_train(np.arange(500.0, 20000.0, 1000.0), 20000))
    assert periodic.rmssd_ms <= 1.0
    assert periodic.sdnn_ms <= 1.0

    beats = [450.0]
    for i in range(23):
        beats.append(beats[-1] + (900.0 if i % 2 == 0 else 1100.0))
    alternating = hrv_summary(beat_train(beats, 24000))
    assert abs(alternating.rmssd_ms - 200.0) <= 1.0
    report(
        f"hrv-closed-forms (periodic rmssd {periodic.rmssd_ms:.3f} ms, "
        f"alternating rmssd {alternating.rmssd_ms:.2f} ms)"
    )


# ------------------------------------------------------------------------
# Protocol timing arithmetic of the built plan.

def test_protocol_timing():
    familiar = [ImageRef(f"fam{i:02d}", "x", "familiar") for i in range(12)]
    novel = [ImageRef(f"nov{i:02d}", "x", "novel") for i in range(24)]
    plan = build_plan(familiar, novel, seed=3)
    assert plan.familiarization_total_ms() == 180000
    assert all(plan.familiarization_ms == 15000 for _ in plan.familiarization)
    assert len(plan.test_pairs) == 18
    assert plan.test_total_ms() == 240000
    kinds = [p.kind for p in plan.test_pairs]
    assert (kinds.count("both_new"), kinds.count("known_right"), kinds.count("known_left")) == (6, 6, 6)
    familiar_sides = {"left": 0, "right": 0}
    for p in plan.test_pairs:
        if p.kind == "known_left":
            familiar_sides["left"] += 1
        elif p.kind == "known_right":
            familiar_sides["right"] += 1
    assert familiar_sides == {"left": 6, "right": 6}
    report("protocol-timing (180000 ms familiarization, 240000 ms test, kinds 6/6/6, sides 6/6)")


# ------------------------------------------------------------------------
# Scoring oracle: scripted 70/30 dwell split.

def test_scoring_oracle_seventy_thirty():
    from test_session import novel_side_x, scripted_session_samples

    familiar = [ImageRef(f"fam{i:02d}", "x", "familiar") for i in range(12)]
    novel = [ImageRef(f"nov{i:02d}", "x", "novel") for i in range(24)]
    plan = build_plan(familiar, novel, seed=9)

    def dwell(pair, offset, duration):
        if pair.kind == "both_new":
            return 0.4
        frac = offset / duration
        return novel_side_x(pair) if frac < 0.7 else (1.0 - novel_side_x(pair))

    samples = scripted_session_samples(plan, dwell)
    result = run_session(plan, samples)
    assert result.status == "complete"
    assert result.novelty_preference == pytest.approx(0.70, abs=0.02)
    report(f"scoring-oracle (aggregate {result.novelty_preference:.4f} vs 0.70 +- 0.02)")


# ------------------------------------------------------------------------
# Streaming/batch equivalence with one injected chunk corruption.

def test_streaming_batch_equivalence(face_model, eye_model, tmp_path):
    from test_nodes import MonitorHooks, fast_plan, run_pair
    from vpctrack.store import PatientRecord, Store

    store = Store(tmp_path / "vault")
    store.put_patient(PatientRecord(patient_id="p1"))
    plan = fast_plan(seed=13)

    live_ticks = []
    hooks = MonitorHooks(on_tick=lambda payload: live_ticks.append(payload))
    live_env, live_code, _, _ = run_pair("live", face_model, eye_model, store, plan, hooks=hooks)
    assert live_code == 0

    batch_env, batch_code, batch_mgmt, _ = run_pair(
        "batch", face_model, eye_model, store, plan, corrupt_chunks={1}
    )
    assert batch_code == 0
    offline = batch_mgmt.offline_records
    assert offline is not None and len(offline) == len(live_ticks)
    for tick, record in zip(live_ticks, offline):
        assert tick["frame_index"] == record.sample.frame_index
        assert tick["t_ms"] == record.sample.t_ms
        assert tick["gaze_x"] == record.sample.gaze_x  # bit-identical float
        assert tick["valid"] == record.sample.valid
        assert tick["invalid_reason"] == record.sample.invalid_reason
        assert tick["bpm"] == record.bpm
    assert batch_env.result.per_pair == live_env.result.per_pair
    assert batch_env.result.novelty_preference == live_env.result.novelty_preference
    report(
        f"streaming-batch-equivalence ({len(offline)} frames bit-identical, "
        "1 corrupted chunk retransmitted)"
    )


# ------------------------------------------------------------------------
# Wire protocol properties.

def test_wire_protocol_properties():
    import random

    rng = random.Random(99)
    types = ["HELLO", "PLAN_PUSH", "GAZE_TICK", "STATUS", "RESULT", "STIM_SHOW", "ERROR"]

    def random_value(depth=0):
        kind = rng.randrange(7 if depth < 3 else 5)
        if kind == 0:
            return rng.randint(-(2**40), 2**40)
        if kind == 1:
            return rng.uniform(-1e9, 1e9)
        if kind == 2:
            return rng.choice([True, False])
        if kind == 3:
            return None
        if kind == 4:
            return "".join(rng.choice("αβγ日本語 xyz\"\\") for _ in range(rng.randrange(10)))
        if kind == 5:
            return [random_value(depth + 1) for _ in range(rng.randrange(4))]
        return {f"k{i}": random_value(depth + 1) for i in range(rng.randrange(4))}

    decoder = StreamDecoder()
    sent = []
    buffer = b""
    for seq in range(1, 1001):
        msg = WireMessage(rng.choice(types), seq, rng.randint(0, 10**9), {"v": random_value()})
        sent.append(msg)
        buffer += encode(msg)
    received = []
    pos = 0
    while pos < len(buffer):
        step = rng.randint(1, 8192)
        received.extend(decoder.feed(buffer[pos : pos + step]))
        pos += step
    assert received == sent

    # self-synchronization on concatenated frames
    a = WireMessage("STATUS", 1, 0, {"state": "ok"})
    b = WireMessage("STATUS", 2, 1, {"state": "alarm_standby"})
    first, rest = decode_one(encode(a) + encode(b))
    second, rest2 = decode_one(rest)
    assert (first, second, rest2) == (a, b, b"")

    # seq regression rejected
    strict = StreamDecoder()
    strict.feed(encode(WireMessage("ACK", 5, 0, {})))
    with pytest.raises(SeqRegression):
        strict.feed(encode(WireMessage("ACK", 5, 0, {})))

    # handshake violations rejected
    for bad_payload in (
        {"role": "measurement", "version": "999"},
        {"role": "management", "version": "1"},
    ):
        x, y = loopback_pair()
        x.send("HELLO", bad_payload)
        with pytest.raises(ProtocolFailed):
            hello_server(y, "management")
        x.close()
        y.close()

    x, y = loopback_pair()
    x.send("GAZE_TICK", {"frame_index": 0})
    with pytest.raises(ProtocolFailed):
        hello_server(y, "management")
    assert x.recv(timeout_s=2.0).type == "ERROR"
    x.close()
    y.close()
    report("wire-protocol (1000-message round trip, self-sync, regression + handshake rejections)")
