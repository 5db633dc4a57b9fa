from __future__ import annotations

import numpy as np
import pytest

from vpctrack.frames import (
    Frame,
    SyntheticSceneSpec,
    eye_box_px,
    render_frame,
    render_synthetic,
)
from vpctrack.geometry import Rect
from vpctrack.gaze import (
    BoxOutOfBounds,
    CalibSample,
    EyePatch,
    GazeNet,
    GazeSample,
    InsufficientSamples,
    LengthMismatch,
    OddCount,
    ShapeMismatch,
    assess_accuracy,
    collect_calibration,
    extract_patch,
    generate_click_points,
    loss_and_gradients,
    predict,
    sweep_pattern,
    track,
    train,
)


def gray_frame(value=128, w=64, h=64):
    return Frame(0, 0, w, h, np.full((h, w, 3), value, dtype=np.uint8))


# ------------------------------------------------------------- extraction

def test_constant_patch_maps_to_half():
    patch = extract_patch(gray_frame(), Rect(8, 8, 32, 32))
    assert np.allclose(patch.values, 0.5)


def test_checkerboard_patch_hits_endpoints():
    tile = np.kron(np.indices((8, 8)).sum(axis=0) % 2, np.ones((8, 8))) * 255
    pixels = np.repeat(tile[:, :, None], 3, axis=2).astype(np.uint8)
    frame = Frame(0, 0, 64, 64, pixels)
    patch = extract_patch(frame, Rect(0, 0, 64, 64))
    assert patch.values.min() == 0.0 and patch.values.max() == 1.0


def test_patch_box_out_of_bounds():
    with pytest.raises(BoxOutOfBounds):
        extract_patch(gray_frame(), Rect(40, 40, 32, 32))


def test_patch_dark_column_tracks_gaze():
    cols = []
    for gaze in (0.0, 0.25, 0.5, 0.75, 1.0):
        spec = SyntheticSceneSpec(gaze_track=[(0, gaze)])
        frame = render_frame(spec, 0, 0)
        patch = extract_patch(frame, eye_box_px(spec, eye=1))
        cols.append(int(np.argmin(patch.values.min(axis=0))))
    assert all(b > a for a, b in zip(cols, cols[1:]))


# ------------------------------------------------------------ calibration

def test_collect_calibration_no_faces():
    frames = [
        Frame(i, i * 33, 64, 64, np.full((64, 64, 3), 100, dtype=np.uint8)) for i in range(30)
    ]
    pattern = sweep_pattern(duration_ms=1000)
    from conftest import CASCADE_DIR
    from vpctrack.haar import load_cascade

    face = load_cascade(CASCADE_DIR / "synthetic_face.xml")
    eye = load_cascade(CASCADE_DIR / "synthetic_eye.xml")
    with pytest.raises(InsufficientSamples) as err:
        collect_calibration(frames, pattern, face, eye)
    assert err.value.collected == 0


def test_collect_calibration_targets_follow_pattern(face_model, eye_model):
    duration = 8000
    pattern = sweep_pattern(duration_ms=duration, rows=(0.5,))
    spec = SyntheticSceneSpec(
        gaze_track=[(t, pattern.x_at(t)) for t in range(0, duration + 1, 250)]
    )
    stream = render_synthetic(spec, 30.0, duration)
    samples = collect_calibration(stream, pattern, face_model, eye_model, min_samples=200)
    assert len(samples) >= 200
    # spot-check interpolation against the pattern itself
    for s in samples[:: len(samples) // 10]:
        t = s.patch.source_frame_index * 1000 / 30.0
        assert abs(s.target_x - pattern.x_at(t)) < 1e-6


def test_pattern_interpolation_at_knot():
    pattern = sweep_pattern(duration_ms=30000, rows=(0.25, 0.5, 0.75))
    t0, x0 = pattern.points[1][0], pattern.points[1][1]
    assert pattern.x_at(t0) == x0


# --------------------------------------------------------------- training

def constant_patch_sample(value, target, idx=0):
    rng = np.random.default_rng(idx)
    values = np.clip(rng.normal(value, 0.2, (32, 32)), 0, 1)
    patch = EyePatch(values=values, source_frame_index=idx, source_box=Rect(0, 0, 32, 32))
    return CalibSample(patch=patch, target_x=target)


def test_train_single_point_interpolation():
    sample = constant_patch_sample(0.5, 0.3)
    net = train([sample] * 200, epochs=40, learning_rate=0.05, batch_size=32, seed=0)
    assert abs(predict(net, sample.patch) - 0.3) < 0.02
    assert net.meta["final_mse"] < 1e-3


def test_zero_learning_rate_leaves_parameters():
    samples = [constant_patch_sample(0.5, 0.3, idx=i) for i in range(200)]
    net = train(samples, epochs=3, learning_rate=0.0, batch_size=32, seed=5)
    init = GazeNet.initialize(seed=5)
    for w0, w1 in zip(init.weights, net.weights):
        assert np.array_equal(w0, w1)
    for b0, b1 in zip(init.biases, net.biases):
        assert np.array_equal(b0, b1)


def test_train_requires_enough_samples():
    with pytest.raises(InsufficientSamples):
        train([constant_patch_sample(0.5, 0.3)] * 50)


def test_overfit_on_fifty_distinct_samples():
    rng = np.random.default_rng(3)
    samples = []
    for i in range(50):
        values = rng.uniform(0, 1, (32, 32))
        patch = EyePatch(values=values, source_frame_index=i, source_box=Rect(0, 0, 32, 32))
        samples.append(CalibSample(patch=patch, target_x=float(rng.uniform(0, 1))))
    net = train(samples, epochs=400, learning_rate=0.05, batch_size=16, seed=1, min_samples=50)
    assert net.meta["final_mse"] < 1e-3


def finite_difference_gradients(net, x, y, step=1e-5):
    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]

    def loss():
        pred = net.forward(x)
        diff = pred - y.reshape(-1, 1)
        return float(np.mean(diff * diff))

    for layer, w in enumerate(net.weights):
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            up = loss()
            w[idx] = orig - step
            down = loss()
            w[idx] = orig
            grads_w[layer][idx] = (up - down) / (2 * step)
    for layer, b in enumerate(net.biases):
        for idx in np.ndindex(b.shape):
            orig = b[idx]
            b[idx] = orig + step
            up = loss()
            b[idx] = orig - step
            down = loss()
            b[idx] = orig
            grads_b[layer][idx] = (up - down) / (2 * step)
    return grads_w, grads_b


def test_gradients_match_finite_differences_small_net():
    rng = np.random.default_rng(0)
    net = GazeNet.initialize(sizes=(16, 8, 4, 1), seed=2)
    x = rng.uniform(0, 1, (3, 16))
    y = rng.uniform(0, 1, 3)
    _, grad_w, grad_b = loss_and_gradients(net, x, y)
    fd_w, fd_b = finite_difference_gradients(net, x, y)
    for a, b in zip(grad_w + grad_b, fd_w + fd_b):
        denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
        rel = np.abs(a - b) / denom
        assert rel.max() < 1e-4


# -------------------------------------------------------------- predict

def test_predict_zero_net_gives_half():
    sizes = (1024, 500, 100, 1)
    weights = [np.zeros((a, b)) for a, b in zip(sizes, sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    net = GazeNet(weights, biases)
    patch = EyePatch(np.zeros((32, 32)), 0, Rect(0, 0, 32, 32))
    assert predict(net, patch) == 0.5


def test_predict_output_strictly_inside_unit_interval():
    net = GazeNet.initialize(seed=9)
    rng = np.random.default_rng(1)
    for _ in range(20):
        patch = EyePatch(rng.uniform(0, 1, (32, 32)), 0, Rect(0, 0, 32, 32))
        p = predict(net, patch)
        assert 0.0 < p < 1.0


def test_predict_shape_mismatch():
    net = GazeNet.initialize(sizes=(16, 8, 4, 1), seed=0)
    patch = EyePatch(np.zeros((32, 32)), 0, Rect(0, 0, 32, 32))
    with pytest.raises(ShapeMismatch):
        predict(net, patch)


def test_gazenet_json_round_trip(tmp_path):
    net = GazeNet.initialize(sizes=(16, 8, 4, 1), seed=4)
    net.meta["final_mse"] = 0.01
    path = tmp_path / "net.json"
    net.save(path)
    again = GazeNet.load(path)
    for w0, w1 in zip(net.weights, again.weights):
        assert np.array_equal(w0, w1)
    assert again.meta["final_mse"] == 0.01


# ---------------------------------------------------------------- track

def test_track_blank_frames_all_invalid(face_model, eye_model):
    net = GazeNet.initialize(seed=0)
    frames = [
        Frame(i, i * 33, 64, 48, np.full((48, 64, 3), 90, dtype=np.uint8)) for i in range(5)
    ]
    samples = track(frames, net, face_model, eye_model)
    assert len(samples) == 5
    assert all(not s.valid and s.invalid_reason == "no_face" for s in samples)


def test_track_two_faces_invalid(face_model, eye_model):
    net = GazeNet.initialize(seed=0)
    spec = SyntheticSceneSpec(
        gaze_track=[(0, 0.5)],
        face_box_norm=(0.05, 0.2, 0.36, 0.52),
        extra_face_boxes=[(0.57, 0.2, 0.36, 0.52)],
    )
    frames = [render_frame(spec, i, i * 33) for i in range(3)]
    samples = track(frames, net, face_model, eye_model)
    assert all(s.invalid_reason == "multiple_faces" for s in samples)


def test_track_deterministic(face_model, eye_model):
    net = GazeNet.initialize(seed=0)
    spec = SyntheticSceneSpec(gaze_track=[(0, 0.2), (600, 0.8)], noise_sigma=3.0)
    frames_a = list(render_synthetic(spec, 30.0, 600, seed=3))
    frames_b = list(render_synthetic(spec, 30.0, 600, seed=3))
    assert track(frames_a, net, face_model, eye_model) == track(
        frames_b, net, face_model, eye_model
    )


def test_gaze_sample_invariants():
    with pytest.raises(ValueError):
        GazeSample(0, 0, 0.5, False, "no_face")
    with pytest.raises(ValueError):
        GazeSample(0, 0, None, True, None)


# ------------------------------------------------------------- assessment

def test_assess_accuracy_perfect():
    points = [(0.2, 0.5), (0.8, 0.5)]
    report = assess_accuracy(points, [0.2, 0.8])
    assert report.mean_abs_error_pct == 0.0
    assert report.lr_discrimination_pct == 100.0


def test_assess_accuracy_single_bad_point():
    report = assess_accuracy([(0.25, 0.5)], [0.75])
    assert report.mean_abs_error_pct == pytest.approx(50.0)
    assert report.lr_discrimination_pct == 0.0


def test_assess_accuracy_length_mismatch():
    with pytest.raises(LengthMismatch):
        assess_accuracy([(0.2, 0.5)], [0.2, 0.4])


def test_click_points_minimal_split():
    points = generate_click_points(2, seed=0)
    sides = sorted(x < 0.5 for x, _ in points)
    assert sides == [False, True]


def test_click_points_hundred_split():
    points = generate_click_points(100, seed=1)
    left = sum(1 for x, _ in points if x < 0.5)
    assert left == 50
    assert all(x < 0.45 + 1e-9 or x > 0.55 - 1e-9 for x, _ in points)


def test_click_points_deterministic():
    assert generate_click_points(10, seed=42) == generate_click_points(10, seed=42)
    assert generate_click_points(10, seed=42) != generate_click_points(10, seed=43)


def test_click_points_odd_count():
    with pytest.raises(OddCount):
        generate_click_points(7)


def test_accuracy_report_csv():
    report = assess_accuracy([(0.2, 0.5)], [0.25])
    csv = report.to_csv()
    assert csv.startswith("true_x,predicted_x\n")
    assert "0.2,0.25" in csv


def test_zero_output_weights_make_side_bias_invariant():
    # with a zero output weight vector the prediction is sigmoid(output bias),
    # so shifting the hidden biases cannot move any prediction across 0.5
    sizes = (16, 8, 4, 1)
    net = GazeNet.initialize(sizes=sizes, seed=3)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.3
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (5, 16))
    before = net.forward(x)
    net.biases[0] += 1.7
    net.biases[1] += -0.9
    after = net.forward(x)
    assert np.array_equal(before > 0.5, after > 0.5)
