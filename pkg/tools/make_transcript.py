"""Record a wire-message transcript of a synthetic session for the dashboard tests.

Runs a compressed live session over a loopback channel and writes every
message the management node receives (plus the plan push) as a JSON array.
Run from the repo root:  python tools/make_transcript.py
"""
from __future__ import annotations

import json
import sys
import threading
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vpctrack.frames import SyntheticSceneSpec, render_synthetic
from vpctrack.gaze import sweep_pattern
from vpctrack.haar import load_cascade
from vpctrack.nodes import ManagementNode, MeasurementConfig, MeasurementNode, MonitorHooks
from vpctrack.pipeline import calibration_scene
from vpctrack.session import ImageRef, PairSpec, SessionPlan, build_plan
from vpctrack.wire import loopback_pair

CASCADES = Path(__file__).resolve().parent.parent / "src" / "vpctrack" / "cascades"
OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def fast_plan(seed=21, familiar_ms=250, pair_ms=350, blank_ms=50):
    full = build_plan(
        [ImageRef(f"fam{i:02d}", f"fam{i:02d}.png", "familiar", f"What is shown? #{i}") for i in range(12)],
        [ImageRef(f"nov{i:02d}", f"nov{i:02d}.png", "novel") for i in range(24)],
        seed=seed,
    )
    pairs = [
        PairSpec(p.pair_id, p.kind, p.left_image, p.right_image, pair_ms, blank_ms)
        for p in full.test_pairs
    ]
    return SessionPlan(full.familiarization, pairs, seed, familiarization_ms=familiar_ms)


def main():
    face = load_cascade(CASCADES / "synthetic_face.xml")
    eye = load_cascade(CASCADES / "synthetic_eye.xml")
    plan = fast_plan()
    pattern = sweep_pattern(duration_ms=8000, rows=(0.5,))
    spec = SyntheticSceneSpec(gaze_track=[(0, 0.25), (60000, 0.75)], pulse_hz=1.1)
    calib_spec = calibration_scene(spec, pattern)

    def frame_source(phase, duration_ms):
        if phase == "calibration":
            return render_synthetic(calib_spec, 30.0, duration_ms, seed=4)
        return render_synthetic(spec, 30.0, duration_ms, seed=5)

    a, b = loopback_pair()
    transcript = []

    def tap(msg):
        transcript.append(
            {"type": msg.type, "seq": msg.seq, "t_ms": msg.t_ms, "payload": msg.payload}
        )

    measurement = MeasurementNode(
        a,
        MeasurementConfig(
            face_model=face,
            eye_model=eye,
            train=dict(epochs=25, learning_rate=0.03, batch_size=32, seed=0),
            pattern=pattern,
        ),
        frame_source,
    )
    management = ManagementNode(b, patient_id="p1", hooks=MonitorHooks(on_any=tap))
    codes = {}
    thread = threading.Thread(target=lambda: codes.setdefault("m", measurement.run()))
    thread.start()
    management.accept()
    management.push_plan(plan)
    transcript.append(
        {"type": "PLAN_PUSH", "seq": 0, "t_ms": 0, "payload": {"plan": plan.to_json(), "start": False}}
    )
    calib = management.start_calibration()
    transcript.append({"type": "CALIB_DONE", "seq": 0, "t_ms": 0, "payload": calib})
    management.start_session()
    envelope = management.serve_session(session_id="fixture")
    thread.join()
    a.close()
    b.close()

    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "session_transcript.json").write_text(json.dumps(transcript))
    (OUT / "stored_session.json").write_text(json.dumps(envelope.to_json(), indent=1))
    print(
        f"wrote {len(transcript)} messages, result status {envelope.status}, "
        f"exit code {codes.get('m')}"
    )


if __name__ == "__main__":
    main()
