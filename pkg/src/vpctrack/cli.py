"""Command-line entry points for the two nodes and the offline tools."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__

DEFAULT_PORT = 47113
CASCADE_DIR = Path(__file__).resolve().parent / "cascades"


def _load_config(args) -> dict:
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "func"):
            config[key] = value
    config.setdefault("store", os.environ.get("VPC_STORE_ROOT", "./vpc-store"))
    return config


def _models(config):
    from .haar import load_cascade

    face_path = Path(config.get("face_cascade", CASCADE_DIR / "synthetic_face.xml"))
    eye_path = Path(config.get("eye_cascade", CASCADE_DIR / "synthetic_eye.xml"))
    for path in (face_path, eye_path):
        if not path.is_file():
            raise FileNotFoundError(f"cascade file not found: {path}")
    return load_cascade(face_path), load_cascade(eye_path)


def _frame_source_from_config(config, pattern):
    """Returns frame_source(phase, duration_ms) plus the scene fps."""
    from .frames import StreamManifest, SyntheticSceneSpec, open_stream, render_synthetic
    from .pipeline import calibration_scene

    frames_path = Path(config["frames"])
    doc = json.loads(frames_path.read_text())
    fps = float(config.get("fps", doc.get("fps", 30.0)))
    seed = int(config.get("seed", 0))
    if "frames" in doc:  # recorded-stream manifest
        manifest = StreamManifest.from_json(doc)

        def source(phase, duration_ms):
            return open_stream(manifest, base_dir=frames_path.parent)

        return source, fps
    spec = SyntheticSceneSpec.from_json(doc)

    def source(phase, duration_ms):
        if phase == "calibration":
            return render_synthetic(calibration_scene(spec, pattern), fps, duration_ms, seed=seed)
        return render_synthetic(spec, fps, duration_ms, seed=seed + 1)

    return source, fps


def _parse_endpoint(value: str) -> tuple[str, int]:
    if ":" in value:
        host, port = value.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return value, DEFAULT_PORT


def cmd_measure(args) -> int:
    config = _load_config(args)
    from .gaze import sweep_pattern

    pattern = sweep_pattern(duration_ms=int(float(config.get("calib_seconds", 30)) * 1000))
    try:
        face_model, eye_model = _models(config)
        frame_source, fps = _frame_source_from_config(config, pattern)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    from .nodes import TRAIN_DEFAULTS, MeasurementConfig, MeasurementNode, connect
    from .wire import ConnectionLost

    host, port = _parse_endpoint(config.get("connect", f"127.0.0.1:{DEFAULT_PORT}"))
    try:
        channel = connect(host, port)
    except ConnectionLost as exc:
        print(f"connection failure: {exc}", file=sys.stderr)
        return 3
    train = dict(TRAIN_DEFAULTS)
    train["epochs"] = int(config.get("train_epochs", train["epochs"]))
    train["seed"] = int(config.get("seed", train["seed"]))
    node = MeasurementNode(
        channel,
        MeasurementConfig(
            face_model=face_model,
            eye_model=eye_model,
            fps=fps,
            mode=config.get("mode", "live"),
            train=train,
            pattern=pattern,
        ),
        frame_source,
    )
    code = node.run()
    channel.close()
    return code


def _load_pools(config):
    from .session import ImageRef

    pools_path = config.get("pools")
    if pools_path:
        doc = json.loads(Path(pools_path).read_text())
        familiar = [
            ImageRef(d["id"], d.get("path", ""), "familiar", d.get("prompt", ""))
            for d in doc["familiar"]
        ]
        novel = [ImageRef(d["id"], d.get("path", ""), "novel") for d in doc["novel"]]
        return familiar, novel
    familiar = [ImageRef(f"familiar{i:02d}", f"familiar{i:02d}.png", "familiar") for i in range(12)]
    novel = [ImageRef(f"novel{i:02d}", f"novel{i:02d}.png", "novel") for i in range(24)]
    return familiar, novel


def cmd_manage(args) -> int:
    config = _load_config(args)
    from .nodes import ManagementNode, MonitorHooks, listen_one
    from .session import build_plan
    from .store import PatientRecord, Store
    from .wire import ProtocolFailed, ConnectionLost

    try:
        face_model, eye_model = _models(config)
    except FileNotFoundError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    host, port = _parse_endpoint(config.get("listen", f"0.0.0.0:{DEFAULT_PORT}"))
    store = Store(config["store"])
    patient_id = config.get("patient", "anonymous")
    try:
        store.get_patient(patient_id)
    except Exception:
        store.put_patient(PatientRecord(patient_id=patient_id))
    if config.get("plan"):
        from .session import SessionPlan

        plan = SessionPlan.from_json(json.loads(Path(config["plan"]).read_text()))
    else:
        familiar, novel = _load_pools(config)
        plan = build_plan(familiar, novel, seed=int(config.get("seed", 0)))

    gateway = None
    hooks = MonitorHooks()
    if not config.get("no_ui"):
        gateway = _start_gateway(config, store)
        hooks = MonitorHooks(
            on_any=lambda msg: gateway.publish(
                {"type": msg.type, "seq": msg.seq, "t_ms": msg.t_ms, "payload": msg.payload}
            )
        )
    try:
        try:
            channel = listen_one(host, port)
        except OSError as exc:
            print(f"cannot listen on {host}:{port}: {exc}", file=sys.stderr)
            return 1
        management = ManagementNode(
            channel,
            store=store,
            patient_id=patient_id,
            face_model=face_model,
            eye_model=eye_model,
            hooks=hooks,
        )
        if gateway is not None:
            gateway.on_command = _command_sink(management, store)
        management.accept()
        management.push_plan(plan)
        management.start_calibration()
        management.start_session()
        envelope = management.serve_session()
        channel.close()
        print(f"session {envelope.session_id} stored with status {envelope.status}")
        return 0
    except (ProtocolFailed, ConnectionLost) as exc:
        print(f"session failed: {exc}", file=sys.stderr)
        return 3
    finally:
        if gateway is not None:
            gateway.stop()


def _start_gateway(config, store):
    from .gateway import GatewayServer

    static = config.get("ui_assets")
    api = {
        "/api/patients": lambda params: [p.to_json() for p in store.list_patients()],
        "/api/sessions": lambda params: [
            e.to_json() for e in store.query_sessions(params.get("patient", "anonymous"))
        ],
    }
    gateway = GatewayServer(
        host=config.get("ui_host", "127.0.0.1"),
        port=int(config.get("ui_port", 8766)),
        static_dir=Path(static) if static else None,
        api=api,
    )
    gateway.start()
    print(f"ui gateway on ws://{gateway.host}:{gateway.port}/ws")
    return gateway


def _command_sink(management, store):
    from .store import PatientRecord

    def on_command(doc: dict) -> dict:
        kind = doc.get("type")
        payload = doc.get("payload", {})
        try:
            if kind == "ABORT":
                management.abort()
            elif kind == "CALIB_START":
                management.start_calibration()
            elif kind == "PLAN_PUSH":
                from .session import SessionPlan

                if "plan" in payload:
                    management.plan = SessionPlan.from_json(payload["plan"])
                management.push_plan(management.plan, start=payload.get("start", False))
            elif kind == "PATIENT_PUT":
                store.put_patient(PatientRecord.from_json(payload["patient"]), update=True)
            else:
                return {"type": "ERROR", "payload": {"code": "unknown_command", "command": kind}}
            return {"type": "ACK", "payload": {"command": kind}}
        except Exception as exc:
            return {"type": "ERROR", "payload": {"code": "command_failed", "detail": str(exc)}}

    return on_command


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    from .frames import SyntheticSceneSpec, render_synthetic
    from .gaze import InsufficientSamples, sweep_pattern
    from .pipeline import calibration_scene, run_calibration, run_click_assessment

    try:
        face_model, eye_model = _models(config)
        doc = json.loads(Path(config["frames"]).read_text())
        spec = SyntheticSceneSpec.from_json(doc)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    fps = float(config.get("fps", 30.0))
    seed = int(config.get("seed", 0))
    pattern = sweep_pattern()
    calib_spec = calibration_scene(spec, pattern)
    span = pattern.span()
    frames = render_synthetic(calib_spec, fps, span[1] - span[0] + 1, seed=seed)
    try:
        net = run_calibration(frames, pattern, face_model, eye_model, seed=seed)
    except InsufficientSamples as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 2

    def scene_for_gaze(x):
        return SyntheticSceneSpec(
            gaze_track=[(0, x)],
            pulse_hz=spec.pulse_hz,
            face_box_norm=spec.face_box_norm,
            noise_sigma=spec.noise_sigma,
            width=spec.width,
            height=spec.height,
        )

    report = run_click_assessment(
        net, face_model, eye_model, scene_for_gaze,
        n_points=int(config.get("points", 100)), fps=fps, seed=seed,
    )
    out = Path(config.get("out", "accuracy_report"))
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out}.json").write_text(json.dumps(report.to_json(), indent=1))
    Path(f"{out}.csv").write_text(report.to_csv())
    net.save(f"{out}.gazenet.json")
    print(
        f"{report.n_points} points: mean abs error {report.mean_abs_error_pct:.2f}% of screen width, "
        f"left/right discrimination {report.lr_discrimination_pct:.1f}%"
    )
    return 0


def cmd_process_batch(args) -> int:
    config = _load_config(args)
    from .archive import ArchiveError
    from .nodes import process_batch_archive
    from .pipeline import trace_csv
    from .session import SessionPlan

    try:
        face_model, eye_model = _models(config)
        archive = Path(config["archive"]).read_bytes()
        meta = json.loads(Path(config["meta"]).read_text())
        plan = SessionPlan.from_json(json.loads(Path(config["plan"]).read_text()))
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    if not archive:
        print("archive is empty", file=sys.stderr)
        return 2
    try:
        result, records, net = process_batch_archive(archive, meta, plan, face_model, eye_model)
    except ArchiveError as exc:
        print(f"archive error: {exc}", file=sys.stderr)
        return 2
    out = Path(config.get("out", "./batch-out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(result.to_json(), indent=1))
    (out / "gaze.csv").write_text(trace_csv(records))
    net.save(out / "gazenet.json")
    print(f"processed {len(records)} frames; result status {result.status}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="vpctrack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vpctrack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    measure = sub.add_parser("measure", help="run the measurement node")
    measure.add_argument("--config")
    measure.add_argument("--connect", help="management endpoint host:port")
    measure.add_argument("--frames", help="synthetic spec JSON or stream manifest JSON")
    measure.add_argument("--mode", choices=["live", "batch"])
    measure.add_argument("--seed", type=int)
    measure.add_argument("--fps", type=float)
    measure.add_argument("--calib-seconds", dest="calib_seconds", type=float)
    measure.add_argument("--train-epochs", dest="train_epochs", type=int)
    measure.add_argument("--face-cascade", dest="face_cascade")
    measure.add_argument("--eye-cascade", dest="eye_cascade")
    measure.set_defaults(func=cmd_measure)

    manage = sub.add_parser("manage", help="run the management node")
    manage.add_argument("--config")
    manage.add_argument("--listen", help="listen endpoint host:port")
    manage.add_argument("--store")
    manage.add_argument("--patient")
    manage.add_argument("--pools", help="image pool manifest JSON")
    manage.add_argument("--plan", help="explicit session plan JSON (overrides --pools)")
    manage.add_argument("--seed", type=int)
    manage.add_argument("--no-ui", dest="no_ui", action="store_const", const=True)
    manage.add_argument("--ui-port", dest="ui_port", type=int)
    manage.add_argument("--ui-assets", dest="ui_assets")
    manage.set_defaults(func=cmd_manage)

    calibrate = sub.add_parser("calibrate", help="calibration plus accuracy assessment")
    calibrate.add_argument("--config")
    calibrate.add_argument("--frames", required=False)
    calibrate.add_argument("--points", type=int)
    calibrate.add_argument("--seed", type=int)
    calibrate.add_argument("--fps", type=float)
    calibrate.add_argument("--out")
    calibrate.set_defaults(func=cmd_calibrate)

    batch = sub.add_parser("process-batch", help="offline pipeline for transferred archives")
    batch.add_argument("--config")
    batch.add_argument("--archive")
    batch.add_argument("--meta")
    batch.add_argument("--plan")
    batch.add_argument("--out")
    batch.set_defaults(func=cmd_process_batch)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
