"""Measurement and management node orchestration over the wire protocol.

Control flow: the management node pushes the plan, starts calibration, then
starts the session. In live mode the measurement node processes every frame,
streams gaze ticks and stimulus transitions, and sends the scored result. In
batch mode it only displays and records; the recorded archive (calibration
plus session frames) is transferred afterwards and the management node runs
the identical pipeline offline, so per-frame outputs match the live path
bit for bit.
"""
from __future__ import annotations

import json
import select
import socket
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .frames import Frame
from .gaze import CalibPattern, GazeNet, InsufficientSamples, sweep_pattern
from .haar import CascadeModel
from .pipeline import (
    ProcessedFrame,
    process_stream,
    record_archive,
    replay_archive,
    run_calibration,
    trace_csv,
)
from .session import SessionEngine, SessionPlan, SessionResult, plan_schedule
from .store import SessionEnvelope, Store
from .wire import (
    ConnectionLost,
    MessageChannel,
    ProtocolFailed,
    WireMessage,
    hello_client,
    hello_server,
    receive_batch,
    send_batch,
)

TRAIN_DEFAULTS = dict(epochs=400, learning_rate=0.02, batch_size=32, seed=0)
ACK_TIMEOUT_MS = 10000


class AckTracker:
    """Outstanding-acknowledgement bookkeeping for one send direction."""

    def __init__(self, clock: Callable[[], int]):
        self.clock = clock
        self.pending: dict[int, int] = {}

    def sent(self, msg: WireMessage) -> None:
        if msg.type != "ACK":
            self.pending[msg.seq] = msg.t_ms

    def acked(self, ack: WireMessage) -> None:
        self.pending.pop(ack.payload.get("for_seq"), None)

    def check(self) -> None:
        now = self.clock()
        stale = [seq for seq, t in self.pending.items() if now - t > ACK_TIMEOUT_MS]
        if stale:
            raise ConnectionLost(f"messages {stale} unacknowledged for {ACK_TIMEOUT_MS} ms")


def _poll(channel: MessageChannel) -> list[WireMessage]:
    """Drain without blocking: anything already buffered or readable now."""
    out = []
    while True:
        readable, _, _ = select.select([channel.sock], [], [], 0)
        if not readable:
            return out
        try:
            out.append(channel.recv(timeout_s=1.0))
        except ConnectionLost:
            if out:
                return out
            raise


@dataclass
class MeasurementConfig:
    face_model: CascadeModel
    eye_model: CascadeModel
    fps: float = 30.0
    mode: str = "live"  # "live" | "batch"
    chunk_size: int = 256 * 1024
    train: dict = field(default_factory=lambda: dict(TRAIN_DEFAULTS))
    pattern: Optional[CalibPattern] = None


class MeasurementNode:
    """Patient-facing node: calibration on command, then the session."""

    def __init__(
        self,
        channel: MessageChannel,
        config: MeasurementConfig,
        frame_source: Callable[[str, int], Iterable[Frame]],
    ):
        """frame_source(phase, duration_ms) yields the frames of that phase;
        phase is "calibration" or "session"."""
        self.channel = channel
        self.config = config
        self.frame_source = frame_source
        self.acks = AckTracker(channel.clock)
        self.plan: Optional[SessionPlan] = None
        self.net: Optional[GazeNet] = None
        self.calib_frames: Optional[list[Frame]] = None
        self.pattern = config.pattern or sweep_pattern()

    def _send(self, type_: str, payload: dict) -> None:
        self.acks.sent(self.channel.send(type_, payload))

    def run(self) -> int:
        """Protocol loop; returns the process exit code."""
        try:
            hello_client(self.channel, "measurement")
            while True:
                msg = self.channel.recv(timeout_s=60.0)
                if msg.type == "ACK":
                    self.acks.acked(msg)
                elif msg.type == "PLAN_PUSH":
                    self.plan = SessionPlan.from_json(msg.payload["plan"])
                    self.channel.ack(msg)
                    if msg.payload.get("start"):
                        return self._run_session()
                elif msg.type == "CALIB_START":
                    self.channel.ack(msg)
                    self._run_calibration()
                elif msg.type == "ABORT":
                    self.channel.ack(msg)
                    return 2
                else:
                    self._send("ERROR", {"code": "protocol", "detail": f"unexpected {msg.type}"})
                    return 3
        except (ConnectionLost, ProtocolFailed):
            return 3

    def _run_calibration(self) -> None:
        span = self.pattern.span()
        duration = span[1] - span[0] + 1
        frames = self.frame_source("calibration", duration)
        if self.config.mode == "batch":
            self.calib_frames = list(frames)
            self._send(
                "CALIB_DONE",
                {"recorded": True, "n_frames": len(self.calib_frames), "pattern": self.pattern.points},
            )
            return
        try:
            self.net = run_calibration(
                frames, self.pattern, self.config.face_model, self.config.eye_model,
                **self.config.train,
            )
        except InsufficientSamples as exc:
            self._send("ERROR", {"code": "InsufficientSamples", "detail": str(exc)})
            return
        self._send(
            "CALIB_DONE",
            {
                "final_mse": self.net.meta["final_mse"],
                "n_samples": self.net.meta["n_samples"],
                "pattern": self.pattern.points,
            },
        )

    def _session_duration_ms(self) -> int:
        return self.plan.familiarization_total_ms() + self.plan.test_total_ms() + 2000

    def _run_session(self) -> int:
        if self.plan is None:
            self._send("ERROR", {"code": "protocol", "detail": "no plan pushed"})
            return 3
        if self.config.mode == "batch":
            return self._run_session_batch()
        return self._run_session_live()

    def _run_session_live(self) -> int:
        if self.net is None:
            self._send("ERROR", {"code": "protocol", "detail": "calibration required"})
            return 3
        engine = SessionEngine(self.plan, on_event=self._engine_event)
        self._current_pair: Optional[str] = None
        records: list[ProcessedFrame] = []
        frames = self.frame_source("session", self._session_duration_ms())
        aborted = False
        try:
            for record in process_stream(
                frames, self.config.face_model, self.config.eye_model, self.net, self.config.fps
            ):
                for msg in _poll(self.channel):
                    if msg.type == "ACK":
                        self.acks.acked(msg)
                    elif msg.type == "ABORT":
                        self.channel.ack(msg)
                        engine.abort(record.sample.t_ms)
                        aborted = True
                if aborted:
                    break
                engine.feed(record.sample, record.green_mean)
                records.append(record)
                self._send_tick(record)
                if engine.done:
                    break
        except ConnectionLost:
            return 3
        result = engine.finish()
        ppg_lines = ["t_ms,value"] + [
            f"{t},{v!r}" for t, v in engine.greens if v is not None
        ]
        try:
            self._send(
                "RESULT",
                {
                    "result": result.to_json(),
                    "trace_csv": trace_csv(records),
                    "ppg_csv": "\n".join(ppg_lines) + "\n",
                    "net_meta": self.net.meta,
                },
            )
            self._await_acks()
        except (ConnectionLost, ProtocolFailed):
            return 3
        return 2 if result.status == "aborted" else 0

    def _run_session_batch(self) -> int:
        schedule = plan_schedule(self.plan)
        boundaries = []
        acc = 0
        for item in schedule:
            boundaries.append((acc, item))
            acc += item.duration_ms
        total = acc
        frames = []
        item_idx = -1
        aborted = False
        for frame in self.frame_source("session", total + 2000):
            for msg in _poll(self.channel):
                if msg.type == "ACK":
                    self.acks.acked(msg)
                elif msg.type == "ABORT":
                    self.channel.ack(msg)
                    aborted = True
            if aborted:
                break
            while item_idx + 1 < len(boundaries) and frame.timestamp_ms >= boundaries[item_idx + 1][0]:
                item_idx += 1
                self._emit_schedule_stim(boundaries[item_idx][1], frame.timestamp_ms)
            frames.append(frame)
            if frame.timestamp_ms >= total:
                break
        calib = self.calib_frames or []
        session_start = calib[-1].timestamp_ms + 1 if calib else 0
        stream = calib + [
            Frame(
                index=len(calib) + f.index,
                timestamp_ms=session_start + f.timestamp_ms,
                width=f.width,
                height=f.height,
                pixels=f.pixels,
            )
            for f in frames
        ]
        archive = record_archive(stream, self.config.fps)
        meta = {
            "pattern": self.pattern.points,
            "session_start_ms": session_start,
            "plan_hash": self.plan.plan_hash(),
            "train": self.config.train,
            "aborted": aborted,
        }
        try:
            send_batch(self.channel, archive, self.config.chunk_size, meta)
        except (ConnectionLost, ProtocolFailed):
            return 3
        return 2 if aborted else 0

    def _emit_schedule_stim(self, item, t_ms: int) -> None:
        if item.kind == "familiar":
            payload = {"phase": "familiarization", "image_id": item.image.id, "prompt": item.image.prompt}
        elif item.kind == "pair":
            payload = {
                "phase": "test",
                "pair_id": item.pair.pair_id,
                "left_image_id": item.pair.left_image.id,
                "right_image_id": item.pair.right_image.id,
            }
        else:
            payload = {"phase": "blank", "pair_id": item.pair.pair_id}
        self._send("STIM_SHOW", payload)

    def _engine_event(self, kind: str, t_ms: int, payload: dict) -> None:
        if kind == "stim":
            self._current_pair = payload.get("pair_id") or payload.get("image_id")
            self._send("STIM_SHOW", dict(payload, t_ms=t_ms))
        elif kind == "status":
            self._send("STATUS", dict(payload, t_ms=t_ms))
        elif kind == "session_end":
            self._current_pair = None

    def _send_tick(self, record: ProcessedFrame) -> None:
        s = record.sample
        payload = {
            "frame_index": s.frame_index,
            "t_ms": s.t_ms,
            "gaze_x": s.gaze_x,
            "valid": s.valid,
            "invalid_reason": s.invalid_reason,
            "bpm": record.bpm,
            "stimulus_pair_id": self._current_pair,
        }
        self._send("GAZE_TICK", payload)

    def _await_acks(self, timeout_s: float = 5.0) -> None:
        deadline = time.monotonic() + timeout_s
        while self.acks.pending and time.monotonic() < deadline:
            msg = self.channel.recv(timeout_s=timeout_s)
            if msg.type == "ACK":
                self.acks.acked(msg)


@dataclass
class MonitorHooks:
    """Callbacks the gateway or tests hang on the management pump."""

    on_tick: Callable[[dict], None] = lambda payload: None
    on_stim: Callable[[dict], None] = lambda payload: None
    on_status: Callable[[dict], None] = lambda payload: None
    on_any: Callable[[WireMessage], None] = lambda msg: None


class ManagementNode:
    """Staff-facing node: configuration, monitoring, scoring, persistence."""

    def __init__(
        self,
        channel: MessageChannel,
        store: Optional[Store] = None,
        patient_id: str = "anonymous",
        face_model: Optional[CascadeModel] = None,
        eye_model: Optional[CascadeModel] = None,
        hooks: Optional[MonitorHooks] = None,
        corrupt_chunks: Optional[set[int]] = None,
    ):
        self.channel = channel
        self.store = store
        self.patient_id = patient_id
        self.face_model = face_model
        self.eye_model = eye_model
        self.hooks = hooks or MonitorHooks()
        self.acks = AckTracker(channel.clock)
        self.handshake = None
        self.plan: Optional[SessionPlan] = None
        self.calib_meta: Optional[dict] = None
        self.tick_latencies_ms: list[int] = []
        self.stim_order: list[str] = []
        self.corrupt_chunks = corrupt_chunks
        self.offline_records: Optional[list[ProcessedFrame]] = None

    def accept(self) -> None:
        self.handshake = hello_server(self.channel, "management")

    def _send(self, type_: str, payload: dict) -> None:
        self.acks.sent(self.channel.send(type_, payload))

    def push_plan(self, plan: SessionPlan, start: bool = False) -> None:
        self.plan = plan
        self._send("PLAN_PUSH", {"plan": plan.to_json(), "start": bool(start)})

    def start_calibration(self) -> dict:
        self._send("CALIB_START", {})
        while True:
            msg = self.channel.recv(timeout_s=600.0)
            if msg.type == "ACK":
                self.acks.acked(msg)
            elif msg.type == "CALIB_DONE":
                self.channel.ack(msg)
                self.calib_meta = msg.payload
                return msg.payload
            elif msg.type == "ERROR":
                self.channel.ack(msg)
                raise ProtocolFailed(f"calibration failed: {msg.payload}")
            else:
                self._dispatch(msg)

    def start_session(self) -> None:
        if self.plan is None:
            raise ProtocolFailed("no plan configured")
        self._send("PLAN_PUSH", {"plan": self.plan.to_json(), "start": True})

    def abort(self) -> None:
        self._send("ABORT", {})

    def _dispatch(self, msg: WireMessage) -> None:
        self.hooks.on_any(msg)
        if msg.type == "GAZE_TICK":
            self.channel.ack(msg)
            offset = self.handshake.clock_offset_ms if self.handshake else 0
            self.tick_latencies_ms.append(self.channel.clock() - (msg.t_ms + offset))
            self.hooks.on_tick(msg.payload)
        elif msg.type == "STIM_SHOW":
            self.channel.ack(msg)
            key = msg.payload.get("pair_id") or msg.payload.get("image_id")
            if msg.payload.get("phase") != "blank" and key:
                self.stim_order.append(key)
            self.hooks.on_stim(msg.payload)
        elif msg.type == "STATUS":
            self.channel.ack(msg)
            self.hooks.on_status(msg.payload)
        elif msg.type == "ERROR":
            self.channel.ack(msg)
            raise ProtocolFailed(f"peer error: {msg.payload}")
        else:
            self.channel.ack(msg)

    def serve_session(self, session_id: Optional[str] = None) -> SessionEnvelope:
        """Pump messages until the session result is available, then persist."""
        session_id = session_id or uuid.uuid4().hex[:12]
        while True:
            msg = self.channel.recv(timeout_s=600.0)
            if msg.type == "ACK":
                self.acks.acked(msg)
            elif msg.type == "RESULT":
                self.hooks.on_any(msg)
                self.channel.ack(msg)
                return self._persist_live(session_id, msg.payload)
            elif msg.type == "BATCH_BEGIN":
                archive, meta = receive_batch(
                    self.channel, corrupt_chunks=self.corrupt_chunks, first=msg
                )
                return self._persist_batch(session_id, archive, meta)
            else:
                self._dispatch(msg)

    def _persist_live(self, session_id: str, payload: dict) -> SessionEnvelope:
        result = SessionResult.from_json(payload["result"])
        result.patient_id = self.patient_id
        envelope = SessionEnvelope(
            session_id=session_id,
            patient_id=self.patient_id,
            plan=self.plan,
            result=result,
            status=result.status,
            started_at=time.time(),
        )
        if self.store is not None:
            self.store.put_session(
                envelope, gaze_csv=payload.get("trace_csv"), ppg_csv=payload.get("ppg_csv")
            )
        return envelope

    def _persist_batch(self, session_id: str, archive: bytes, meta: dict) -> SessionEnvelope:
        result, records, net = process_batch_archive(
            archive, meta, self.plan, self.face_model, self.eye_model
        )
        result.patient_id = self.patient_id
        self.offline_records = records
        envelope = SessionEnvelope(
            session_id=session_id,
            patient_id=self.patient_id,
            plan=self.plan,
            result=result,
            status=result.status,
            started_at=time.time(),
        )
        if self.store is not None:
            self.store.put_session(
                envelope,
                gaze_csv=trace_csv(records),
                gaze_net_json=net.to_json(),
                batch_archive=archive,
            )
        return envelope


def process_batch_archive(
    archive: bytes,
    meta: dict,
    plan: SessionPlan,
    face_model: CascadeModel,
    eye_model: CascadeModel,
) -> tuple[SessionResult, list[ProcessedFrame], GazeNet]:
    """Offline pipeline for a transferred recording.

    Trains the calibration network on the recorded pursuit frames, then runs
    the identical per-frame pipeline over the session frames and scores them
    through the same engine the live path uses.
    """
    manifest, frames = replay_archive(archive)
    session_start = meta["session_start_ms"]
    pattern = CalibPattern([tuple(p) for p in meta["pattern"]])
    calib_frames = []
    session_frames = []
    for frame in frames:
        if frame.timestamp_ms < session_start:
            calib_frames.append(frame)
        else:
            session_frames.append(
                Frame(
                    index=frame.index - len(calib_frames),
                    timestamp_ms=frame.timestamp_ms - session_start,
                    width=frame.width,
                    height=frame.height,
                    pixels=frame.pixels,
                )
            )
    net = run_calibration(calib_frames, pattern, face_model, eye_model, **meta["train"])
    engine = SessionEngine(plan)
    records = []
    for record in process_stream(session_frames, face_model, eye_model, net, manifest.fps):
        engine.feed(record.sample, record.green_mean)
        records.append(record)
        if engine.done:
            break
    result = engine.finish()
    if meta.get("aborted"):
        result.status = "aborted"
    return result, records, net


def listen_one(host: str, port: int) -> MessageChannel:
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    conn, _ = server.accept()
    server.close()
    return MessageChannel(conn)


def connect(host: str, port: int, attempts: int = 40, delay_s: float = 0.25) -> MessageChannel:
    last: Optional[Exception] = None
    for _ in range(attempts):
        try:
            sock = socket.create_connection((host, port), timeout=5.0)
            return MessageChannel(sock)
        except OSError as exc:
            last = exc
            time.sleep(delay_s)
    raise ConnectionLost(f"cannot connect to {host}:{port}: {last}")
