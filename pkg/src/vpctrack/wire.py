"""Wire protocol between the measurement and management nodes.

Messages are canonical JSON documents framed by a 4-byte big-endian length.
Each direction numbers its messages with a strictly increasing sequence;
every non-ACK message is acknowledged by the peer. Binary payloads (batch
chunks) travel base64-encoded with a CRC32 per chunk.
"""
from __future__ import annotations

import base64
import json
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

PROTOCOL_VERSION = "1"
DEFAULT_PORT = 47113
MAX_FRAME_BYTES = 16 * 1024 * 1024
HEADER = struct.Struct(">I")

MESSAGE_TYPES = frozenset(
    {
        "HELLO",
        "PLAN_PUSH",
        "CALIB_START",
        "CALIB_DONE",
        "STIM_SHOW",
        "GAZE_TICK",
        "STATUS",
        "BATCH_BEGIN",
        "BATCH_CHUNK",
        "BATCH_END",
        "RESULT",
        "ABORT",
        "ACK",
        "ERROR",
    }
)


class Oversize(Exception):
    pass


class UnserializablePayload(Exception):
    pass


class MalformedJson(Exception):
    pass


class UnknownType(Exception):
    pass


class SeqRegression(Exception):
    pass


class ProtocolFailed(Exception):
    """The connection is in a failed state; no further decoding is possible."""


class ConnectionLost(Exception):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    t_ms: int
    payload: dict

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise UnknownType(f"unknown message type {self.type!r}")


def encode(msg: WireMessage) -> bytes:
    """Length-framed canonical JSON: sorted keys, no insignificant whitespace."""
    doc = {"type": msg.type, "seq": msg.seq, "t_ms": msg.t_ms, "payload": msg.payload}
    try:
        body = json.dumps(
            doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise UnserializablePayload(str(exc)) from exc
    if len(body) > MAX_FRAME_BYTES:
        raise Oversize(f"frame of {len(body)} bytes exceeds {MAX_FRAME_BYTES}")
    return HEADER.pack(len(body)) + body


def decode_one(buffer: bytes) -> Optional[tuple[WireMessage, bytes]]:
    """One message plus the remainder, or None when more bytes are needed.

    Oversize length prefixes are rejected before any body is buffered.
    """
    if len(buffer) < HEADER.size:
        return None
    (length,) = HEADER.unpack_from(buffer)
    if length > MAX_FRAME_BYTES:
        raise Oversize(f"length prefix {length} exceeds {MAX_FRAME_BYTES}")
    if len(buffer) < HEADER.size + length:
        return None
    body = buffer[HEADER.size : HEADER.size + length]
    rest = buffer[HEADER.size + length :]
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict) or not {"type", "seq", "t_ms", "payload"} <= set(doc):
        raise MalformedJson("message must carry type, seq, t_ms, payload")
    msg = WireMessage(doc["type"], int(doc["seq"]), int(doc["t_ms"]), doc["payload"])
    return msg, rest


class StreamDecoder:
    """Incremental decoder for one connection direction; enforces seq monotonicity."""

    def __init__(self):
        self.buffer = bytearray()
        self.last_seq: Optional[int] = None
        self.failed = False

    def feed(self, data: bytes) -> list[WireMessage]:
        if self.failed:
            raise ProtocolFailed("decoder is in failed state")
        self.buffer.extend(data)
        out = []
        while True:
            try:
                decoded = decode_one(bytes(self.buffer))
            except (MalformedJson, UnknownType, Oversize):
                self.failed = True
                raise
            if decoded is None:
                return out
            msg, rest = decoded
            self.buffer = bytearray(rest)
            if self.last_seq is not None and msg.seq <= self.last_seq:
                self.failed = True
                raise SeqRegression(f"seq {msg.seq} after {self.last_seq}")
            self.last_seq = msg.seq
            out.append(msg)


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def chunk_payload(index: int, data: bytes) -> dict:
    return {
        "chunk_index": index,
        "byte_count": len(data),
        "data": base64.b64encode(data).decode("ascii"),
        "checksum": crc32(data),
    }


def chunk_data(payload: dict) -> bytes:
    return base64.b64decode(payload["data"])


class MessageChannel:
    """Framed message transport over a connected socket.

    One reader and one writer context per connection; sends are serialized by
    a lock, sequence numbers are assigned here.
    """

    def __init__(self, sock: socket.socket, clock: Optional[Callable[[], int]] = None):
        self.sock = sock
        self.clock = clock or (lambda: int(time.monotonic() * 1000))
        self.decoder = StreamDecoder()
        self._send_lock = threading.Lock()
        self._next_seq = 1
        self._inbox: list[WireMessage] = []

    def send(self, type_: str, payload: dict) -> WireMessage:
        with self._send_lock:
            msg = WireMessage(type_, self._next_seq, self.clock(), payload)
            self._next_seq += 1
            try:
                self.sock.sendall(encode(msg))
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
        return msg

    def recv(self, timeout_s: Optional[float] = 10.0) -> WireMessage:
        """Next message in arrival order; raises ConnectionLost on EOF."""
        if self._inbox:
            return self._inbox.pop(0)
        self.sock.settimeout(timeout_s)
        while True:
            try:
                data = self.sock.recv(65536)
            except socket.timeout as exc:
                raise ConnectionLost("receive timeout") from exc
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not data:
                raise ConnectionLost("peer closed the connection")
            messages = self.decoder.feed(data)
            if messages:
                self._inbox.extend(messages[1:])
                return messages[0]

    def recv_expect(self, type_: str, timeout_s: Optional[float] = 10.0) -> WireMessage:
        msg = self.recv(timeout_s)
        if msg.type != type_:
            raise ProtocolFailed(f"expected {type_}, got {msg.type}")
        return msg

    def ack(self, msg: WireMessage) -> None:
        self.send("ACK", {"for_seq": msg.seq})

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def loopback_pair(clock=None) -> tuple[MessageChannel, MessageChannel]:
    a, b = socket.socketpair()
    return MessageChannel(a, clock), MessageChannel(b, clock)


@dataclass
class Handshake:
    peer_role: str
    peer_version: str
    clock_offset_ms: int


def hello_client(channel: MessageChannel, role: str) -> Handshake:
    """Initiator side: send HELLO, await the peer's ACK and HELLO reply."""
    channel.send("HELLO", {"role": role, "version": PROTOCOL_VERSION})
    first = channel.recv()
    if first.type == "ERROR":
        raise ProtocolFailed(f"peer rejected handshake: {first.payload}")
    if first.type != "ACK":
        raise ProtocolFailed(f"expected ACK, got {first.type}")
    reply = channel.recv_expect("HELLO")
    _check_hello(reply, role)
    channel.ack(reply)
    return Handshake(reply.payload["role"], reply.payload["version"], 0)


def hello_server(channel: MessageChannel, role: str) -> Handshake:
    """Listener side: await HELLO, reply, measure the clock offset from the ACK.

    Any protocol violation is answered with an ERROR message and the
    connection is declared failed.
    """
    try:
        first = channel.recv_expect("HELLO")
        _check_hello(first, role)
    except ProtocolFailed as exc:
        try:
            channel.send("ERROR", {"code": "protocol", "detail": str(exc)})
        except ConnectionLost:
            pass
        raise
    channel.ack(first)
    channel.send("HELLO", {"role": role, "version": PROTOCOL_VERSION})
    ack = channel.recv_expect("ACK")
    offset = channel.clock() - ack.t_ms
    return Handshake(first.payload["role"], first.payload["version"], offset)


def _check_hello(msg: WireMessage, own_role: str) -> None:
    version = msg.payload.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolFailed(f"protocol version {version!r}, need {PROTOCOL_VERSION!r}")
    peer_role = msg.payload.get("role")
    if peer_role == own_role:
        raise ProtocolFailed(f"both peers claim role {own_role!r}")


CHUNK_SIZE_MIN = 64 * 1024
CHUNK_SIZE_MAX = 8 * 1024 * 1024
RETRANSMIT_LIMIT = 3


def send_batch(channel: MessageChannel, archive: bytes, chunk_size: int, meta: dict) -> None:
    """Chunked archive transfer with per-chunk ACK and retransmit on demand."""
    if not CHUNK_SIZE_MIN <= chunk_size <= CHUNK_SIZE_MAX:
        raise ValueError(f"chunk_size {chunk_size} outside [{CHUNK_SIZE_MIN}, {CHUNK_SIZE_MAX}]")
    chunks = [archive[i : i + chunk_size] for i in range(0, len(archive), chunk_size)]
    channel.send(
        "BATCH_BEGIN",
        {
            "total_bytes": len(archive),
            "checksum": crc32(archive),
            "chunk_count": len(chunks),
            "meta": meta,
        },
    )
    channel.recv_expect("ACK")
    index = 0
    attempts = 0
    while index < len(chunks):
        channel.send("BATCH_CHUNK", chunk_payload(index, chunks[index]))
        reply = channel.recv()
        if reply.type == "ACK":
            index += 1
            attempts = 0
        elif reply.type == "ERROR" and reply.payload.get("code") == "ChecksumMismatch":
            attempts += 1
            if attempts > RETRANSMIT_LIMIT:
                raise ConnectionLost(f"chunk {index} failed {attempts} times")
        else:
            raise ProtocolFailed(f"unexpected {reply.type} during batch transfer")
    channel.send("BATCH_END", {})
    channel.recv_expect("ACK")


class BatchReceiveError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code


def receive_batch(
    channel: MessageChannel,
    corrupt_chunks: Optional[set[int]] = None,
    first: Optional[WireMessage] = None,
) -> tuple[bytes, dict]:
    """Receive a chunked archive; verifies per-chunk and whole-archive checksums.

    corrupt_chunks simulates transport damage on first receipt of the listed
    chunk indices (fault-injection hook for tests). Pass `first` when the
    caller's pump already consumed the BATCH_BEGIN message.
    """
    begin = first if first is not None else channel.recv_expect("BATCH_BEGIN")
    if begin.type != "BATCH_BEGIN":
        raise ProtocolFailed(f"expected BATCH_BEGIN, got {begin.type}")
    channel.ack(begin)
    total = begin.payload["total_bytes"]
    expected_count = begin.payload["chunk_count"]
    expected_crc = begin.payload["checksum"]
    damaged = set(corrupt_chunks or ())
    received: list[bytes] = []
    while len(received) < expected_count:
        msg = channel.recv_expect("BATCH_CHUNK")
        index = msg.payload["chunk_index"]
        if index < len(received):
            channel.ack(msg)  # duplicate of an acknowledged chunk changes nothing
            continue
        if index != len(received):
            raise BatchReceiveError("ChunkGap", f"expected chunk {len(received)}, got {index}")
        data = chunk_data(msg.payload)
        if index in damaged:
            damaged.discard(index)
            data = b"\x00" + data[1:] if data else b"\x00"
        if crc32(data) != msg.payload["checksum"] or len(data) != msg.payload["byte_count"]:
            channel.send("ERROR", {"code": "ChecksumMismatch", "chunk_index": index})
            continue
        received.append(data)
        channel.ack(msg)
    end = channel.recv_expect("BATCH_END")
    channel.ack(end)
    archive = b"".join(received)
    if len(archive) != total or crc32(archive) != expected_crc:
        raise BatchReceiveError("ChecksumMismatch", "reassembled archive fails verification")
    return archive, begin.payload["meta"]
