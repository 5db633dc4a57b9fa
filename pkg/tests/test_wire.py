from __future__ import annotations

import json
import struct
import threading

import pytest

from vpctrack.wire import (
    MAX_FRAME_BYTES,
    MalformedJson,
    MessageChannel,
    Oversize,
    ProtocolFailed,
    SeqRegression,
    StreamDecoder,
    UnknownType,
    UnserializablePayload,
    WireMessage,
    chunk_data,
    chunk_payload,
    crc32,
    decode_one,
    encode,
    hello_client,
    hello_server,
    loopback_pair,
    receive_batch,
    send_batch,
)


def msg(type_="ACK", seq=1, t_ms=0, payload=None):
    return WireMessage(type_, seq, t_ms, payload if payload is not None else {})


# ---------------------------------------------------------------- framing

def test_ack_frame_layout():
    m = msg("ACK", seq=1, t_ms=0)
    data = encode(m)
    (length,) = struct.unpack(">I", data[:4])
    body = data[4:]
    assert length == len(body)
    doc = json.loads(body.decode())
    assert doc == {"payload": {}, "seq": 1, "t_ms": 0, "type": "ACK"}
    # canonical: sorted keys, no whitespace
    assert body == json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def test_oversize_payload_rejected():
    big = "x" * (MAX_FRAME_BYTES + 16)
    with pytest.raises(Oversize):
        encode(msg("GAZE_TICK", payload={"blob": big}))


def test_unserializable_payload():
    with pytest.raises(UnserializablePayload):
        encode(msg("STATUS", payload={"x": object()}))
    with pytest.raises(UnserializablePayload):
        encode(msg("STATUS", payload={"x": float("nan")}))


def test_unknown_type_rejected_at_construction():
    with pytest.raises(UnknownType):
        WireMessage("NOPE", 1, 0, {})


def test_decode_partial_prefix_needs_more():
    data = encode(msg())
    assert decode_one(data[:2]) is None
    assert decode_one(data[:-1]) is None


def test_decode_leaves_remainder():
    data = encode(msg()) + b"xyz"
    decoded, rest = decode_one(data)
    assert decoded.type == "ACK"
    assert rest == b"xyz"


def test_decode_self_synchronization():
    a = msg("STATUS", seq=1, payload={"state": "ok"})
    b = msg("GAZE_TICK", seq=2, payload={"frame_index": 7})
    first, rest = decode_one(encode(a) + encode(b))
    second, rest2 = decode_one(rest)
    assert first == a and second == b and rest2 == b""


def test_decode_rejects_oversize_prefix_before_buffering():
    bogus = struct.pack(">I", MAX_FRAME_BYTES + 1) + b"a"
    with pytest.raises(Oversize):
        decode_one(bogus)


def test_decode_malformed_json():
    body = b"{not json"
    with pytest.raises(MalformedJson):
        decode_one(struct.pack(">I", len(body)) + body)


def test_decoder_seq_regression():
    decoder = StreamDecoder()
    decoder.feed(encode(msg(seq=5)))
    with pytest.raises(SeqRegression):
        decoder.feed(encode(msg(seq=4)))
    with pytest.raises(Exception):
        decoder.feed(b"")  # failed state sticks


def test_round_trip_randomized_messages():
    import random

    rng = random.Random(1234)
    types = ["HELLO", "PLAN_PUSH", "GAZE_TICK", "STATUS", "RESULT", "ERROR", "STIM_SHOW"]

    def random_value(depth=0):
        kind = rng.randrange(7 if depth < 3 else 5)
        if kind == 0:
            return rng.randint(-(2**40), 2**40)
        if kind == 1:
            return rng.uniform(-1e6, 1e6)
        if kind == 2:
            return rng.choice([True, False])
        if kind == 3:
            return None
        if kind == 4:
            return "".join(rng.choice("abc⚡日本語\"\\\n xyz") for _ in range(rng.randrange(12)))
        if kind == 5:
            return [random_value(depth + 1) for _ in range(rng.randrange(4))]
        return {f"k{i}": random_value(depth + 1) for i in range(rng.randrange(4))}

    decoder = StreamDecoder()
    buffer = b""
    sent = []
    for seq in range(1, 1001):
        m = WireMessage(rng.choice(types), seq, rng.randint(0, 10**9), {"v": random_value()})
        sent.append(m)
        buffer += encode(m)
    # feed in ragged slices to exercise re-framing
    received = []
    pos = 0
    while pos < len(buffer):
        step = rng.randint(1, 4096)
        received.extend(decoder.feed(buffer[pos : pos + step]))
        pos += step
    assert received == sent


# -------------------------------------------------------------- handshake

def test_handshake_roles_and_offset():
    a, b = loopback_pair()
    result = {}

    def client():
        result["client"] = hello_client(a, "measurement")

    t = threading.Thread(target=client)
    t.start()
    server_side = hello_server(b, "management")
    t.join()
    assert server_side.peer_role == "measurement"
    assert result["client"].peer_role == "management"
    a.close()
    b.close()


def test_handshake_version_mismatch():
    a, b = loopback_pair()
    a.send("HELLO", {"role": "measurement", "version": "999"})
    with pytest.raises(ProtocolFailed):
        hello_server(b, "management")
    a.close()
    b.close()


def test_handshake_same_role_rejected():
    a, b = loopback_pair()
    a.send("HELLO", {"role": "management", "version": "1"})
    with pytest.raises(ProtocolFailed):
        hello_server(b, "management")
    a.close()
    b.close()


def test_tick_before_hello_gets_protocol_error():
    a, b = loopback_pair()
    a.send("GAZE_TICK", {"frame_index": 0})
    with pytest.raises(ProtocolFailed):
        hello_server(b, "management")
    reply = a.recv(timeout_s=2.0)
    assert reply.type == "ERROR"
    assert reply.payload["code"] == "protocol"
    a.close()
    b.close()


# ------------------------------------------------------------------ batch

def test_chunk_payload_round_trip():
    data = b"\x00\x01\x02" * 1000
    payload = chunk_payload(3, data)
    assert payload["byte_count"] == len(data)
    assert payload["checksum"] == crc32(data)
    assert chunk_data(payload) == data


def run_batch(archive, chunk_size, corrupt=None):
    a, b = loopback_pair()
    errors = []
    out = {}

    def sender():
        try:
            send_batch(a, archive, chunk_size, {"k": 1})
        except Exception as exc:  # surfaced by the assert below
            errors.append(exc)

    t = threading.Thread(target=sender)
    t.start()
    out["archive"], out["meta"] = receive_batch(b, corrupt_chunks=corrupt)
    t.join()
    a.close()
    b.close()
    assert not errors, errors
    return out


def test_batch_transfer_reassembles():
    archive = bytes(range(256)) * 4096  # 1 MiB
    out = run_batch(archive, 256 * 1024)
    assert out["archive"] == archive
    assert out["meta"] == {"k": 1}


def test_batch_transfer_retransmits_corrupt_chunk():
    archive = bytes(range(256)) * 4096
    out = run_batch(archive, 256 * 1024, corrupt={2})
    assert out["archive"] == archive


def test_batch_chunk_size_bounds():
    a, b = loopback_pair()
    with pytest.raises(ValueError):
        send_batch(a, b"x", 1024, {})
    a.close()
    b.close()


def test_duplicate_chunk_is_idempotent():
    a, b = loopback_pair()
    data = bytes(range(200)) * 400
    chunks = [data[:65536], data[65536:]]
    result = {}

    def receiver():
        result["archive"], result["meta"] = receive_batch(b)

    t = threading.Thread(target=receiver)
    t.start()
    a.send(
        "BATCH_BEGIN",
        {"total_bytes": len(data), "checksum": crc32(data), "chunk_count": 2, "meta": {}},
    )
    a.recv_expect("ACK")
    a.send("BATCH_CHUNK", chunk_payload(0, chunks[0]))
    a.recv_expect("ACK")
    # duplicate of the acknowledged chunk: acknowledged again, nothing changes
    a.send("BATCH_CHUNK", chunk_payload(0, chunks[0]))
    a.recv_expect("ACK")
    a.send("BATCH_CHUNK", chunk_payload(1, chunks[1]))
    a.recv_expect("ACK")
    a.send("BATCH_END", {})
    a.recv_expect("ACK")
    t.join(timeout=10)
    assert result["archive"] == data
    a.close()
    b.close()
