"""Browser gateway for the dashboard: WebSocket event bridge plus static files.

The /ws endpoint re-publishes wire messages as plain JSON (no length
framing) and accepts operator commands in the same shape. Everything else is
served from a static directory (the dashboard build) with a couple of small
JSON endpoints for the results browser.
"""
from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
from pathlib import Path
from typing import Callable, Optional

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".css": "text/css",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def _ws_accept_value(key: str) -> str:
    digest = hashlib.sha1((key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def encode_ws_text(payload: str) -> bytes:
    data = payload.encode("utf-8")
    header = bytearray([0x81])  # FIN + text opcode
    n = len(data)
    if n < 126:
        header.append(n)
    elif n < 65536:
        header.append(126)
        header += struct.pack(">H", n)
    else:
        header.append(127)
        header += struct.pack(">Q", n)
    return bytes(header) + data


def decode_ws_frame(sock: socket.socket) -> Optional[tuple[int, bytes]]:
    """One (opcode, payload) frame from the socket, None on clean close."""
    head = _read_exact(sock, 2)
    if head is None:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        ext = _read_exact(sock, 2)
        if ext is None:
            return None
        (length,) = struct.unpack(">H", ext)
    elif length == 127:
        ext = _read_exact(sock, 8)
        if ext is None:
            return None
        (length,) = struct.unpack(">Q", ext)
    mask = b"\x00" * 4
    if masked:
        mask = _read_exact(sock, 4)
        if mask is None:
            return None
    payload = _read_exact(sock, length) if length else b""
    if payload is None:
        return None
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return buf


class GatewayServer:
    """Single-process bridge: many browser clients, one command sink."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 8766,
        static_dir: Optional[Path] = None,
        on_command: Optional[Callable[[dict], dict]] = None,
        api: Optional[dict[str, Callable[[dict], object]]] = None,
    ):
        self.host = host
        self.port = port
        self.static_dir = static_dir
        self.on_command = on_command or (lambda doc: {"ok": True})
        self.api = api or {}
        self._clients: list[socket.socket] = []
        self._lock = threading.Lock()
        self._server: Optional[socket.socket] = None
        self._stop = threading.Event()

    def start(self) -> None:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.host, self.port))
        server.listen(8)
        self.port = server.getsockname()[1]
        self._server = server
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        with self._lock:
            for client in self._clients:
                try:
                    client.close()
                except OSError:
                    pass
            self._clients.clear()

    def publish(self, doc: dict) -> None:
        """Fan a wire-message JSON document out to every connected browser."""
        frame = encode_ws_text(json.dumps(doc, separators=(",", ":")))
        with self._lock:
            clients = list(self._clients)
        for client in clients:
            try:
                client.sendall(frame)
            except OSError:
                with self._lock:
                    if client in self._clients:
                        self._clients.remove(client)

    # ------------------------------------------------------------ internal

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def _handle(self, conn: socket.socket) -> None:
        try:
            request = self._read_request(conn)
            if request is None:
                conn.close()
                return
            method, path, headers = request
            if path == "/ws" and headers.get("upgrade", "").lower() == "websocket":
                self._serve_ws(conn, headers)
            else:
                self._serve_http(conn, method, path)
                conn.close()
        except OSError:
            try:
                conn.close()
            except OSError:
                pass

    def _read_request(self, conn: socket.socket):
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = conn.recv(4096)
            if not chunk:
                return None
            data += chunk
            if len(data) > 65536:
                return None
        head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        method, path, _ = lines[0].split(" ", 2)
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                key, value = line.split(":", 1)
                headers[key.strip().lower()] = value.strip()
        return method, path, headers

    def _serve_ws(self, conn: socket.socket, headers: dict) -> None:
        key = headers.get("sec-websocket-key", "")
        accept = _ws_accept_value(key)
        conn.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        with self._lock:
            self._clients.append(conn)
        while not self._stop.is_set():
            frame = decode_ws_frame(conn)
            if frame is None:
                break
            opcode, payload = frame
            if opcode == 0x8:  # close
                break
            if opcode == 0x9:  # ping -> pong
                conn.sendall(bytes([0x8A, len(payload)]) + payload)
                continue
            if opcode != 0x1:
                continue
            try:
                doc = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                continue
            reply = self.on_command(doc)
            if reply is not None:
                conn.sendall(encode_ws_text(json.dumps(reply, separators=(",", ":"))))
        with self._lock:
            if conn in self._clients:
                self._clients.remove(conn)
        try:
            conn.close()
        except OSError:
            pass

    def _serve_http(self, conn: socket.socket, method: str, path: str) -> None:
        if path.split("?")[0] in self.api:
            route = path.split("?")[0]
            params = {}
            if "?" in path:
                for part in path.split("?", 1)[1].split("&"):
                    if "=" in part:
                        k, v = part.split("=", 1)
                        params[k] = v
            body = json.dumps(self.api[route](params)).encode()
            self._respond(conn, 200, "application/json", body)
            return
        if self.static_dir is None:
            self._respond(conn, 404, "text/plain", b"no ui assets")
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            self._respond(conn, 404, "text/plain", b"not found")
            return
        ctype = CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._respond(conn, 200, ctype, target.read_bytes())

    def _respond(self, conn: socket.socket, status: int, ctype: str, body: bytes) -> None:
        reason = {200: "OK", 404: "Not Found"}.get(status, "")
        conn.sendall(
            (
                f"HTTP/1.1 {status} {reason}\r\n"
                f"Content-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode()
            + body
        )
