"""Editing wire protocol: JSON messages over WebSocket framing.

Every WebSocket text frame carries exactly one JSON message; the frame
header is the length delimiter. Message schemas are documented in
docs/protocol.md and mirrored by the browser editor. The scripted
``EditorClient`` here is the reference client used by the tests.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socket
import struct

from .errors import ProtocolError

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
PROTOCOL_VERSION = 1

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def encode_frame(payload: bytes, opcode: int = OP_TEXT, mask: bool = False) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head.append(mask_bit | n)
    elif n < (1 << 16):
        head.append(mask_bit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


def _read_exact(reader, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = reader.read(n - len(buf))
        if not chunk:
            raise EOFError("connection closed mid-frame")
        buf += chunk
    return buf


def read_frame(reader) -> tuple[int, bytes]:
    header = reader.read(2)
    if not header:
        raise EOFError("connection closed")
    if len(header) < 2:
        header += _read_exact(reader, 2 - len(header))
    opcode = header[0] & 0x0F
    if not header[0] & 0x80:
        raise ProtocolError("fragmented frames are not supported")
    masked = bool(header[1] & 0x80)
    n = header[1] & 0x7F
    if n == 126:
        (n,) = struct.unpack(">H", _read_exact(reader, 2))
    elif n == 127:
        (n,) = struct.unpack(">Q", _read_exact(reader, 8))
    key = _read_exact(reader, 4) if masked else None
    payload = _read_exact(reader, n) if n else b""
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload


class MessageSocket:
    """One JSON message per WebSocket frame over a connected socket."""

    def __init__(self, sock: socket.socket, client_side: bool):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.client_side = client_side

    def send_json(self, obj: dict) -> None:
        payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        self.sock.sendall(encode_frame(payload, OP_TEXT, mask=self.client_side))

    def recv_json(self) -> dict | None:
        """Next JSON message, transparently answering pings; None on close."""
        while True:
            try:
                opcode, payload = read_frame(self.reader)
            except EOFError:
                return None
            if opcode == OP_TEXT:
                try:
                    return json.loads(payload.decode())
                except json.JSONDecodeError as exc:
                    raise ProtocolError(f"invalid JSON message: {exc}")
            if opcode == OP_PING:
                self.sock.sendall(encode_frame(payload, OP_PONG, mask=self.client_side))
                continue
            if opcode == OP_CLOSE:
                try:
                    self.sock.sendall(encode_frame(b"", OP_CLOSE, mask=self.client_side))
                except OSError:
                    pass
                return None
            if opcode == OP_PONG:
                continue
            raise ProtocolError(f"unsupported opcode {opcode}")

    def close(self) -> None:
        try:
            self.sock.sendall(encode_frame(b"", OP_CLOSE, mask=self.client_side))
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class EditorClient:
    """Scripted protocol client; records a full message trace for auditing."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.trace: list[tuple[str, dict]] = []
        sock = socket.create_connection((host, port), timeout=timeout)
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET /ws HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            f"Upgrade: websocket\r\n"
            f"Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            f"Sec-WebSocket-Version: 13\r\n\r\n"
        )
        sock.sendall(request.encode())
        reader = sock.makefile("rb")
        status = reader.readline()
        if b"101" not in status:
            raise ProtocolError(f"websocket handshake refused: {status!r}")
        expect = accept_key(key).encode()
        ok = False
        while True:
            line = reader.readline()
            if line in (b"\r\n", b""):
                break
            if line.lower().startswith(b"sec-websocket-accept:"):
                ok = line.split(b":", 1)[1].strip() == expect
        if not ok:
            raise ProtocolError("bad Sec-WebSocket-Accept from server")
        self.ws = MessageSocket(sock, client_side=True)
        self.ws.reader = reader

    def request(self, message: dict) -> dict:
        """Send one message and wait for its reply."""
        self.trace.append(("sent", message))
        self.ws.send_json(message)
        reply = self.ws.recv_json()
        if reply is None:
            raise ProtocolError("server closed the connection")
        self.trace.append(("received", reply))
        return reply

    def close(self) -> None:
        self.ws.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def fetch_scene_listing(host: str, port: int, timeout: float = 10.0) -> dict:
    """Plain HTTP GET /scenes request/response endpoint."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(f"GET /scenes HTTP/1.1\r\nHost: {host}:{port}\r\nConnection: close\r\n\r\n".encode())
        data = b""
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            data += chunk
    head, _, body = data.partition(b"\r\n\r\n")
    if b"200" not in head.split(b"\r\n", 1)[0]:
        raise ProtocolError(f"scene listing failed: {head[:80]!r}")
    return json.loads(body.decode())
