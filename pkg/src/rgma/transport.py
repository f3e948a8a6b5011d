"""Wire protocol shared by every component.

Frames are 4-byte big-endian length + UTF-8 JSON body. One symmetric message
set covers registration, publishing and querying; every request kind gets
exactly one terminal reply (Ack, Error or EndOfResults), with TupleBatch
flowing only inside an open StartQuery exchange.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable

from rgma.errors import ConnectionClosedError, FrameError, ProtocolError

MESSAGE_KINDS = frozenset(
    {
        "DeclareTable",
        "RegisterProducer",
        "RegisterConsumer",
        "Heartbeat",
        "Unregister",
        "Insert",
        "StartQuery",
        "TupleBatch",
        "EndOfResults",
        "NotifyNewProducer",
        "RegistrySync",
        "Error",
        "Ack",
    }
)

MAX_FRAME = 64 * 1024 * 1024


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def as_json(self) -> dict:
        return {"host": self.host, "port": self.port}

    @classmethod
    def from_json(cls, body: dict) -> "Endpoint":
        return cls(str(body["host"]), int(body["port"]))


@dataclass(frozen=True)
class Message:
    kind: str
    body: dict = field(default_factory=dict)
    request_id: str = ""


@dataclass(frozen=True)
class TerminationInterval:
    duration_ms: int

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise ProtocolError("termination interval must be positive")


def heartbeat_schedule(interval: TerminationInterval | int) -> int:
    """Delay before the next heartbeat: half the termination interval,
    clamped to [100 ms, interval - 100 ms]."""
    duration = interval.duration_ms if isinstance(interval, TerminationInterval) else int(interval)
    if duration <= 0:
        raise ProtocolError("termination interval must be positive")
    upper = max(100, duration - 100)
    return max(100, min(duration // 2, upper))


def frame(message: Message) -> bytes:
    if message.kind not in MESSAGE_KINDS:
        raise ProtocolError(f"unknown message kind {message.kind!r}")
    payload = json.dumps(
        {"kind": message.kind, "requestId": message.request_id, "body": message.body},
        separators=(",", ":"),
    ).encode("utf-8")
    return struct.pack(">I", len(payload)) + payload


def unframe(data: bytes) -> Message:
    """Decode exactly one frame; the byte string must be the whole frame."""
    if len(data) < 4:
        raise FrameError("frame shorter than its length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length == 0:
        raise FrameError("zero-length frame")
    if length > MAX_FRAME:
        raise FrameError(f"frame length {length} exceeds maximum")
    body = data[4:]
    if len(body) != length:
        raise FrameError(f"frame advertises {length} bytes but carries {len(body)}")
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FrameError("frame body must be a JSON object")
    kind = obj.get("kind")
    if not isinstance(kind, str) or kind not in MESSAGE_KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    msg_body = obj.get("body", {})
    if not isinstance(msg_body, dict):
        raise FrameError("message body must be a JSON object")
    request_id = obj.get("requestId", "")
    if not isinstance(request_id, str):
        raise FrameError("requestId must be a string")
    return Message(kind, msg_body, request_id)


def new_request_id() -> str:
    return uuid.uuid4().hex[:12]


class Connection:
    """One framed message stream over a socket. Sends are locked so writer
    threads can interleave whole frames safely; receives are sequential."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._recv_buffer = b""
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def peername(self) -> str:
        try:
            host, port = self._sock.getpeername()[:2]
            return f"{host}:{port}"
        except OSError:
            return "<closed>"

    def send(self, message: Message):
        data = frame(message)
        with self._send_lock:
            if self._closed:
                raise ConnectionClosedError("connection already closed")
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self._closed = True
                raise ConnectionClosedError(str(exc)) from exc

    def _read_exact(self, n: int) -> bytes:
        while len(self._recv_buffer) < n:
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                self._closed = True
                raise ConnectionClosedError(str(exc)) from exc
            if not chunk:
                self._closed = True
                if self._recv_buffer:
                    raise FrameError("connection closed mid-frame")
                raise ConnectionClosedError("connection closed")
            self._recv_buffer += chunk
        out, self._recv_buffer = self._recv_buffer[:n], self._recv_buffer[n:]
        return out

    def recv(self) -> Message:
        head = self._read_exact(4)
        (length,) = struct.unpack(">I", head)
        if length == 0:
            raise FrameError("zero-length frame")
        if length > MAX_FRAME:
            raise FrameError(f"frame length {length} exceeds maximum")
        body = self._read_exact(length)
        return unframe(head + body)

    def request(self, message: Message) -> Message:
        """Send one request and wait for its terminal reply."""
        req = Message(message.kind, message.body, message.request_id or new_request_id())
        self.send(req)
        return self.recv()

    def close(self):
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def connect(endpoint: Endpoint, timeout_ms: int = 10000) -> Connection:
    try:
        sock = socket.create_connection(
            (endpoint.host, endpoint.port), timeout=timeout_ms / 1000.0
        )
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return Connection(sock)
    except OSError as exc:
        raise ConnectionClosedError(f"cannot connect to {endpoint.host}:{endpoint.port}: {exc}") from exc


# handler(connection, message) -> None; it replies through the connection
Handler = Callable[[Connection, Message], None]


class MessageServer:
    """Threaded TCP server: one handler thread per connection, messages on a
    connection processed strictly in order. A malformed frame tears down only
    its own connection."""

    def __init__(self, handler: Handler, host: str = "127.0.0.1", port: int = 0,
                 on_disconnect: Callable[[Connection], None] | None = None):
        self._handler = handler
        self._on_disconnect = on_disconnect
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self.host, self.port = self._sock.getsockname()[:2]
        self._stopping = False
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint(self.host, self.port)

    def start(self) -> "MessageServer":
        self._accept_thread.start()
        return self

    def _accept_loop(self):
        while not self._stopping:
            try:
                sock, _ = self._sock.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = Connection(sock)
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            self._threads.append(t)
            t.start()

    def _serve_connection(self, conn: Connection):
        try:
            while not self._stopping:
                try:
                    msg = conn.recv()
                except ConnectionClosedError:
                    return
                except (FrameError, ProtocolError) as exc:
                    try:
                        conn.send(Message("Error", {
                            "code": type(exc).__name__, "message": str(exc)}))
                    except ConnectionClosedError:
                        pass
                    return
                try:
                    self._handler(conn, msg)
                except ConnectionClosedError:
                    return
        finally:
            if self._on_disconnect is not None:
                self._on_disconnect(conn)
            conn.close()

    def stop(self):
        self._stopping = True
        try:
            self._sock.close()
        except OSError:
            pass
