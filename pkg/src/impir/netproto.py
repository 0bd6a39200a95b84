"""Length-prefixed binary protocol between client and servers, over TCP.

Frame layout (all integers little-endian):

    length u32 | msg_type u8 | query_id u64 | body[length]

``length`` counts the body only. Message types: 1=HELLO, 2=HELLO_ACK,
3=QUERY (body = serialized DPF key), 4=RESPONSE (body = L subresult bytes),
5=ERROR (body = u16 code + UTF-8 text). Connections are pipelined: responses
carry the originating query_id and may arrive out of order.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

from impir import dpf
from impir.errors import FormatError, TransportError

PROTOCOL_VERSION = 1
FRAME_CAP = 64 << 20

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_QUERY = 3
MSG_RESPONSE = 4
MSG_ERROR = 5

ERR_MALFORMED = 1
ERR_DOMAIN = 2
ERR_INTERNAL = 3
ERR_VERSION = 4

_FRAME_HEADER = struct.Struct("<IBQ")
_HELLO_BODY = struct.Struct("<H")
_HELLO_ACK_BODY = struct.Struct("<HQI")
_ERROR_PREFIX = struct.Struct("<H")


@dataclass(frozen=True)
class Hello:
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    version: int
    n_items: int
    record_len: int


@dataclass(frozen=True)
class Query:
    key_blob: bytes


@dataclass(frozen=True)
class Response:
    value: bytes


@dataclass(frozen=True)
class Error:
    code: int
    message: str


Message = Hello | HelloAck | Query | Response | Error


def encode(msg: Message, query_id: int = 0) -> bytes:
    if isinstance(msg, Hello):
        msg_type, body = MSG_HELLO, _HELLO_BODY.pack(msg.version)
    elif isinstance(msg, HelloAck):
        msg_type, body = MSG_HELLO_ACK, _HELLO_ACK_BODY.pack(
            msg.version, msg.n_items, msg.record_len
        )
    elif isinstance(msg, Query):
        msg_type, body = MSG_QUERY, msg.key_blob
    elif isinstance(msg, Response):
        msg_type, body = MSG_RESPONSE, msg.value
    elif isinstance(msg, Error):
        msg_type, body = MSG_ERROR, _ERROR_PREFIX.pack(msg.code) + msg.message.encode()
    else:
        raise FormatError(f"cannot encode {type(msg).__name__}")
    if len(body) > FRAME_CAP:
        raise FormatError(f"body of {len(body)} bytes exceeds the {FRAME_CAP}-byte frame cap")
    return _FRAME_HEADER.pack(len(body), msg_type, query_id) + body


def _decode_body(msg_type: int, body: bytes) -> Message:
    if msg_type == MSG_HELLO:
        if len(body) != _HELLO_BODY.size:
            raise FormatError("HELLO body must be 2 bytes")
        return Hello(*_HELLO_BODY.unpack(body))
    if msg_type == MSG_HELLO_ACK:
        if len(body) != _HELLO_ACK_BODY.size:
            raise FormatError("HELLO_ACK body must be 14 bytes")
        return HelloAck(*_HELLO_ACK_BODY.unpack(body))
    if msg_type == MSG_QUERY:
        return Query(body)
    if msg_type == MSG_RESPONSE:
        return Response(body)
    if msg_type == MSG_ERROR:
        if len(body) < _ERROR_PREFIX.size:
            raise FormatError("ERROR body shorter than its code")
        (code,) = _ERROR_PREFIX.unpack_from(body)
        return Error(code, body[2:].decode("utf-8", errors="replace"))
    raise FormatError(f"unknown message type {msg_type}")


def decode(data: bytes) -> tuple[Message, int]:
    """Decode exactly one frame; rejects oversize lengths before any body use."""
    if len(data) < _FRAME_HEADER.size:
        raise FormatError("frame shorter than its header")
    length, msg_type, query_id = _FRAME_HEADER.unpack_from(data)
    if length > FRAME_CAP:
        raise FormatError(f"frame length {length} exceeds the {FRAME_CAP}-byte cap")
    if len(data) != _FRAME_HEADER.size + length:
        raise FormatError(
            f"frame declares {length} body bytes, got {len(data) - _FRAME_HEADER.size}"
        )
    return _decode_body(msg_type, data[_FRAME_HEADER.size :]), query_id


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise TransportError("timed out waiting for peer") from exc
        except OSError as exc:
            raise TransportError(f"connection failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[Message, int]:
    """Read one frame from a stream; the cap is checked before the body is read."""
    header = _recv_exact(sock, _FRAME_HEADER.size)
    length, msg_type, query_id = _FRAME_HEADER.unpack(header)
    if length > FRAME_CAP:
        raise FormatError(f"frame length {length} exceeds the {FRAME_CAP}-byte cap")
    body = _recv_exact(sock, length) if length else b""
    return _decode_body(msg_type, body), query_id


def send_frame(sock: socket.socket, msg: Message, query_id: int = 0) -> None:
    try:
        sock.sendall(encode(msg, query_id))
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def request(endpoint: tuple[str, int], msg: Message, query_id: int = 0, timeout: float = 10.0):
    """One-shot exchange: connect, send one message, read one reply."""
    try:
        with socket.create_connection(endpoint, timeout=timeout) as sock:
            send_frame(sock, msg, query_id)
            return read_frame(sock)
    except OSError as exc:
        raise TransportError(f"cannot reach {endpoint[0]}:{endpoint[1]}: {exc}") from exc


class ServerEndpoint:
    """Accept loop in front of a PirServer's batch engine.

    Each connection gets a handler thread; queries are submitted to the
    engine and responses are written back from completion callbacks, so a
    slow query never blocks the frames behind it.
    """

    def __init__(self, pir_server, host: str = "127.0.0.1", port: int = 0, mode: str = "single"):
        self.pir_server = pir_server
        self.mode = mode
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self.address = self._listener.getsockname()
        self._accept_thread: threading.Thread | None = None
        self._running = False

    def start(self) -> None:
        self.pir_server.start_engine(self.mode)
        self._running = True
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="impir-accept"
        )
        self._accept_thread.start()

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
        self.pir_server.stop_engine()

    def __enter__(self) -> ServerEndpoint:
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._handle_connection, args=(conn,), daemon=True, name="impir-conn"
            ).start()

    def _handle_connection(self, conn: socket.socket) -> None:
        send_lock = threading.Lock()

        def reply(msg: Message, query_id: int) -> None:
            try:
                with send_lock:
                    conn.sendall(encode(msg, query_id))
            except OSError:
                pass

        try:
            while True:
                try:
                    msg, query_id = read_frame(conn)
                except TransportError:
                    return
                except FormatError as exc:
                    reply(Error(ERR_MALFORMED, str(exc)), 0)
                    return
                if isinstance(msg, Hello):
                    if msg.version != PROTOCOL_VERSION:
                        reply(Error(ERR_VERSION, f"unsupported version {msg.version}"), query_id)
                        return
                    ack = HelloAck(
                        PROTOCOL_VERSION,
                        self.pir_server.db.n_items,
                        self.pir_server.db.record_len,
                    )
                    reply(ack, query_id)
                elif isinstance(msg, Query):
                    self._submit_query(msg, query_id, reply)
                else:
                    reply(Error(ERR_MALFORMED, f"unexpected {type(msg).__name__}"), query_id)
                    return
        except Exception as exc:  # contain handler panics to this connection
            reply(Error(ERR_INTERNAL, str(exc)), 0)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _submit_query(self, msg: Query, query_id: int, reply) -> None:
        try:
            key = dpf.deserialize_key(msg.key_blob)
        except FormatError as exc:
            reply(Error(ERR_MALFORMED, str(exc)), query_id)
            return
        if key.domain.n_items != self.pir_server.db.n_items:
            reply(
                Error(
                    ERR_DOMAIN,
                    f"key domain {key.domain.n_items} != database {self.pir_server.db.n_items}",
                ),
                query_id,
            )
            return
        _, fut = self.pir_server.submit(key)

        def on_done(f, qid=query_id):
            exc = f.exception()
            if exc is not None:
                reply(Error(ERR_INTERNAL, str(exc)), qid)
            else:
                reply(Response(f.result().value), qid)

        fut.add_done_callback(on_done)


def serve_loop(pir_server, host: str, port: int, mode: str = "single") -> None:
    """Blocking accept loop; runs until interrupted."""
    endpoint = ServerEndpoint(pir_server, host, port, mode)
    with endpoint:
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            pass
