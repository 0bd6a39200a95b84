"""PIR client: key generation, dispatch to two servers, and reconstruction.

A fetch opens one connection per server, verifies via the metadata handshake
that both serve the same database shape, sends key 1 to server 1 and key 2 to
server 2, and XORs the two subresults into the record. Batches pipeline all
keys before reading any response; responses are matched by query id.
"""

from __future__ import annotations

import secrets
import socket
import struct
import threading
from dataclasses import dataclass
from hashlib import sha256

from impir import dpf, netproto
from impir.dpf import DomainParams, DpfKey, PointFunction
from impir.errors import ConsistencyError, DomainError, ProtocolError, TransportError

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class QuerySession:
    """One in-flight query: its id, target index and the agreed shape."""

    query_id: int
    target_index: int
    domain: DomainParams
    record_len: int

    def __post_init__(self) -> None:
        if not 0 <= self.target_index < self.domain.n_items:
            raise DomainError(
                f"target index {self.target_index} outside domain of {self.domain.n_items}"
            )


def make_query(i: int, domain: DomainParams, rng_seed: bytes) -> tuple[DpfKey, DpfKey]:
    """Encode index ``i`` as a key pair; key 1 goes to server 1, key 2 to server 2."""
    return dpf.gen(domain, PointFunction(i, 1), rng_seed)


def _value_bytes(r) -> bytes:
    return r.value if hasattr(r, "value") else bytes(r)


def reconstruct(r1, r2) -> bytes:
    """Byte-wise XOR of the two server subresults."""
    a, b = _value_bytes(r1), _value_bytes(r2)
    if len(a) != len(b):
        raise ProtocolError(f"subresult lengths differ: {len(a)} vs {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


def _derive_seed(base: bytes, counter: int) -> bytes:
    # Per-query seeds for batches under one caller-supplied seed.
    return sha256(base + struct.pack("<Q", counter)).digest()


class _Connection:
    """One pipelined connection to a PIR server."""

    def __init__(self, endpoint: tuple[str, int], timeout: float):
        self.endpoint = endpoint
        try:
            self.sock = socket.create_connection(endpoint, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {endpoint[0]}:{endpoint[1]}: {exc}") from exc
        self.lock = threading.Lock()

    def hello(self) -> netproto.HelloAck:
        netproto.send_frame(self.sock, netproto.Hello())
        msg, _ = netproto.read_frame(self.sock)
        if isinstance(msg, netproto.Error):
            raise ProtocolError(f"server {self.endpoint} rejected handshake: {msg.message}")
        if not isinstance(msg, netproto.HelloAck):
            raise ProtocolError(f"expected HELLO_ACK, got {type(msg).__name__}")
        return msg

    def send_query(self, query_id: int, key: DpfKey) -> None:
        with self.lock:
            netproto.send_frame(self.sock, netproto.Query(dpf.serialize_key(key)), query_id)

    def read_response(self) -> tuple[int, bytes]:
        msg, query_id = netproto.read_frame(self.sock)
        if isinstance(msg, netproto.Error):
            raise ProtocolError(
                f"server {self.endpoint} returned error {msg.code}: {msg.message}"
            )
        if not isinstance(msg, netproto.Response):
            raise ProtocolError(f"expected RESPONSE, got {type(msg).__name__}")
        return query_id, msg.value

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class PirClient:
    """Client bound to a two-server deployment."""

    def __init__(
        self,
        servers: tuple[tuple[str, int], tuple[str, int]],
        timeout: float = DEFAULT_TIMEOUT,
    ):
        if len(servers) != 2:
            raise DomainError("exactly two servers are required")
        self.servers = servers
        self.timeout = timeout
        self._conns: list[_Connection] | None = None
        self.domain: DomainParams | None = None
        self.record_len: int | None = None
        self._next_query_id = 0

    def connect(self) -> PirClient:
        conns = [_Connection(ep, self.timeout) for ep in self.servers]
        try:
            acks = [conn.hello() for conn in conns]
        except BaseException:
            for conn in conns:
                conn.close()
            raise
        a, b = acks
        if (a.n_items, a.record_len, a.version) != (b.n_items, b.record_len, b.version):
            for conn in conns:
                conn.close()
            raise ConsistencyError(
                f"servers disagree on database shape: "
                f"({a.n_items}, {a.record_len}, v{a.version}) vs "
                f"({b.n_items}, {b.record_len}, v{b.version})"
            )
        self._conns = conns
        self.domain = DomainParams.for_size(a.n_items)
        self.record_len = a.record_len
        return self

    def close(self) -> None:
        if self._conns is not None:
            for conn in self._conns:
                conn.close()
            self._conns = None

    def __enter__(self) -> PirClient:
        return self.connect()

    def __exit__(self, *exc) -> None:
        self.close()

    def _session(self, i: int) -> QuerySession:
        if self._conns is None or self.domain is None:
            raise TransportError("client is not connected")
        session = QuerySession(self._next_query_id, i, self.domain, self.record_len)
        self._next_query_id += 1
        return session

    def fetch(self, i: int, rng_seed: bytes | None = None) -> bytes:
        """Retrieve record ``i``; failures raise, never return wrong data."""
        return self.fetch_many([i], rng_seed)[0]

    def fetch_many(self, indices: list[int], rng_seed: bytes | None = None) -> list[bytes]:
        """Pipelined batch fetch: all keys are sent before responses are read."""
        if self._conns is None or self.domain is None:
            raise TransportError("client is not connected")
        base_seed = rng_seed if rng_seed is not None else secrets.token_bytes(32)
        sessions = [self._session(i) for i in indices]
        single_seeded = rng_seed is not None and len(sessions) == 1
        for counter, session in enumerate(sessions):
            seed = base_seed if single_seeded else _derive_seed(base_seed, counter)
            k1, k2 = make_query(session.target_index, self.domain, seed)
            self._conns[0].send_query(session.query_id, k1)
            self._conns[1].send_query(session.query_id, k2)

        by_id: list[dict[int, bytes]] = [{}, {}]
        wanted = {s.query_id for s in sessions}
        for side, conn in enumerate(self._conns):
            while wanted - by_id[side].keys():
                qid, value = conn.read_response()
                if qid not in wanted:
                    raise ProtocolError(f"response for unknown query id {qid}")
                if len(value) != self.record_len:
                    raise ProtocolError(
                        f"subresult is {len(value)} bytes, expected {self.record_len}"
                    )
                by_id[side][qid] = value

        return [reconstruct(by_id[0][s.query_id], by_id[1][s.query_id]) for s in sessions]


def fetch(
    servers: tuple[tuple[str, int], tuple[str, int]],
    i: int,
    rng_seed: bytes | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> bytes:
    """One-shot convenience wrapper around PirClient."""
    with PirClient(servers, timeout=timeout) as client:
        return client.fetch(i, rng_seed)
