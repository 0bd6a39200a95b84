"""Fixed-width record store and the naive full-scan XOR baseline.

The naive scan doubles as the correctness oracle for the simulated PIM
pipeline: every other execution path must reproduce its output bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from impir import _kernels
from impir.dpf import ShareVector
from impir.errors import CapacityError, DomainError, FormatError

DB_MAGIC = b"IMPD"
DB_VERSION = 1
_DB_HEADER = struct.Struct("<4sB3sQI")

# Refuse databases that clearly cannot live in host memory.
MAX_DB_BYTES = 1 << 40


@dataclass(frozen=True)
class Database:
    """N fixed-width records held contiguously; record j at offset j * record_len."""

    n_items: int
    record_len: int
    payload: bytes

    def __post_init__(self) -> None:
        if self.n_items < 1 or self.record_len < 1:
            raise DomainError("database needs n_items >= 1 and record_len >= 1")
        if len(self.payload) != self.n_items * self.record_len:
            raise DomainError(
                f"payload is {len(self.payload)} bytes, expected {self.n_items * self.record_len}"
            )

    @property
    def size_bytes(self) -> int:
        return self.n_items * self.record_len

    def record(self, j: int) -> bytes:
        if not 0 <= j < self.n_items:
            raise DomainError(f"record {j} outside database of {self.n_items} items")
        off = j * self.record_len
        return self.payload[off : off + self.record_len]


@dataclass(frozen=True)
class Partition:
    """Contiguous index range [dstart, dend] owned by one DPU; may be empty."""

    dpu_index: int
    dstart: int
    dend: int

    @property
    def size(self) -> int:
        return max(0, self.dend - self.dstart + 1)


@dataclass(frozen=True)
class Subresult:
    """L-byte XOR accumulator (tasklet partial, DPU subresult, or server result)."""

    value: bytes

    def __xor__(self, other: Subresult) -> Subresult:
        if len(other.value) != len(self.value):
            raise DomainError("cannot XOR subresults of different lengths")
        return Subresult(bytes(a ^ b for a, b in zip(self.value, other.value)))

    @classmethod
    def zero(cls, record_len: int) -> Subresult:
        return cls(bytes(record_len))


def generate(n_items: int, record_len: int, seed) -> Database:
    """Deterministic pseudorandom database; ``seed`` is an int or bytes."""
    if n_items < 1 or record_len < 1:
        raise DomainError("database needs n_items >= 1 and record_len >= 1")
    total = n_items * record_len
    if total > MAX_DB_BYTES:
        raise CapacityError(f"database of {total} bytes exceeds the {MAX_DB_BYTES}-byte cap")
    if isinstance(seed, (bytes, bytearray)):
        seed = int.from_bytes(seed, "little")
    rng = np.random.default_rng(seed)
    return Database(n_items, record_len, rng.bytes(total))


def save(db: Database, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DB_HEADER.pack(DB_MAGIC, DB_VERSION, b"\x00\x00\x00", db.n_items, db.record_len))
        fh.write(db.payload)


def load(path) -> Database:
    with open(path, "rb") as fh:
        header = fh.read(_DB_HEADER.size)
        if len(header) < _DB_HEADER.size:
            raise FormatError(f"file truncated inside the header at offset {len(header)}")
        magic, version, reserved, n_items, record_len = _DB_HEADER.unpack(header)
        if magic != DB_MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0, expected {DB_MAGIC!r}")
        if version != DB_VERSION:
            raise FormatError(f"unsupported version {version} at offset 4")
        if reserved != b"\x00\x00\x00":
            raise FormatError("reserved header bytes at offset 5 must be zero")
        expected = n_items * record_len
        payload = fh.read(expected + 1)
    if len(payload) < expected:
        raise FormatError(
            f"payload truncated at offset {_DB_HEADER.size + len(payload)}: "
            f"header declares {expected} bytes"
        )
    if len(payload) > expected:
        raise FormatError(f"trailing bytes after offset {_DB_HEADER.size + expected}")
    return Database(n_items, record_len, payload)


def partition_plan(n_items: int, p_dpus: int) -> list[Partition]:
    """Contiguous blocks of ceil(N/P) items; the tail block may be short.

    When P > N the surplus DPUs receive empty partitions.
    """
    if p_dpus < 1:
        raise DomainError("need at least one DPU")
    block = -(-n_items // p_dpus)
    plan = []
    for d in range(p_dpus):
        dstart = min(d * block, n_items)
        dend = min(dstart + block, n_items) - 1
        plan.append(Partition(d, dstart, dend))
    return plan


def naive_scan(db: Database, shares: ShareVector) -> Subresult:
    """Single-threaded XOR of all records whose share bit is set.

    This is both the CPU baseline and the correctness oracle for every other
    scan path.
    """
    if shares.domain.n_items != db.n_items:
        raise DomainError(
            f"share vector covers {shares.domain.n_items} items, database has {db.n_items}"
        )
    acc = bytearray(db.record_len)
    _kernels.xor_scan(db.payload, shares.bits, 0, db.n_items, db.record_len, acc)
    return Subresult(bytes(acc))
