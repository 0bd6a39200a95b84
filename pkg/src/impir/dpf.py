"""Distributed point function over a binary tree of AES-128 expansions.

A point function equal to 1 at exactly one index is split into two keys.
Each key walks the same expansion tree from its own root seed, applying a
per-level 16-byte seed correction and a pair of control-bit corrections
whenever its control bit is set. Off the path to the target, the two keys'
states collapse to equal values; on the path they stay distinct with control
bits that differ, so the leaf outputs XOR to the one-hot indicator.

Leaf output for one key is the low bit of (leaf seed XOR the leaf correction
when the control bit is set). Single-child expansion is
``AES128_{key=seed}(B_c) ^ B_c`` with ``B_c`` the 128-bit little-endian
constant c; the child's control bit is the low bit of its block.
"""

from __future__ import annotations

import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from impir import _kernels
from impir.errors import ConfigurationError, DomainError, FormatError

BLOCK_BYTES = 16
LAMBDA_BITS = 128

KEY_MAGIC = b"IMPK"
KEY_VERSION = 1
_KEY_HEADER = struct.Struct("<4sBBBBQ")

_lock = threading.Lock()
_prf_calls = 0


def _count_prf(n: int) -> None:
    global _prf_calls
    with _lock:
        _prf_calls += n


def prf_call_count() -> int:
    """Monotone count of PRF expansions performed by this module."""
    return _prf_calls


def _ceil_log2(n: int) -> int:
    return max(1, (n - 1).bit_length())


def _block(tag: int) -> bytes:
    return bytes([tag]) + bytes(15)


def _xor16(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(16, "little")


@dataclass(frozen=True)
class DomainParams:
    """Evaluation domain: N entries over a tree of ceil(log2 N) levels."""

    n_items: int
    depth: int
    lambda_bits: int = LAMBDA_BITS

    def __post_init__(self) -> None:
        if self.n_items < 2:
            raise DomainError(f"domain needs at least 2 items, got {self.n_items}")
        if self.depth != _ceil_log2(self.n_items):
            raise DomainError(
                f"depth {self.depth} inconsistent with n_items {self.n_items}"
            )
        if self.lambda_bits != LAMBDA_BITS:
            raise DomainError("security parameter is fixed at 128 bits")

    @classmethod
    def for_size(cls, n_items: int) -> DomainParams:
        return cls(n_items, _ceil_log2(n_items))


@dataclass(frozen=True)
class PointFunction:
    """Zero everywhere except target_index, where it equals target_value."""

    target_index: int
    target_value: int = 1

    def __post_init__(self) -> None:
        if self.target_value not in (0, 1):
            raise DomainError("target_value must be a bit")


@dataclass(frozen=True)
class CorrectionWord:
    seed_cw: bytes
    t_left: int
    t_right: int

    def __post_init__(self) -> None:
        if len(self.seed_cw) != BLOCK_BYTES:
            raise DomainError("seed correction must be 16 bytes")
        if self.t_left not in (0, 1) or self.t_right not in (0, 1):
            raise DomainError("control-bit corrections must be bits")


@dataclass(frozen=True)
class DpfKey:
    """One party's share of a point function.

    ``party_id`` fixes the root control bit (party 1 -> 0, party 2 -> 1).
    """

    party_id: int
    domain: DomainParams
    root_seed: bytes
    correction_words: tuple[CorrectionWord, ...]
    leaf_correction: bytes

    def __post_init__(self) -> None:
        if self.party_id not in (1, 2):
            raise DomainError("party_id must be 1 or 2")
        if len(self.root_seed) != BLOCK_BYTES or len(self.leaf_correction) != BLOCK_BYTES:
            raise DomainError("seed material must be 16 bytes")
        if len(self.correction_words) != self.domain.depth:
            raise DomainError("one correction word required per tree level")

    @property
    def root_control_bit(self) -> int:
        return self.party_id - 1

    def serialized_size(self) -> int:
        return _KEY_HEADER.size + 16 + 17 * self.domain.depth + 16


@dataclass(frozen=True)
class ShareVector:
    """Packed single-key evaluation bits; bit j is LSB-first in byte j // 8."""

    domain: DomainParams
    bits: bytes

    def __post_init__(self) -> None:
        n = self.domain.n_items
        if len(self.bits) != (n + 7) // 8:
            raise DomainError(f"expected {(n + 7) // 8} packed bytes, got {len(self.bits)}")
        if n % 8 and self.bits[-1] >> (n % 8):
            raise DomainError("bits beyond n_items must be zero")

    def __len__(self) -> int:
        return self.domain.n_items

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.domain.n_items:
            raise DomainError(f"index {j} outside domain of {self.domain.n_items}")
        return (self.bits[j >> 3] >> (j & 7)) & 1

    def __xor__(self, other: ShareVector) -> ShareVector:
        if other.domain != self.domain:
            raise DomainError("cannot XOR share vectors from different domains")
        return ShareVector(self.domain, bytes(a ^ b for a, b in zip(self.bits, other.bits)))

    def hamming_weight(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.domain.n_items) + self.bits

    @classmethod
    def from_bytes(cls, data: bytes) -> ShareVector:
        if len(data) < 8:
            raise FormatError("share vector blob shorter than its header")
        (n,) = struct.unpack_from("<Q", data)
        body = data[8:]
        if len(body) != (n + 7) // 8:
            raise FormatError(f"share vector body has {len(body)} bytes, expected {(n + 7) // 8}")
        return cls(DomainParams.for_size(n), bytes(body))

    @classmethod
    def from_bits(cls, domain: DomainParams, bits) -> ShareVector:
        packed = bytearray((domain.n_items + 7) // 8)
        for j, b in enumerate(bits):
            if b:
                packed[j >> 3] |= 1 << (j & 7)
        return cls(domain, bytes(packed))

    @classmethod
    def one_hot(cls, domain: DomainParams, index: int) -> ShareVector:
        packed = bytearray((domain.n_items + 7) // 8)
        packed[index >> 3] |= 1 << (index & 7)
        return cls(domain, bytes(packed))

    @classmethod
    def zero(cls, domain: DomainParams) -> ShareVector:
        return cls(domain, bytes((domain.n_items + 7) // 8))


def prf_expand(seed: bytes, child: int) -> bytes:
    """Expand one child block of a tree node (counted toward the PRF budget)."""
    out = _kernels.prf_expand(seed, child)
    _count_prf(1)
    return out


def gen(domain: DomainParams, point: PointFunction, rng_seed: bytes) -> tuple[DpfKey, DpfKey]:
    """Split ``point`` into two keys; deterministic in ``rng_seed`` (32 bytes).

    The two halves of ``rng_seed`` become the parties' root seeds.
    """
    if not 0 <= point.target_index < domain.n_items:
        raise DomainError(
            f"target index {point.target_index} outside domain of {domain.n_items} items"
        )
    if len(rng_seed) != 32:
        raise DomainError("rng_seed must supply 256 bits of entropy")

    depth = domain.depth
    seeds = [rng_seed[:16], rng_seed[16:]]
    ts = [0, 1]
    words = []
    for level in range(depth):
        path_bit = (point.target_index >> (depth - 1 - level)) & 1
        left = [prf_expand(seeds[p], 0) for p in (0, 1)]
        right = [prf_expand(seeds[p], 1) for p in (0, 1)]
        tl = [left[p][0] & 1 for p in (0, 1)]
        tr = [right[p][0] & 1 for p in (0, 1)]

        lose = left if path_bit else right
        seed_cw = _xor16(lose[0], lose[1])
        tcw_l = tl[0] ^ tl[1] ^ path_bit ^ 1
        tcw_r = tr[0] ^ tr[1] ^ path_bit
        words.append(CorrectionWord(seed_cw, tcw_l, tcw_r))

        for p in (0, 1):
            keep_seed = right[p] if path_bit else left[p]
            keep_t = tr[p] if path_bit else tl[p]
            if ts[p]:
                seeds[p] = _xor16(keep_seed, seed_cw)
                ts[p] = keep_t ^ (tcw_r if path_bit else tcw_l)
            else:
                seeds[p] = keep_seed
                ts[p] = keep_t

    leaf_correction = _xor16(_xor16(seeds[0], seeds[1]), _block(point.target_value))
    cw = tuple(words)
    k1 = DpfKey(1, domain, rng_seed[:16], cw, leaf_correction)
    k2 = DpfKey(2, domain, rng_seed[16:], cw, leaf_correction)
    return k1, k2


def eval_point(key: DpfKey, j: int) -> int:
    """Evaluate the key at a single index by walking its root-to-leaf path."""
    domain = key.domain
    if not 0 <= j < domain.n_items:
        raise DomainError(f"index {j} outside domain of {domain.n_items} items")
    depth = domain.depth
    seed = key.root_seed
    t = key.root_control_bit
    for level in range(depth):
        child = (j >> (depth - 1 - level)) & 1
        block = prf_expand(seed, child)
        tc = block[0] & 1
        if t:
            word = key.correction_words[level]
            block = _xor16(block, word.seed_cw)
            tc ^= word.t_right if child else word.t_left
        seed, t = block, tc
    out = seed[0] & 1
    if t:
        out ^= key.leaf_correction[0] & 1
    return out


def _flat_words(key: DpfKey) -> tuple[bytes, bytes, bytes]:
    cws = b"".join(w.seed_cw for w in key.correction_words)
    tcwl = bytes(w.t_left for w in key.correction_words)
    tcwr = bytes(w.t_right for w in key.correction_words)
    return cws, tcwl, tcwr


def eval_full(key: DpfKey, workers: int = 1) -> ShareVector:
    """Evaluate the key on the whole domain.

    A master pass expands the tree breadth-first to the level with ``workers``
    nodes, then each worker expands one perfect subtree; the output is
    bit-identical for every worker count.
    """
    domain = key.domain
    depth = domain.depth
    if workers < 1 or workers & (workers - 1):
        raise ConfigurationError(f"workers must be a power of two, got {workers}")
    if workers > 1 << (depth - 1):
        raise ConfigurationError(
            f"workers {workers} exceeds the {1 << (depth - 1)} subtrees of a depth-{depth} tree"
        )
    split_level = workers.bit_length() - 1
    cws, tcwl, tcwr = _flat_words(key)
    lc_lsb = key.leaf_correction[0] & 1

    seeds, ts, master_count = _kernels.expand_levels(
        key.root_seed, bytes([key.root_control_bit]), cws, tcwl, tcwr, 0, split_level
    )
    _count_prf(master_count)

    def run_subtree(w: int) -> tuple[bytes, int]:
        return _kernels.expand_subtree_bits(
            seeds[16 * w : 16 * w + 16], ts[w], cws, tcwl, tcwr, split_level, depth, lc_lsb
        )

    if workers == 1:
        chunks = [run_subtree(0)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_subtree, range(workers)))
    _count_prf(sum(c for _, c in chunks))

    sub_leaves = 1 << (depth - split_level)
    if sub_leaves % 8 == 0:
        packed = b"".join(bits for bits, _ in chunks)
    else:
        acc = 0
        for w, (bits, _) in enumerate(chunks):
            acc |= int.from_bytes(bits, "little") << (w * sub_leaves)
        packed = acc.to_bytes(((1 << depth) + 7) // 8, "little")

    n = domain.n_items
    out = bytearray(packed[: (n + 7) // 8])
    if n % 8:
        out[-1] &= (1 << (n % 8)) - 1
    return ShareVector(domain, bytes(out))


def serialize_key(key: DpfKey) -> bytes:
    out = bytearray(
        _KEY_HEADER.pack(
            KEY_MAGIC, KEY_VERSION, key.party_id, key.domain.depth, 0, key.domain.n_items
        )
    )
    out += key.root_seed
    for word in key.correction_words:
        out += word.seed_cw
        out.append(word.t_left | (word.t_right << 1))
    out += key.leaf_correction
    return bytes(out)


def deserialize_key(data: bytes) -> DpfKey:
    if len(data) < _KEY_HEADER.size:
        raise FormatError("key blob shorter than its header")
    magic, version, party_id, depth, reserved, n_items = _KEY_HEADER.unpack_from(data)
    if magic != KEY_MAGIC:
        raise FormatError(f"bad key magic {magic!r}, expected {KEY_MAGIC!r}")
    if version != KEY_VERSION:
        raise FormatError(f"unsupported key version {version}")
    if reserved != 0:
        raise FormatError("reserved header byte must be zero")
    if party_id not in (1, 2):
        raise FormatError(f"party_id must be 1 or 2, got {party_id}")
    if n_items < 2 or depth != _ceil_log2(n_items):
        raise FormatError(f"depth {depth} inconsistent with n_items {n_items}")
    expected = _KEY_HEADER.size + 16 + 17 * depth + 16
    if len(data) != expected:
        raise FormatError(f"key blob is {len(data)} bytes, expected {expected}")

    off = _KEY_HEADER.size
    root_seed = data[off : off + 16]
    off += 16
    words = []
    for _ in range(depth):
        seed_cw = data[off : off + 16]
        ctrl = data[off + 16]
        if ctrl & ~0x03:
            raise FormatError(f"control byte at offset {off + 16} has reserved bits set")
        words.append(CorrectionWord(seed_cw, ctrl & 1, (ctrl >> 1) & 1))
        off += 17
    leaf_correction = data[off : off + 16]
    return DpfKey(party_id, DomainParams(n_items, depth), root_seed, tuple(words), leaf_correction)
