"""Pure-Python kernel fallback.

Mirrors the API of the compiled ``impir._core`` extension. AES-128 comes from
the ``cryptography`` package (one cipher object per tree node, so expansion is
much slower than the compiled path); the XOR scan is vectorized with numpy.
Selected by ``impir._kernels`` when the extension is unavailable or when
``IMPIR_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

NAME = "python"

_BLK0 = bytes(16)
_BLK1 = bytes([1]) + bytes(15)


def impl_detail() -> str:
    return "pyca-cryptography"


def aes128_encrypt(key: bytes, block: bytes) -> bytes:
    if len(key) != 16 or len(block) != 16:
        raise ValueError("key and block must be 16 bytes")
    enc = Cipher(algorithms.AES(bytes(key)), modes.ECB()).encryptor()
    return enc.update(bytes(block))


def prf_expand(seed: bytes, child: int) -> bytes:
    if len(seed) != 16:
        raise ValueError("seed must be 16 bytes")
    if child not in (0, 1):
        raise ValueError("child must be 0 or 1")
    blk = _BLK1 if child else _BLK0
    out = aes128_encrypt(seed, blk)
    if child:
        return bytes([out[0] ^ 1]) + out[1:]
    return out


def _expand_node(seed: bytes) -> tuple[bytes, bytes]:
    # One ECB pass over both child tags shares the key schedule.
    enc = Cipher(algorithms.AES(bytes(seed)), modes.ECB()).encryptor()
    out = enc.update(_BLK0 + _BLK1)
    left = out[:16]
    right = bytes([out[16] ^ 1]) + out[17:32]
    return left, right


def expand_levels(
    seeds: bytes,
    ts: bytes,
    cws: bytes,
    tcwl: bytes,
    tcwr: bytes,
    level_from: int,
    level_to: int,
) -> tuple[bytes, bytes, int]:
    if level_to < level_from:
        raise ValueError("level_to must be >= level_from")
    cur = [bytes(seeds[i : i + 16]) for i in range(0, len(seeds), 16)]
    curt = list(ts)
    if len(curt) != len(cur):
        raise ValueError("ts length must match node count")
    count = 0
    for lvl in range(level_from, level_to):
        cw = cws[lvl * 16 : lvl * 16 + 16]
        cl, cr = tcwl[lvl], tcwr[lvl]
        nxt: list[bytes] = []
        nxtt: list[int] = []
        for s, t in zip(cur, curt):
            left, right = _expand_node(s)
            tl, tr = left[0] & 1, right[0] & 1
            if t:
                left = bytes(a ^ b for a, b in zip(left, cw))
                right = bytes(a ^ b for a, b in zip(right, cw))
                tl ^= cl
                tr ^= cr
            nxt.append(left)
            nxt.append(right)
            nxtt.append(tl)
            nxtt.append(tr)
        count += 2 * len(cur)
        cur, curt = nxt, nxtt
    return b"".join(cur), bytes(curt), count


def expand_subtree_bits(
    seed: bytes,
    t: int,
    cws: bytes,
    tcwl: bytes,
    tcwr: bytes,
    level_from: int,
    depth: int,
    lc_lsb: int,
) -> tuple[bytes, int]:
    if depth < level_from:
        raise ValueError("depth must be >= level_from")
    seeds, ts, count = expand_levels(seed, bytes([t & 1]), cws, tcwl, tcwr, level_from, depth)
    n_leaves = 1 << (depth - level_from)
    out = bytearray((n_leaves + 7) // 8)
    for i in range(n_leaves):
        bit = (seeds[16 * i] & 1) ^ (lc_lsb if ts[i] else 0)
        if bit:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out), count


def xor_scan(records, bits, start: int, stop: int, record_len: int, acc: bytearray) -> None:
    if stop > len(bits) * 8:
        raise ValueError("selector shorter than scan range")
    if stop * record_len > len(records):
        raise ValueError("records buffer shorter than scan range")
    if len(acc) != record_len:
        raise ValueError("accumulator length must equal record_len")
    if start >= stop:
        return
    sel = np.unpackbits(np.frombuffer(bits, dtype=np.uint8), bitorder="little")[start:stop]
    arr = np.frombuffer(records, dtype=np.uint8, count=stop * record_len)
    arr = arr.reshape(-1, record_len)[start:stop]
    chosen = arr[sel.astype(bool)]
    if chosen.shape[0] == 0:
        return
    folded = np.bitwise_xor.reduce(chosen, axis=0)
    np.bitwise_xor(np.frombuffer(acc, dtype=np.uint8), folded, out=np.frombuffer(acc, dtype=np.uint8))
