# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels: re-keyed AES-128, GGM tree expansion and the XOR scan.

The pure-Python twin of this module is ``impir._pykernels``; both expose the
same functions and ``impir._kernels`` picks one at import time.
"""

from libc.stdint cimport uint8_t, uint64_t

cdef extern from "_aes128.h" nogil:
    ctypedef struct impir_aes128_ks:
        uint8_t rk[176]
    void impir_aes128_expand_key(const uint8_t *key, impir_aes128_ks *ks)
    void impir_aes128_encrypt_block(const impir_aes128_ks *ks, const uint8_t *inp, uint8_t *out)
    void impir_prf_expand_one(const uint8_t *seed, int child, uint8_t *out)
    void impir_prf_expand_both(const uint8_t *seed, uint8_t *left, uint8_t *right)
    const char *impir_aes128_impl()
    uint64_t impir_ggm_expand_levels(const uint8_t *seeds_in, const uint8_t *ts_in,
                                     size_t m, const uint8_t *cws, const uint8_t *tcwl,
                                     const uint8_t *tcwr, int level_from, int level_to,
                                     uint8_t *seeds_out, uint8_t *ts_out)
    uint64_t impir_ggm_subtree_bits(const uint8_t *seed, int t, const uint8_t *cws,
                                    const uint8_t *tcwl, const uint8_t *tcwr,
                                    int level_from, int depth, int lc_lsb,
                                    uint8_t *out_bits)
    void impir_xor_scan(const uint8_t *records, const uint8_t *bits, size_t start,
                        size_t stop, size_t record_len, uint8_t *acc)

NAME = "compiled"


def impl_detail():
    """Cipher implementation selected at compile time ("aesni" or "portable")."""
    return impir_aes128_impl().decode("ascii")


def aes128_encrypt(const uint8_t[::1] key, const uint8_t[::1] block):
    if key.shape[0] != 16 or block.shape[0] != 16:
        raise ValueError("key and block must be 16 bytes")
    cdef impir_aes128_ks ks
    out = bytearray(16)
    cdef uint8_t[::1] ov = out
    with nogil:
        impir_aes128_expand_key(&key[0], &ks)
        impir_aes128_encrypt_block(&ks, &block[0], &ov[0])
    return bytes(out)


def prf_expand(const uint8_t[::1] seed, int child):
    if seed.shape[0] != 16:
        raise ValueError("seed must be 16 bytes")
    if child not in (0, 1):
        raise ValueError("child must be 0 or 1")
    out = bytearray(16)
    cdef uint8_t[::1] ov = out
    with nogil:
        impir_prf_expand_one(&seed[0], child, &ov[0])
    return bytes(out)


def expand_levels(const uint8_t[::1] seeds, const uint8_t[::1] ts,
                  const uint8_t[::1] cws, const uint8_t[::1] tcwl,
                  const uint8_t[::1] tcwr, int level_from, int level_to):
    """Breadth-first expansion of ``m`` sibling nodes; returns (seeds, ts, n_prf)."""
    cdef size_t m = seeds.shape[0] // 16
    if <size_t>ts.shape[0] != m:
        raise ValueError("ts length must match node count")
    if level_to < level_from:
        raise ValueError("level_to must be >= level_from")
    cdef size_t m_out = m << (level_to - level_from)
    seeds_out = bytearray(m_out * 16)
    ts_out = bytearray(m_out)
    cdef uint8_t[::1] so = seeds_out
    cdef uint8_t[::1] to = ts_out
    cdef uint64_t n
    with nogil:
        n = impir_ggm_expand_levels(&seeds[0], &ts[0], m, &cws[0], &tcwl[0],
                                    &tcwr[0], level_from, level_to, &so[0], &to[0])
    return bytes(seeds_out), bytes(ts_out), n


def expand_subtree_bits(const uint8_t[::1] seed, int t, const uint8_t[::1] cws,
                        const uint8_t[::1] tcwl, const uint8_t[::1] tcwr,
                        int level_from, int depth, int lc_lsb):
    """Expand one node to its leaves; returns (packed LSB-first bits, n_prf)."""
    if seed.shape[0] != 16:
        raise ValueError("seed must be 16 bytes")
    if depth < level_from:
        raise ValueError("depth must be >= level_from")
    cdef uint64_t n_leaves = (<uint64_t>1) << (depth - level_from)
    out = bytearray((n_leaves + 7) // 8)
    cdef uint8_t[::1] ov = out
    cdef uint64_t n
    with nogil:
        n = impir_ggm_subtree_bits(&seed[0], t, &cws[0], &tcwl[0], &tcwr[0],
                                   level_from, depth, lc_lsb, &ov[0])
    return bytes(out), n


def xor_scan(const uint8_t[::1] records, const uint8_t[::1] bits, size_t start,
             size_t stop, size_t record_len, uint8_t[::1] acc):
    """acc ^= XOR of records[j] for j in [start, stop) with selector bit set."""
    if stop > <size_t>(bits.shape[0]) * 8:
        raise ValueError("selector shorter than scan range")
    if stop * record_len > <size_t>records.shape[0]:
        raise ValueError("records buffer shorter than scan range")
    if <size_t>acc.shape[0] != record_len:
        raise ValueError("accumulator length must equal record_len")
    if start >= stop:
        return
    with nogil:
        impir_xor_scan(&records[0], &bits[0], start, stop, record_len, &acc[0])
