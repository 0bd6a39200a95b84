#ifndef IMPIR_AES128_H
#define IMPIR_AES128_H

#include <stddef.h>
#include <stdint.h>

/* AES-128 block primitives used by the GGM expansion kernels.
 *
 * Two child blocks are derived from a node seed as
 *     child(c) = AES128_{key=seed}(B_c) ^ B_c,   B_c = 128-bit LE constant c
 * so each expansion re-keys the cipher with the node seed.
 */

typedef struct {
    uint8_t rk[176]; /* 11 round keys, byte layout */
} impir_aes128_ks;

void impir_aes128_expand_key(const uint8_t key[16], impir_aes128_ks *ks);
void impir_aes128_encrypt_block(const impir_aes128_ks *ks, const uint8_t in[16],
                                uint8_t out[16]);

/* Derive one or both child blocks of the GGM node with the given seed. */
void impir_prf_expand_one(const uint8_t seed[16], int child, uint8_t out[16]);
void impir_prf_expand_both(const uint8_t seed[16], uint8_t left[16],
                           uint8_t right[16]);

/* "aesni" or "portable" */
const char *impir_aes128_impl(void);

/* Breadth-first GGM expansion of m nodes from level_from to level_to.
 * seeds_in:  m * 16 bytes, ts_in: m control bits (one byte each).
 * cws: depth * 16 bytes of per-level seed corrections; tcwl/tcwr: depth
 * control-bit corrections. Outputs must hold (m << (level_to - level_from))
 * entries. Returns the number of PRF expansions performed.
 */
uint64_t impir_ggm_expand_levels(const uint8_t *seeds_in, const uint8_t *ts_in,
                                 size_t m, const uint8_t *cws,
                                 const uint8_t *tcwl, const uint8_t *tcwr,
                                 int level_from, int level_to,
                                 uint8_t *seeds_out, uint8_t *ts_out);

/* Expand one node at level_from down to the leaves at `depth` and emit the
 * leaf bits, packed LSB-first, starting at bit 0 of out_bits (caller zeroes
 * the buffer). lc_lsb is the low bit of the leaf correction block. Returns
 * the number of PRF expansions performed.
 */
uint64_t impir_ggm_subtree_bits(const uint8_t seed[16], int t,
                                const uint8_t *cws, const uint8_t *tcwl,
                                const uint8_t *tcwr, int level_from, int depth,
                                int lc_lsb, uint8_t *out_bits);

/* acc ^= XOR of records[j] for j in [start, stop) whose bit is set in the
 * packed (LSB-first) selector. Record j lives at records + j * record_len.
 */
void impir_xor_scan(const uint8_t *records, const uint8_t *bits, size_t start,
                    size_t stop, size_t record_len, uint8_t *acc);

#endif /* IMPIR_AES128_H */
