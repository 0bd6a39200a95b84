#include "_aes128.h"

#include <stdlib.h>
#include <string.h>

#if defined(__AES__) && defined(__SSE2__)
#define IMPIR_HAVE_AESNI 1
#include <emmintrin.h>
#include <wmmintrin.h>
#endif

/* ------------------------------------------------------------------ */
/* Portable byte-oriented AES-128 (always compiled; used as the key    */
/* schedule reference and as the cipher when AES-NI is unavailable).   */
/* ------------------------------------------------------------------ */

static const uint8_t SBOX[256] = {
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b,
    0xfe, 0xd7, 0xab, 0x76, 0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0,
    0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0, 0xb7, 0xfd, 0x93, 0x26,
    0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2,
    0xeb, 0x27, 0xb2, 0x75, 0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0,
    0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84, 0x53, 0xd1, 0x00, 0xed,
    0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f,
    0x50, 0x3c, 0x9f, 0xa8, 0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5,
    0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2, 0xcd, 0x0c, 0x13, 0xec,
    0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14,
    0xde, 0x5e, 0x0b, 0xdb, 0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c,
    0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79, 0xe7, 0xc8, 0x37, 0x6d,
    0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f,
    0x4b, 0xbd, 0x8b, 0x8a, 0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e,
    0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e, 0xe1, 0xf8, 0x98, 0x11,
    0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f,
    0xb0, 0x54, 0xbb, 0x16,
};

static const uint8_t RCON[10] = {0x01, 0x02, 0x04, 0x08, 0x10,
                                 0x20, 0x40, 0x80, 0x1b, 0x36};

static void portable_expand_key(const uint8_t key[16], impir_aes128_ks *ks) {
    uint8_t *rk = ks->rk;
    int i, k, r = 0;
    memcpy(rk, key, 16);
    for (i = 16; i < 176; i += 4) {
        uint8_t t[4];
        memcpy(t, rk + i - 4, 4);
        if (i % 16 == 0) {
            uint8_t tmp = t[0];
            t[0] = SBOX[t[1]] ^ RCON[r++];
            t[1] = SBOX[t[2]];
            t[2] = SBOX[t[3]];
            t[3] = SBOX[tmp];
        }
        for (k = 0; k < 4; k++) rk[i + k] = rk[i - 16 + k] ^ t[k];
    }
}

static inline uint8_t xt(uint8_t x) {
    return (uint8_t)((x << 1) ^ ((x >> 7) * 0x1b));
}

/* Flat state s[4*col + row]; SHIFT folds ShiftRows into the SBOX lookup. */
static const uint8_t SHIFT[16] = {0, 5, 10, 15, 4,  9, 14, 3,
                                  8, 13, 2, 7,  12, 1, 6,  11};

static void portable_encrypt(const impir_aes128_ks *ks, const uint8_t in[16],
                             uint8_t out[16]) {
    uint8_t s[16], t[16];
    int i, c, round;
    for (i = 0; i < 16; i++) s[i] = in[i] ^ ks->rk[i];
    for (round = 1; round <= 10; round++) {
        for (i = 0; i < 16; i++) t[i] = SBOX[s[SHIFT[i]]];
        if (round < 10) {
            for (c = 0; c < 4; c++) {
                uint8_t a0 = t[4 * c], a1 = t[4 * c + 1];
                uint8_t a2 = t[4 * c + 2], a3 = t[4 * c + 3];
                uint8_t x = a0 ^ a1 ^ a2 ^ a3;
                s[4 * c] = a0 ^ x ^ xt((uint8_t)(a0 ^ a1));
                s[4 * c + 1] = a1 ^ x ^ xt((uint8_t)(a1 ^ a2));
                s[4 * c + 2] = a2 ^ x ^ xt((uint8_t)(a2 ^ a3));
                s[4 * c + 3] = a3 ^ x ^ xt((uint8_t)(a3 ^ a0));
            }
        } else {
            memcpy(s, t, 16);
        }
        for (i = 0; i < 16; i++) s[i] ^= ks->rk[16 * round + i];
    }
    memcpy(out, s, 16);
}

/* ------------------------------------------------------------------ */
/* AES-NI path                                                          */
/* ------------------------------------------------------------------ */

#ifdef IMPIR_HAVE_AESNI

static inline __m128i ke_step(__m128i key, __m128i kg) {
    kg = _mm_shuffle_epi32(kg, _MM_SHUFFLE(3, 3, 3, 3));
    key = _mm_xor_si128(key, _mm_slli_si128(key, 4));
    key = _mm_xor_si128(key, _mm_slli_si128(key, 4));
    key = _mm_xor_si128(key, _mm_slli_si128(key, 4));
    return _mm_xor_si128(key, kg);
}

#define KE(rk, i, rcon) rk[i] = ke_step(rk[i - 1], _mm_aeskeygenassist_si128(rk[i - 1], rcon))

static inline void aesni_expand(__m128i rk[11], const uint8_t key[16]) {
    rk[0] = _mm_loadu_si128((const __m128i *)key);
    KE(rk, 1, 0x01);
    KE(rk, 2, 0x02);
    KE(rk, 3, 0x04);
    KE(rk, 4, 0x08);
    KE(rk, 5, 0x10);
    KE(rk, 6, 0x20);
    KE(rk, 7, 0x40);
    KE(rk, 8, 0x80);
    KE(rk, 9, 0x1b);
    KE(rk, 10, 0x36);
}

#endif /* IMPIR_HAVE_AESNI */

/* ------------------------------------------------------------------ */
/* Public block API                                                     */
/* ------------------------------------------------------------------ */

const char *impir_aes128_impl(void) {
#ifdef IMPIR_HAVE_AESNI
    return "aesni";
#else
    return "portable";
#endif
}

void impir_aes128_expand_key(const uint8_t key[16], impir_aes128_ks *ks) {
#ifdef IMPIR_HAVE_AESNI
    __m128i rk[11];
    int i;
    aesni_expand(rk, key);
    for (i = 0; i < 11; i++)
        _mm_storeu_si128((__m128i *)(ks->rk + 16 * i), rk[i]);
#else
    portable_expand_key(key, ks);
#endif
}

void impir_aes128_encrypt_block(const impir_aes128_ks *ks, const uint8_t in[16],
                                uint8_t out[16]) {
#ifdef IMPIR_HAVE_AESNI
    __m128i b = _mm_loadu_si128((const __m128i *)in);
    int i;
    b = _mm_xor_si128(b, _mm_loadu_si128((const __m128i *)(ks->rk)));
    for (i = 1; i < 10; i++)
        b = _mm_aesenc_si128(b, _mm_loadu_si128((const __m128i *)(ks->rk + 16 * i)));
    b = _mm_aesenclast_si128(b, _mm_loadu_si128((const __m128i *)(ks->rk + 160)));
    _mm_storeu_si128((__m128i *)out, b);
#else
    portable_encrypt(ks, in, out);
#endif
}

void impir_prf_expand_one(const uint8_t seed[16], int child, uint8_t out[16]) {
    uint8_t blk[16] = {0};
    impir_aes128_ks ks;
    blk[0] = (uint8_t)(child & 1);
    impir_aes128_expand_key(seed, &ks);
    impir_aes128_encrypt_block(&ks, blk, out);
    out[0] ^= blk[0];
}

void impir_prf_expand_both(const uint8_t seed[16], uint8_t left[16],
                           uint8_t right[16]) {
#ifdef IMPIR_HAVE_AESNI
    __m128i rk[11];
    __m128i b1, l, r;
    int i;
    aesni_expand(rk, seed);
    b1 = _mm_cvtsi32_si128(1);
    l = rk[0]; /* zero block ^ rk0 */
    r = _mm_xor_si128(b1, rk[0]);
    for (i = 1; i < 10; i++) {
        l = _mm_aesenc_si128(l, rk[i]);
        r = _mm_aesenc_si128(r, rk[i]);
    }
    l = _mm_aesenclast_si128(l, rk[10]);
    r = _mm_aesenclast_si128(r, rk[10]);
    r = _mm_xor_si128(r, b1); /* feed-forward of the child tag */
    _mm_storeu_si128((__m128i *)left, l);
    _mm_storeu_si128((__m128i *)right, r);
#else
    impir_aes128_ks ks;
    uint8_t blk[16] = {0};
    portable_expand_key(seed, &ks);
    portable_encrypt(&ks, blk, left);
    blk[0] = 1;
    portable_encrypt(&ks, blk, right);
    right[0] ^= 1;
#endif
}

/* ------------------------------------------------------------------ */
/* GGM tree kernels                                                     */
/* ------------------------------------------------------------------ */

static inline void xor16(uint8_t *a, const uint8_t *b) {
    int i;
    for (i = 0; i < 16; i++) a[i] ^= b[i];
}

uint64_t impir_ggm_expand_levels(const uint8_t *seeds_in, const uint8_t *ts_in,
                                 size_t m, const uint8_t *cws,
                                 const uint8_t *tcwl, const uint8_t *tcwr,
                                 int level_from, int level_to,
                                 uint8_t *seeds_out, uint8_t *ts_out) {
    int span = level_to - level_from;
    size_t m_out = m << span;
    uint64_t count = 0;
    uint8_t *bufA, *bufB, *tA, *tB;
    size_t n, i;
    int lvl;

    if (span <= 0) {
        memcpy(seeds_out, seeds_in, m * 16);
        memcpy(ts_out, ts_in, m);
        return 0;
    }
    bufA = (uint8_t *)malloc(m_out * 16);
    bufB = (uint8_t *)malloc(m_out * 16);
    tA = (uint8_t *)malloc(m_out);
    tB = (uint8_t *)malloc(m_out);
    memcpy(bufA, seeds_in, m * 16);
    memcpy(tA, ts_in, m);
    n = m;
    for (lvl = level_from; lvl < level_to; lvl++) {
        const uint8_t *cw = cws + (size_t)lvl * 16;
        int cl = tcwl[lvl], cr = tcwr[lvl];
        uint8_t *tmp;
        for (i = 0; i < n; i++) {
            uint8_t *sl = bufB + 32 * i;
            uint8_t *sr = sl + 16;
            int tl, tr;
            impir_prf_expand_both(bufA + 16 * i, sl, sr);
            tl = sl[0] & 1;
            tr = sr[0] & 1;
            if (tA[i]) {
                xor16(sl, cw);
                xor16(sr, cw);
                tl ^= cl;
                tr ^= cr;
            }
            tB[2 * i] = (uint8_t)tl;
            tB[2 * i + 1] = (uint8_t)tr;
        }
        count += 2 * (uint64_t)n;
        n <<= 1;
        tmp = bufA; bufA = bufB; bufB = tmp;
        tmp = tA; tA = tB; tB = tmp;
    }
    memcpy(seeds_out, bufA, m_out * 16);
    memcpy(ts_out, tA, m_out);
    free(bufA);
    free(bufB);
    free(tA);
    free(tB);
    return count;
}

/* Chunked depth-first expansion keeps the working set in cache:
 * 2^GGM_CHUNK nodes of 16 bytes per ping/pong buffer. */
#define GGM_CHUNK 12

static uint64_t subtree_rec(const uint8_t seed[16], int t, const uint8_t *cws,
                            const uint8_t *tcwl, const uint8_t *tcwr, int level,
                            int depth, int lc_lsb, uint8_t *out_bits,
                            uint64_t bit_base) {
    int rel = depth - level;
    int step, lvl;
    size_t cap, n, i;
    uint64_t count = 0;
    uint8_t *bufA, *bufB, *tA, *tB;

    if (rel == 0) {
        int bit = (seed[0] & 1) ^ (t ? lc_lsb : 0);
        if (bit) out_bits[bit_base >> 3] |= (uint8_t)(1u << (bit_base & 7));
        return 0;
    }
    step = rel < GGM_CHUNK ? rel : GGM_CHUNK;
    cap = (size_t)1 << step;
    bufA = (uint8_t *)malloc(cap * 16);
    bufB = (uint8_t *)malloc(cap * 16);
    tA = (uint8_t *)malloc(cap);
    tB = (uint8_t *)malloc(cap);
    memcpy(bufA, seed, 16);
    tA[0] = (uint8_t)(t & 1);
    n = 1;
    for (lvl = level; lvl < level + step; lvl++) {
        const uint8_t *cw = cws + (size_t)lvl * 16;
        int cl = tcwl[lvl], cr = tcwr[lvl];
        uint8_t *tmp;
        for (i = 0; i < n; i++) {
            uint8_t *sl = bufB + 32 * i;
            uint8_t *sr = sl + 16;
            int tl, tr;
            impir_prf_expand_both(bufA + 16 * i, sl, sr);
            tl = sl[0] & 1;
            tr = sr[0] & 1;
            if (tA[i]) {
                xor16(sl, cw);
                xor16(sr, cw);
                tl ^= cl;
                tr ^= cr;
            }
            tB[2 * i] = (uint8_t)tl;
            tB[2 * i + 1] = (uint8_t)tr;
        }
        count += 2 * (uint64_t)n;
        n <<= 1;
        tmp = bufA; bufA = bufB; bufB = tmp;
        tmp = tA; tA = tB; tB = tmp;
    }
    if (level + step == depth) {
        for (i = 0; i < n; i++) {
            int bit = (bufA[16 * i] & 1) ^ (tA[i] ? lc_lsb : 0);
            uint64_t pos = bit_base + i;
            if (bit) out_bits[pos >> 3] |= (uint8_t)(1u << (pos & 7));
        }
    } else {
        uint64_t leaves_per = 1ull << (depth - level - step);
        for (i = 0; i < n; i++)
            count += subtree_rec(bufA + 16 * i, tA[i], cws, tcwl, tcwr,
                                 level + step, depth, lc_lsb, out_bits,
                                 bit_base + i * leaves_per);
    }
    free(bufA);
    free(bufB);
    free(tA);
    free(tB);
    return count;
}

uint64_t impir_ggm_subtree_bits(const uint8_t seed[16], int t,
                                const uint8_t *cws, const uint8_t *tcwl,
                                const uint8_t *tcwr, int level_from, int depth,
                                int lc_lsb, uint8_t *out_bits) {
    return subtree_rec(seed, t, cws, tcwl, tcwr, level_from, depth, lc_lsb,
                       out_bits, 0);
}

/* ------------------------------------------------------------------ */
/* Selector-driven XOR accumulation over fixed-width records            */
/* ------------------------------------------------------------------ */

void impir_xor_scan(const uint8_t *records, const uint8_t *bits, size_t start,
                    size_t stop, size_t record_len, uint8_t *acc) {
    size_t j, k;
    for (j = start; j < stop; j++) {
        if ((bits[j >> 3] >> (j & 7)) & 1) {
            const uint8_t *rec = records + j * record_len;
            for (k = 0; k < record_len; k++) acc[k] ^= rec[k];
        }
    }
}
