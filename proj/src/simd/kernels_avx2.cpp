// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compiled with -mavx2 -mfma. Nothing in this file may run before the dispatcher
// has confirmed CPU support.
#include "delrec/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <algorithm>
#include <cstdint>
#include <vector>

namespace delrec::simd {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four dot products sharing one pass over the A row.
inline void dot4(const double* a, const double* b0, const double* b1, const double* b2,
                 const double* b3, std::size_t k, double out[4]) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(a + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
    }
    out[0] = hsum(s0);
    out[1] = hsum(s1);
    out[2] = hsum(s2);
    out[3] = hsum(s3);
    for (; p < k; ++p) {
        out[0] += a[p] * b0[p];
        out[1] += a[p] * b1[p];
        out[2] += a[p] * b2[p];
        out[3] += a[p] * b3[p];
    }
}

// Register-blocked update of an MR x 8 tile of C:
//   C[r][j] += sum_p A(r, p) * B[p][j],  A(r, p) = a[r * ars + p * acs],
// for p in [0, k) and j < ncols (ncols <= 8, partial tiles use masked loads).
template <int MR>
inline void tile(std::size_t k, const double* a, std::size_t ars, std::size_t acs, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc, std::size_t ncols) {
    __m256d acc[MR][2];
    for (int r = 0; r < MR; ++r) acc[r][0] = acc[r][1] = _mm256_setzero_pd();
    if (ncols == 8) {
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
            const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
            for (int r = 0; r < MR; ++r) {
                const __m256d av = _mm256_broadcast_sd(a + r * ars + p * acs);
                acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
                acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
            }
        }
        for (int r = 0; r < MR; ++r) {
            double* cr = c + r * ldc;
            _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), acc[r][0]));
            _mm256_storeu_pd(cr + 4, _mm256_add_pd(_mm256_loadu_pd(cr + 4), acc[r][1]));
        }
        return;
    }
    alignas(32) std::int64_t bits[8];
    for (std::size_t j = 0; j < 8; ++j) bits[j] = j < ncols ? -1 : 0;
    const __m256i m0 = _mm256_load_si256(reinterpret_cast<const __m256i*>(bits));
    const __m256i m1 = _mm256_load_si256(reinterpret_cast<const __m256i*>(bits + 4));
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_maskload_pd(b + p * ldb, m0);
        const __m256d b1 = _mm256_maskload_pd(b + p * ldb + 4, m1);
        for (int r = 0; r < MR; ++r) {
            const __m256d av = _mm256_broadcast_sd(a + r * ars + p * acs);
            acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
    }
    for (int r = 0; r < MR; ++r) {
        double* cr = c + r * ldc;
        _mm256_maskstore_pd(cr, m0, _mm256_add_pd(_mm256_maskload_pd(cr, m0), acc[r][0]));
        _mm256_maskstore_pd(cr + 4, m1, _mm256_add_pd(_mm256_maskload_pd(cr + 4, m1), acc[r][1]));
    }
}

// C(m x n) += A(m x k) * B(k x n) with A addressed through (ars, acs).
void blocked_update(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
                    std::size_t acs, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    constexpr std::size_t kKc = 256;
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
        const std::size_t kc = std::min(kKc, k - p0);
        const double* ap = a + p0 * acs;
        const double* bp = b + p0 * ldb;
        for (std::size_t j = 0; j < n; j += 8) {
            const std::size_t nc = std::min<std::size_t>(8, n - j);
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) tile<4>(kc, ap + i * ars, ars, acs, bp + j, ldb, c + i * ldc + j, ldc, nc);
            for (; i < m; ++i) tile<1>(kc, ap + i * ars, ars, acs, bp + j, ldb, c + i * ldc + j, ldc, nc);
        }
    }
}

void zero_block(std::size_t m, std::size_t n, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = 0.0;
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (m >= 8 && k > 0) {
        // Tall products: transpose B once and reuse the row-major tile kernel.
        thread_local std::vector<double> bt;
        bt.resize(k * n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
        if (!accumulate) zero_block(m, n, c, ldc);
        blocked_update(m, n, k, a, lda, 1, bt.data(), n, c, ldc);
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        std::size_t j = 0;
        double s[4];
        for (; j + 4 <= n; j += 4) {
            dot4(arow, b + j * ldb, b + (j + 1) * ldb, b + (j + 2) * ldb, b + (j + 3) * ldb, k, s);
            for (int q = 0; q < 4; ++q) crow[j + q] = accumulate ? crow[j + q] + s[q] : s[q];
        }
        for (; j < n; ++j) {
            const double v = dot_avx2(arow, b + j * ldb, k);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) zero_block(m, n, c, ldc);
    blocked_update(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn_acc_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                      std::size_t lda, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc) {
    blocked_update(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

}  // namespace

const KernelTable* avx2_table_impl() {
    static const KernelTable table{Backend::avx2, dot_avx2,     axpy_avx2,
                                   gemm_nt_avx2,  gemm_nn_avx2, gemm_tn_acc_avx2};
    return &table;
}

}  // namespace delrec::simd

#else

namespace delrec::simd {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace delrec::simd

#endif
