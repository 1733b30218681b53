// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense double-precision kernels behind every matrix product in the project.
//
// Each kernel has a scalar reference implementation and, on x86-64, an AVX2+FMA
// variant. The active table is chosen once at startup from CPUID; tests can pin
// a backend to compare the two. All matrices are row-major with explicit leading
// dimensions. Results of the two backends agree to rounding, not bit-for-bit,
// because the vector variants reassociate sums.

#include <cstddef>
#include <string_view>

namespace delrec::simd {

enum class Backend { scalar, avx2 };

struct KernelTable {
    Backend backend;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C(m x n) (+)= A(m x k) * B(n x k)^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
    // C(m x n) (+)= A(m x k) * B(k x n)
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
    // C(m x n) += A(k x m)^T * B(k x n)
    void (*gemm_tn_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        std::size_t lda, const double* b, std::size_t ldb, double* c,
                        std::size_t ldc);
};

const KernelTable& scalar_table();
// Null when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

// Currently selected table. Defaults to the best backend the CPU supports.
const KernelTable& active();

// Pins the active backend; returns false when the backend is unavailable.
// Not thread-safe against concurrent kernel calls; intended for tests and tools.
bool set_backend(Backend b);

std::string_view backend_name(Backend b);

}  // namespace delrec::simd
