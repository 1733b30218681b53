// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "delrec/simd/kernels.hpp"
#include "delrec/util/rng.hpp"

using namespace delrec;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

void require_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(1.0, std::abs(a[i]));
        REQUIRE(std::abs(a[i] - b[i]) <= tol * scale);
    }
}

// Naive triple loops, independent of both kernel tables.
std::vector<double> ref_nt(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                           const std::vector<double>& b) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[j * k + p];
    return c;
}

}  // namespace

TEST_CASE("scalar table is always available and the active table is valid") {
    CHECK(simd::scalar_table().backend == simd::Backend::scalar);
    const auto& t = simd::active();
    CHECK((t.backend == simd::Backend::scalar || t.backend == simd::Backend::avx2));
    CHECK(simd::set_backend(simd::Backend::scalar));
    CHECK(simd::active().backend == simd::Backend::scalar);
    if (simd::avx2_table() != nullptr) CHECK(simd::set_backend(simd::Backend::avx2));
}

TEST_CASE("avx2 kernels agree with the scalar reference on odd shapes") {
    const simd::KernelTable* vec = simd::avx2_table();
    if (vec == nullptr) {
        MESSAGE("AVX2 unavailable on this machine; equivalence test skipped");
        return;
    }
    const simd::KernelTable& ref = simd::scalar_table();
    Rng rng(7);
    const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 4, 4}, {9, 13, 17}, {16, 33, 64}, {2, 3, 101}};
    for (const auto& s : shapes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        auto a = random_vec(rng, m * k);
        auto b = random_vec(rng, n * k);
        auto bn = random_vec(rng, k * n);
        auto at = random_vec(rng, k * m);
        auto seed = random_vec(rng, m * n);

        CHECK(std::abs(ref.dot(a.data(), a.data(), a.size()) - vec->dot(a.data(), a.data(), a.size())) <
              1e-10 * static_cast<double>(a.size()));

        std::vector<double> c1 = seed, c2 = seed;
        ref.gemm_nt(m, n, k, a.data(), k, b.data(), k, c1.data(), n, true);
        vec->gemm_nt(m, n, k, a.data(), k, b.data(), k, c2.data(), n, true);
        require_close(c1, c2, 1e-12 * static_cast<double>(k));
        auto direct = ref_nt(m, n, k, a, b);
        for (std::size_t i = 0; i < direct.size(); ++i) direct[i] += seed[i];
        require_close(direct, c1, 1e-12 * static_cast<double>(k));

        c1 = seed;
        c2 = seed;
        ref.gemm_nn(m, n, k, a.data(), k, bn.data(), n, c1.data(), n, false);
        vec->gemm_nn(m, n, k, a.data(), k, bn.data(), n, c2.data(), n, false);
        require_close(c1, c2, 1e-12 * static_cast<double>(k));

        c1 = seed;
        c2 = seed;
        ref.gemm_tn_acc(m, n, k, at.data(), m, bn.data(), n, c1.data(), n);
        vec->gemm_tn_acc(m, n, k, at.data(), m, bn.data(), n, c2.data(), n);
        require_close(c1, c2, 1e-12 * static_cast<double>(k));

        std::vector<double> y1 = a, y2 = a;
        ref.axpy(0.37, a.data(), y1.data(), y1.size());
        vec->axpy(0.37, a.data(), y2.data(), y2.size());
        require_close(y1, y2, 1e-15);
    }
}

TEST_CASE("gemm honours leading dimensions on sub-blocks") {
    // Multiply the 2x3 top-left block of a 4x5 matrix by a 3x3 block of a 6x8 one.
    Rng rng(11);
    auto a = random_vec(rng, 4 * 5);
    auto b = random_vec(rng, 6 * 8);
    for (const simd::KernelTable* t : {&simd::scalar_table(), simd::avx2_table()}) {
        if (t == nullptr) continue;
        std::vector<double> c(2 * 3, 0.0);
        t->gemm_nt(2, 3, 3, a.data(), 5, b.data(), 8, c.data(), 3, false);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < 3; ++p) s += a[i * 5 + p] * b[j * 8 + p];
                CHECK(c[i * 3 + j] == doctest::Approx(s).epsilon(1e-13));
            }
    }
}
