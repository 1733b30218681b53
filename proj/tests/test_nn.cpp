// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "delrec/nn/ops.hpp"
#include "delrec/nn/optim.hpp"
#include "delrec/simd/kernels.hpp"
#include "delrec/util/error.hpp"

using namespace delrec;
using nn::Tensor;

namespace {

Tensor rand_param(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = s * rng.normal();
    return Tensor::parameter(r, c, std::move(v));
}

// Scalar readout <out, R> with a fixed random R, so every output entry matters.
Tensor readout(const Tensor& out, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> r(out.size());
    for (double& x : r) x = rng.normal();
    return nn::matmul_nt(nn::reshape(out, 1, out.size()), Tensor::from(1, out.size(), std::move(r)));
}

void check_op(const std::vector<Tensor>& params, const std::function<Tensor()>& build) {
    for (auto backend : {simd::Backend::scalar, simd::Backend::avx2}) {
        if (!simd::set_backend(backend)) continue;
        CAPTURE(simd::backend_name(backend));
        for (Tensor p : params) p.zero_grad();
        Tensor loss = readout(build(), 99);
        nn::backward(loss);
        auto r = testing::finite_difference_check(params, [&] { return readout(build(), 99).item(); });
        CHECK(r.checked > 0);
        CHECK(r.max_rel_error < 1e-6);
    }
    simd::set_backend(simd::avx2_table() ? simd::Backend::avx2 : simd::Backend::scalar);
}

}  // namespace

TEST_CASE("finite differences: linear algebra ops") {
    Rng rng(1);
    Tensor x = rand_param(rng, 3, 4), w = rand_param(rng, 5, 4), b = rand_param(rng, 1, 5);
    check_op({x, w, b}, [&] { return nn::linear(x, w, b); });
    Tensor a = rand_param(rng, 3, 6), c = rand_param(rng, 6, 2);
    check_op({a, c}, [&] { return nn::matmul_nn(a, c); });
    Tensor d = rand_param(rng, 4, 6);
    check_op({a, d}, [&] { return nn::matmul_nt(a, d); });
    Tensor v = rand_param(rng, 1, 6);
    check_op({a, v}, [&] { return nn::scale_cols(a, v); });
    check_op({a, v}, [&] { return nn::add_row(a, v); });
}

TEST_CASE("finite differences: elementwise and normalisation ops") {
    Rng rng(2);
    Tensor a = rand_param(rng, 3, 5), b = rand_param(rng, 3, 5);
    check_op({a, b}, [&] { return nn::mul(nn::sigmoid(a), nn::tanh(b)); });
    check_op({a, b}, [&] { return nn::sub(nn::gelu(a), nn::one_minus(b)); });
    check_op({a}, [&] { return nn::scale(nn::add(a, a), 0.3); });
    Tensor g = rand_param(rng, 1, 5), be = rand_param(rng, 1, 5);
    check_op({a, g, be}, [&] { return nn::layer_norm(a, g, be); });
    std::vector<double> mask{1.0, 0.0, 1.0};
    check_op({a}, [&] { return nn::mask_rows(a, mask); });
}

TEST_CASE("finite differences: gather, concat, slicing") {
    Rng rng(3);
    Tensor table = rand_param(rng, 6, 4), other = rand_param(rng, 2, 4), wide = rand_param(rng, 2, 3);
    std::vector<std::uint32_t> ids{3, 1, 3, 0};
    check_op({table, other}, [&] {
        std::vector<Tensor> parts{nn::gather_rows(table, ids), other};
        return nn::concat_rows(parts);
    });
    check_op({other, wide}, [&] {
        std::vector<Tensor> parts{other, wide};
        return nn::concat_cols(parts);
    });
    std::vector<std::size_t> pick{4, 0, 4};
    check_op({table}, [&] { return nn::pick_rows(nn::slice_rows(table, 1, 5), pick); });
}

TEST_CASE("gather_rows leaves the frozen padding row without gradient") {
    Rng rng(4);
    Tensor table = rand_param(rng, 4, 3);
    std::vector<std::uint32_t> ids{0, 2, 0};
    nn::backward(readout(nn::gather_rows(table, ids, 0), 5));
    for (std::size_t j = 0; j < 3; ++j) CHECK(table.grad()[j] == 0.0);
    CHECK(table.grad()[2 * 3] != 0.0);
}

TEST_CASE("finite differences: attention variants") {
    Rng rng(5);
    const std::size_t d = 8;
    Tensor q = rand_param(rng, 2 * 3, d), k = rand_param(rng, 2 * 3, d), v = rand_param(rng, 2 * 3, d);
    nn::AttentionShape causal{.batch = 2, .heads = 2, .q_len = 3, .k_len = 3, .causal = true};
    check_op({q, k, v}, [&] { return nn::attention(q, k, v, causal); });
    std::vector<std::uint8_t> valid{0, 1, 1, 0, 0, 1};
    check_op({q, k, v}, [&] { return nn::attention(q, k, v, causal, valid); });

    Tensor q2 = rand_param(rng, 2, d), k2 = rand_param(rng, 5, d), v2 = rand_param(rng, 5, d);
    nn::AttentionShape cached{.batch = 1, .heads = 4, .q_len = 2, .k_len = 5, .causal = true};
    check_op({q2, k2, v2}, [&] { return nn::attention(q2, k2, v2, cached); });
}

TEST_CASE("attention with no visible key yields a zero row") {
    Rng rng(6);
    Tensor q = rand_param(rng, 2, 4), k = rand_param(rng, 2, 4), v = rand_param(rng, 2, 4);
    std::vector<std::uint8_t> valid{0, 1};
    Tensor out = nn::attention(q, k, v, {.batch = 1, .heads = 1, .q_len = 2, .k_len = 2, .causal = true}, valid);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(0, j) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(1, j) == doctest::Approx(v.at(1, j)));
}

TEST_CASE("finite differences: convolution helpers") {
    Rng rng(7);
    Tensor x = rand_param(rng, 2 * 4, 3), w = rand_param(rng, 2, 4);
    check_op({x}, [&] { return nn::segment_max(nn::unfold_rows(x, 2, 4, 2), 3); });
    check_op({x, w}, [&] { return nn::vertical_conv(x, w, 2, 4); });
}

TEST_CASE("cross entropy matches direct log-softmax summation") {
    Rng rng(8);
    Tensor logits = rand_param(rng, 3, 5);
    std::vector<std::uint32_t> t{2, 0, 4};
    Tensor loss = nn::cross_entropy(logits, t);
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits.at(i, j));
        expected += -(logits.at(i, t[i]) - std::log(z));
    }
    CHECK(loss.item() == doctest::Approx(expected / 3.0).epsilon(1e-12));
    check_op({logits}, [&] { return nn::cross_entropy(logits, t); });
    check_op({logits}, [&] { return nn::cross_entropy(logits, std::vector<std::uint32_t>{2, 1, 4}, 1, true); });
    CHECK_THROWS_AS(nn::cross_entropy(logits, std::vector<std::uint32_t>{9, 9, 9}, 9), Error);
}

TEST_CASE("no tape is built when nothing requires a gradient") {
    Tensor a = Tensor::from(2, 2, {1, 2, 3, 4});
    Tensor b = nn::matmul_nt(a, a);
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->parents.empty());
}

TEST_CASE("lion update follows the sign-momentum rule") {
    Tensor p = Tensor::parameter(1, 3, {1.0, -2.0, 0.5});
    nn::Lion opt({p}, {.lr = 0.1, .beta1 = 0.9, .beta2 = 0.99, .weight_decay = 0.01});
    // Zero gradient and zero momentum: only the decay term acts.
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0));
    CHECK(p.value()[1] == doctest::Approx(-2.0 - 0.1 * 0.01 * -2.0));
    p.node()->ensure_grad() = {0.3, -0.2, 0.0};
    const double before = p.value()[0];
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(before - 0.1 * (1.0 + 0.01 * before)));
    CHECK(opt.momentum()[0][0] == doctest::Approx(0.01 * 0.3));
}
