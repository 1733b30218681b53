// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "delrec/nn/tensor.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::nn {

// out[i] = table[ids[i]]. Gradient rows for `frozen_row` (if >= 0) are dropped,
// which keeps a padding embedding at exactly zero.
Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> ids, int frozen_row = -1);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor pick_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols);

// A(m x k) * B(n x k)^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// A(m x k) * B(k x n)
Tensor matmul_nn(const Tensor& a, const Tensor& b);
// x * W^T + bias, W is out x in, bias is 1 x out (may be empty).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor one_minus(const Tensor& a);
// a + row broadcast of bias (1 x cols)
Tensor add_row(const Tensor& a, const Tensor& bias);
// a with column j multiplied by v[j] (v is 1 x cols)
Tensor scale_cols(const Tensor& a, const Tensor& v);
// Row i multiplied by mask[i] (constant 0/1 or any weights).
Tensor mask_rows(const Tensor& a, std::span<const double> mask);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

struct AttentionShape {
    std::size_t batch = 1;
    std::size_t heads = 1;
    std::size_t q_len = 0;  // query rows per sequence
    std::size_t k_len = 0;  // key rows per sequence
    // Query i may see key j iff j <= i + (k_len - q_len). Disable for full attention.
    bool causal = true;
};

// Multi-head scaled dot-product attention. q is (batch*q_len) x d, k and v are
// (batch*k_len) x d, heads split the columns. key_valid (optional, batch*k_len
// entries) removes keys; a query with no visible key outputs a zero row.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_valid = {});

// Sliding windows of `height` consecutive rows inside each of `batch`
// sequences of `len` rows; each window is flattened into one row.
Tensor unfold_rows(const Tensor& x, std::size_t batch, std::size_t len, std::size_t height);
// Column-wise max over consecutive groups of `group` rows.
Tensor segment_max(const Tensor& x, std::size_t group);
// Per sequence: W (filters x len) * X_b (len x d), flattened to one row.
Tensor vertical_conv(const Tensor& x, const Tensor& w, std::size_t batch, std::size_t len);

// Mean over rows of -log softmax(logits)[target]. Rows whose target equals
// ignore_index are skipped; with exclude_col0 column 0 never takes part in
// the softmax. Throws when no row contributes.
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets,
                     std::int64_t ignore_index = -1, bool exclude_col0 = false);

// sum_i w_i * t_i over 1x1 tensors.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);
Tensor mean_of(std::span<const Tensor> terms);

// Row-wise log-softmax values (no graph); used by scoring paths.
std::vector<double> log_softmax_row(std::span<const double> row);

}  // namespace delrec::nn
