// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices.
//
// A Tensor is a shared handle to a graph node. Leaves flagged with
// requires_grad are parameters; every op result records a backward closure
// only when at least one input requires a gradient, so a forward pass over
// frozen weights builds no tape at all. Gradients are allocated lazily: a
// parameter that took no part in a backward pass has an empty grad buffer,
// which is how "structurally absent" gradients are represented.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace delrec::nn {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return rows * cols; }
    // Allocates a zeroed gradient buffer on first use.
    std::vector<double>& ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values);
    // Leaf that participates in gradient computation when enabled.
    static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }

    std::span<double> value() { return node_->value; }
    std::span<const double> value() const { return node_->value; }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const { return node_->value.at(0); }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    // Independent deep copy of the value (no graph, no grad).
    Tensor clone() const;

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a 1x1 loss into every reachable node
// that requires a gradient.
void backward(const Tensor& loss);

}  // namespace delrec::nn
