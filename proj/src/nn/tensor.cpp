// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/nn/tensor.hpp"

#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <utility>

#include "delrec/util/error.hpp"

namespace delrec::nn {
namespace {

#if defined(__GLIBC__)
// Activation buffers are freed and reallocated every step. With glibc's
// default thresholds each large buffer round-trips through mmap/munmap and
// page faults, which costs more than the arithmetic at these sizes.
const bool kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

}  // namespace

std::vector<double>& Node::ensure_grad() {
    if (grad.empty()) grad.assign(size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw Error("tensor: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    return Tensor(std::move(n));
}

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    Tensor t = from(rows, cols, std::move(values));
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = from(rows(), cols(), node_->value);
    t.set_requires_grad(node_->requires_grad);
    return t;
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw Error("backward: loss must be a 1x1 tensor");
    Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p != nullptr && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace delrec::nn
