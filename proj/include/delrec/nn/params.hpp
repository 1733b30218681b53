// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "delrec/nn/tensor.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::nn {

// Ordered, named parameter tensors. Order is insertion order and is also the
// on-disk field order.
class ParamSet {
public:
    Tensor& add(std::string name, Tensor t);
    Tensor& add_normal(std::string name, std::size_t rows, std::size_t cols, double stddev, Rng& rng);
    Tensor& add_constant(std::string name, std::size_t rows, std::size_t cols, double value);

    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t scalar_count() const;

    void set_requires_grad(bool on);
    void zero_grad();
    void round_to_f32();

    // Deep copy of values only.
    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& values);

    // SHA-256 over names, shapes and the float32 encoding of the values.
    std::string sha256() const;

    // u32 count, then per tensor: name, u32 rows, u32 cols, f32 values.
    void write(std::ostream& os) const;
    // Reads into the existing tensors; names and shapes must match.
    void read(std::istream& is);

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

}  // namespace delrec::nn
