// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/nn/params.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <ostream>

#include "delrec/util/binio.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"

namespace delrec::nn {

Tensor& ParamSet::add(std::string name, Tensor t) {
    if (contains(name)) throw Error("duplicate parameter " + name);
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
    return tensors_.back();
}

Tensor& ParamSet::add_normal(std::string name, std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = stddev * rng.normal();
    return add(std::move(name), Tensor::from(rows, cols, std::move(v)));
}

Tensor& ParamSet::add_constant(std::string name, std::size_t rows, std::size_t cols, double value) {
    return add(std::move(name), Tensor::from(rows, cols, std::vector<double>(rows * cols, value)));
}

Tensor& ParamSet::at(std::string_view name) {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw Error("unknown parameter " + std::string(name));
    return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

const Tensor& ParamSet::at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

void ParamSet::set_requires_grad(bool on) {
    for (auto& t : tensors_) t.set_requires_grad(on);
}

void ParamSet::zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
}

void ParamSet::round_to_f32() {
    for (auto& t : tensors_) binio::round_to_f32(t.value());
}

std::vector<std::vector<double>> ParamSet::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.emplace_back(t.value().begin(), t.value().end());
    return out;
}

void ParamSet::restore(const std::vector<std::vector<double>>& values) {
    if (values.size() != tensors_.size()) throw Error("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].size() != tensors_[i].size()) throw Error("restore: shape mismatch for " + names_[i]);
        std::copy(values[i].begin(), values[i].end(), tensors_[i].value().begin());
    }
}

std::string ParamSet::sha256() const {
    Sha256 h;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        h.update(names_[i]);
        h.update(std::to_string(tensors_[i].rows()) + "x" + std::to_string(tensors_[i].cols()));
        std::vector<std::uint8_t> bytes;
        bytes.reserve(tensors_[i].size() * 4);
        for (double v : tensors_[i].value()) {
            const float f = static_cast<float>(v);
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
        }
        h.update(bytes);
    }
    return h.hex_digest();
}

void ParamSet::write(std::ostream& os) const {
    binio::write_u32(os, static_cast<std::uint32_t>(tensors_.size()));
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        binio::write_string(os, names_[i]);
        binio::write_u32(os, static_cast<std::uint32_t>(tensors_[i].rows()));
        binio::write_u32(os, static_cast<std::uint32_t>(tensors_[i].cols()));
        binio::write_f32(os, tensors_[i].value());
    }
}

void ParamSet::read(std::istream& is) {
    const auto count = binio::read_u32(is);
    if (count != tensors_.size()) throw Error("checkpoint: expected " + std::to_string(tensors_.size()) +
                                              " tensors, found " + std::to_string(count));
    for (std::size_t i = 0; i < count; ++i) {
        const auto name = binio::read_string(is);
        const auto rows = binio::read_u32(is);
        const auto cols = binio::read_u32(is);
        if (name != names_[i] || rows != tensors_[i].rows() || cols != tensors_[i].cols()) {
            throw Error("checkpoint: tensor " + name + " does not match " + names_[i]);
        }
        const auto v = binio::read_f32(is, tensors_[i].size());
        std::copy(v.begin(), v.end(), tensors_[i].value().begin());
    }
}

}  // namespace delrec::nn
