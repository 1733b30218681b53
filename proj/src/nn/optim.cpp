// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/nn/optim.hpp"

#include <cmath>

namespace delrec::nn {
namespace {

std::vector<std::vector<double>> zeros_like(const std::vector<Tensor>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const Tensor& p : params) out.emplace_back(p.size(), 0.0);
    return out;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opt)
    : Optimizer(std::move(params)), opt_(opt), m_(zeros_like(params_)), v_(zeros_like(params_)) {}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.value();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * g[j];
            v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * g[j] * g[j];
            w[j] -= opt_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + opt_.eps);
        }
    }
}

Adagrad::Adagrad(std::vector<Tensor> params, double lr, double eps)
    : Optimizer(std::move(params)), lr_(lr), eps_(eps), acc_(zeros_like(params_)) {}

void Adagrad::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.value();
        for (std::size_t j = 0; j < w.size(); ++j) {
            acc_[i][j] += g[j] * g[j];
            w[j] -= lr_ * g[j] / (std::sqrt(acc_[i][j]) + eps_);
        }
    }
}

Lion::Lion(std::vector<Tensor> params, LionOptions opt)
    : Optimizer(std::move(params)), opt_(opt), m_(zeros_like(params_)) {}

void Lion::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto w = p.value();
        const bool has = p.has_grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double g = has ? p.grad()[j] : 0.0;
            const double u = sign(opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * g);
            m_[i][j] = opt_.beta2 * m_[i][j] + (1.0 - opt_.beta2) * g;
            w[j] -= opt_.lr * (u + opt_.weight_decay * w[j]);
        }
    }
}

double grad_norm(const std::vector<Tensor>& params) {
    double s = 0.0;
    for (const Tensor& p : params)
        for (double g : p.grad()) s += g * g;
    return std::sqrt(s);
}

}  // namespace delrec::nn
