// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "delrec/nn/tensor.hpp"

namespace delrec::nn {

// Optimizers hold per-parameter state keyed by position in the parameter list
// given at construction; the list must not change afterwards. A parameter
// whose gradient buffer is empty is treated as having a zero gradient.
class Optimizer {
public:
    explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
    virtual ~Optimizer() = default;
    virtual void step() = 0;
    void zero_grad();
    const std::vector<Tensor>& params() const { return params_; }

protected:
    std::vector<Tensor> params_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam final : public Optimizer {
public:
    Adam(std::vector<Tensor> params, AdamOptions opt);
    void step() override;
    void set_lr(double lr) { opt_.lr = lr; }

private:
    AdamOptions opt_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

class Adagrad final : public Optimizer {
public:
    Adagrad(std::vector<Tensor> params, double lr, double eps = 1e-10);
    void step() override;

private:
    double lr_, eps_;
    std::vector<std::vector<double>> acc_;
};

struct LionOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double weight_decay = 0.0;
};

// Sign-momentum update:
//   u = sign(b1*m + (1-b1)*g);  m = b2*m + (1-b2)*g;  p -= lr*(u + wd*p)
class Lion final : public Optimizer {
public:
    Lion(std::vector<Tensor> params, LionOptions opt);
    void step() override;
    const std::vector<std::vector<double>>& momentum() const { return m_; }

private:
    LionOptions opt_;
    std::vector<std::vector<double>> m_;
};

// L2 norm over all present gradients.
double grad_norm(const std::vector<Tensor>& params);

}  // namespace delrec::nn
