// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "delrec/nn/ops.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::distill {

void DistillConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("distill: learning_rate must be positive");
    if (weight_decay < 0.0) throw Error("distill: weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("distill: betas must lie in [0, 1)");
    if (batch_size == 0) throw Error("distill: batch_size must be positive");
    if (!(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max < 1.0)) {
        throw Error("distill: lambda bounds must be ordered within (0, 1)");
    }
    if (lambda_init < lambda_min || lambda_init > lambda_max) throw Error("distill: lambda_init outside its bounds");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw Error("distill: ema_decay must lie in [0, 1)");
    if (fixed_lambda && (*fixed_lambda < 0.0 || *fixed_lambda > 1.0)) throw Error("distill: fixed lambda outside [0, 1]");
    if (partition != tinylm::Partition::soft_only && partition != tinylm::Partition::soft_base) {
        throw Error("distill: partition must be soft-only or soft+base");
    }
}

std::string DistillConfig::canonical() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "learning_rate=" << learning_rate << "\nweight_decay=" << weight_decay << "\nbeta1=" << beta1
       << "\nbeta2=" << beta2 << "\nepochs=" << epochs << "\nbatch_size=" << batch_size
       << "\nlambda_init=" << lambda_init << "\nlambda_min=" << lambda_min << "\nlambda_max=" << lambda_max
       << "\nema_decay=" << ema_decay << "\nwarmup_steps=" << warmup_steps << "\nfixed_lambda="
       << (fixed_lambda ? std::to_string(*fixed_lambda) : std::string("-"))
       << "\npartition=" << tinylm::partition_name(partition) << "\nbase_learning_rate=" << base_learning_rate
       << "\nseed=" << seed << "\n";
    return os.str();
}

TrainItem to_train_item(const prompting::RenderedPrompt& p) {
    return TrainItem{p.example_id, p.input(), p.label_tokens};
}

std::vector<TrainItem> to_train_items(std::span<const prompting::RenderedPrompt> prompts) {
    std::vector<TrainItem> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(to_train_item(p));
    return out;
}

namespace {

nn::Tensor mean_label_nll(const tinylm::LMParams& params, std::span<const TrainItem* const> batch) {
    if (batch.empty()) throw Error("distill: empty batch");
    std::vector<tinylm::LabeledInput> in;
    in.reserve(batch.size());
    for (const TrainItem* t : batch) in.push_back({&t->input, t->label});
    return tinylm::batch_nll(params, in);
}

}  // namespace

nn::Tensor ta_loss(const tinylm::LMParams& params, std::span<const TrainItem* const> batch) {
    return mean_label_nll(params, batch);
}

nn::Tensor rps_loss(const tinylm::LMParams& params, std::span<const TrainItem* const> batch) {
    return mean_label_nll(params, batch);
}

DistillState init_state(const DistillConfig& config) {
    config.validate();
    DistillState s;
    s.lambda = config.fixed_lambda.value_or(config.lambda_init);
    return s;
}

double lambda_from_emas(double ema_ta, double ema_rps, const DistillConfig& config) {
    const double sum = ema_ta + ema_rps;
    if (sum == 0.0) return config.lambda_init;
    return std::clamp(ema_rps / sum, config.lambda_min, config.lambda_max);
}

double update_lambda(DistillState& state, double loss_ta, double loss_rps, const DistillConfig& config) {
    ++state.step;
    if (state.step <= config.warmup_steps || state.step == 1) {
        // Warmup: the EMAs hold the running mean so they start unbiased.
        const double n = static_cast<double>(state.step);
        state.ema_ta += (loss_ta - state.ema_ta) / n;
        state.ema_rps += (loss_rps - state.ema_rps) / n;
        state.lambda = config.lambda_init;
        return state.lambda;
    }
    state.ema_ta = config.ema_decay * state.ema_ta + (1.0 - config.ema_decay) * loss_ta;
    state.ema_rps = config.ema_decay * state.ema_rps + (1.0 - config.ema_decay) * loss_rps;
    state.lambda = lambda_from_emas(state.ema_ta, state.ema_rps, config);
    return state.lambda;
}

StepLog distill_step(DistillState& state, tinylm::LMParams& params, std::span<const TrainItem* const> ta_batch,
                     std::span<const TrainItem* const> rps_batch, const DistillConfig& config) {
    if (params.soft.empty()) throw Error("distill_step: the model has no soft-prompt bank");
    if (!state.optimizer) {
        tinylm::set_trainable(params, config.partition);
        state.optimizer = std::make_unique<nn::Lion>(
            std::vector<nn::Tensor>{params.soft.matrix()},
            nn::LionOptions{config.learning_rate, config.beta1, config.beta2, config.weight_decay});
        if (config.partition == tinylm::Partition::soft_base) {
            state.base_optimizer = std::make_unique<nn::Lion>(
                params.base.tensors(),
                nn::LionOptions{config.base_learning_rate, config.beta1, config.beta2, config.weight_decay});
        }
    }

    const double lambda = config.fixed_lambda.value_or(state.lambda);
    StepLog log;
    log.step = state.step;
    log.lambda = lambda;

    nn::Tensor total;
    if (lambda > 0.0) {
        const nn::Tensor l = ta_loss(params, ta_batch);
        log.loss_ta = l.item();
        total = nn::scale(l, lambda);
    }
    if (lambda < 1.0) {
        const nn::Tensor l = rps_loss(params, rps_batch);
        log.loss_rps = l.item();
        const nn::Tensor w = nn::scale(l, 1.0 - lambda);
        total = total ? nn::add(total, w) : w;
    }
    if (!std::isfinite(total.item())) {
        throw Error("distill_step: non-finite loss at step " + std::to_string(state.step));
    }

    nn::backward(total);
    std::vector<nn::Tensor> trained = state.optimizer->params();
    if (state.base_optimizer) {
        const auto& b = state.base_optimizer->params();
        trained.insert(trained.end(), b.begin(), b.end());
    }
    log.grad_norm = nn::grad_norm(trained);
    state.optimizer->step();
    if (state.base_optimizer) state.base_optimizer->step();
    for (auto& t : trained) t.zero_grad();

    if (config.fixed_lambda) {
        ++state.step;
    } else {
        update_lambda(state, log.loss_ta.value_or(0.0), log.loss_rps.value_or(0.0), config);
    }
    return log;
}

Stage1Result run_stage1(const DistillConfig& config, std::span<const TrainItem> ta, std::span<const TrainItem> rps,
                        tinylm::LMParams& params, const tinylm::BankProvenance& provenance) {
    config.validate();
    const bool use_ta = !config.fixed_lambda || *config.fixed_lambda > 0.0;
    const bool use_rps = !config.fixed_lambda || *config.fixed_lambda < 1.0;
    if (use_ta && ta.empty()) throw Error("run_stage1: empty TA dataset");
    if (use_rps && rps.empty()) throw Error("run_stage1: empty RPS dataset");
    if (params.soft.empty()) throw Error("run_stage1: the model has no soft-prompt bank");

    Stage1Result result;
    if (config.epochs == 0) return result;

    DistillState state = init_state(config);
    const std::size_t longest = std::max(use_ta ? ta.size() : 0, use_rps ? rps.size() : 0);
    const std::size_t steps_per_epoch = (longest + config.batch_size - 1) / config.batch_size;

    auto order_of = [&](std::size_t n, std::string_view name, std::size_t epoch) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng = Rng::substream(config.seed, name, epoch);
        rng.shuffle(idx);
        return idx;
    };
    auto batch_of = [&](std::span<const TrainItem> data, const std::vector<std::size_t>& order, std::size_t step) {
        std::vector<const TrainItem*> b;
        if (data.empty()) return b;
        for (std::size_t i = 0; i < config.batch_size; ++i) {
            b.push_back(&data[order[(step * config.batch_size + i) % order.size()]]);
        }
        return b;
    };

    try {
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            const auto ta_order = order_of(ta.size(), "distill.ta_order", epoch);
            const auto rps_order = order_of(rps.size(), "distill.rps_order", epoch);
            for (std::size_t s = 0; s < steps_per_epoch; ++s) {
                const auto tb = batch_of(ta, ta_order, s);
                const auto rb = batch_of(rps, rps_order, s);
                result.curve.push_back(distill_step(state, params, tb, rb, config));
            }
        }
    } catch (...) {
        tinylm::set_frozen(params);
        throw;
    }
    tinylm::set_frozen(params);
    for (double& v : params.soft.matrix().value()) v = static_cast<double>(static_cast<float>(v));
    params.soft.trained = true;
    params.soft.provenance = provenance;
    params.soft.provenance.stage1_config_hash = sha256_hex(config.canonical());
    return result;
}

void write_curve(std::ostream& os, std::span<const StepLog> curve) {
    os << "step,loss_ta,loss_rps,lambda,grad_norm\n";
    os << std::setprecision(9);
    for (const auto& s : curve) {
        os << s.step << ',';
        if (s.loss_ta) os << *s.loss_ta;
        os << ',';
        if (s.loss_rps) os << *s.loss_rps;
        os << ',' << s.lambda << ',' << s.grad_norm << '\n';
    }
}

}  // namespace delrec::distill
