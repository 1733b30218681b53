// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/adapt/adapt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "delrec/nn/optim.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::adapt {

namespace {

constexpr std::array<Ablation, 8> kAll = {Ablation::none,       Ablation::wo_sp,       Ablation::w_mcp,
                                          Ablation::w_usp,      Ablation::wo_ta_bank,  Ablation::wo_rps_bank,
                                          Ablation::w_udpsm,    Ablation::w_ulsr};

struct Checkpoint {
    std::vector<std::vector<double>> adapter_values;
    std::vector<tinylm::AdapterTriplets> triplets;
    std::vector<double> bank;
};

Checkpoint take(const tinylm::LMParams& p, bool with_bank) {
    Checkpoint c{p.adapters->params().snapshot(), p.adapters->triplets(), {}};
    if (with_bank) c.bank.assign(p.soft.matrix().value().begin(), p.soft.matrix().value().end());
    return c;
}

void put(tinylm::LMParams& p, const Checkpoint& c) {
    p.adapters->params().restore(c.adapter_values);
    p.adapters->triplets() = c.triplets;
    if (!c.bank.empty()) std::copy(c.bank.begin(), c.bank.end(), p.soft.matrix().value().begin());
}

}  // namespace

Ablation parse_ablation(std::string_view name) {
    for (Ablation a : kAll) {
        if (ablation_name(a) == name) return a;
    }
    throw Error("unknown ablation '" + std::string(name) + "'");
}

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::wo_sp: return "wo_SP";
        case Ablation::w_mcp: return "w_MCP";
        case Ablation::w_usp: return "w_USP";
        case Ablation::wo_ta_bank: return "wo_TA_bank";
        case Ablation::wo_rps_bank: return "wo_RPS_bank";
        case Ablation::w_udpsm: return "w_UDPSM";
        case Ablation::w_ulsr: return "w_ULSR";
    }
    return "none";
}

std::span<const Ablation> all_ablations() { return kAll; }

prompting::TemplateConfig::SoftMode soft_mode_for(Ablation a) {
    using M = prompting::TemplateConfig::SoftMode;
    if (a == Ablation::wo_sp) return M::none;
    if (a == Ablation::w_mcp) return M::manual;
    return M::bank;
}

tinylm::Partition stage1_partition(Ablation a) {
    return a == Ablation::w_udpsm ? tinylm::Partition::soft_base : tinylm::Partition::soft_only;
}

tinylm::Partition stage2_partition(Ablation a) {
    return a == Ablation::w_ulsr ? tinylm::Partition::soft_adapters : tinylm::Partition::adapters_only;
}

void AdaptConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("adapt: learning_rate must be positive");
    if (weight_decay < 0.0) throw Error("adapt: weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("adapt: betas must lie in [0, 1)");
    if (batch_size == 0) throw Error("adapt: batch_size must be positive");
    if (rank == 0) throw Error("adapt: rank must be positive");
    if (!(importance_beta >= 0.0 && importance_beta < 1.0)) throw Error("adapt: importance_beta must lie in [0, 1)");
    if (select_k == 0) throw Error("adapt: select_k must be positive");
}

std::string AdaptConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "learning_rate=" << learning_rate << "\nweight_decay=" << weight_decay << "\nbeta1=" << beta1
       << "\nbeta2=" << beta2 << "\nepochs=" << epochs << "\nbatch_size=" << batch_size << "\nrank=" << rank
       << "\nbudget=" << budget << "\nprune_every=" << prune_every << "\nimportance_beta=" << importance_beta
       << "\nselect_k=" << select_k << "\nablation=" << ablation_name(ablation) << "\nseed=" << seed << '\n';
    return os.str();
}

nn::Tensor lsr_loss(const tinylm::LMParams& params, std::span<const distill::TrainItem* const> batch) {
    if (batch.empty()) throw Error("lsr_loss: empty batch");
    std::vector<tinylm::LabeledInput> in;
    in.reserve(batch.size());
    for (const auto* it : batch) in.push_back({&it->input, it->label});
    return tinylm::batch_nll(params, in);
}

Stage2Result run_stage2(const AdaptConfig& config, std::span<const distill::TrainItem> train,
                        tinylm::LMParams& params, const Validator& validator) {
    config.validate();
    const Ablation a = config.ablation;
    if (soft_mode_for(a) == prompting::TemplateConfig::SoftMode::bank) {
        if (params.soft.empty()) throw Error("stage 2: variant " + std::string(ablation_name(a)) + " needs a bank");
        if (!params.soft.trained && a != Ablation::w_usp) throw Error("stage 2: the soft-prompt bank is untrained");
    }
    if (config.epochs > 0 && train.empty()) throw Error("stage 2: empty training set");

    params.adapters = tinylm::init_adapters(params.config, config.rank, config.budget, config.seed);
    params.adapters->provenance = "ablation=" + std::string(ablation_name(a)) +
                                  ";stage2_config=" + sha256_hex(config.canonical());
    const tinylm::Partition part = stage2_partition(a);
    const bool bank_trains = part == tinylm::Partition::soft_adapters;

    Stage2Result result;
    if (config.epochs == 0) {
        tinylm::set_frozen(params);
        return result;
    }

    tinylm::set_trainable(params, part);
    nn::Lion opt(tinylm::trainable_tensors(params, part),
                 nn::LionOptions{config.learning_rate, config.beta1, config.beta2, config.weight_decay});

    std::optional<Checkpoint> best;
    std::optional<double> best_hr;
    std::size_t step = 0;
    const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = Rng::substream(config.seed, "adapt.order", epoch);
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            std::vector<const distill::TrainItem*> batch;
            for (std::size_t i = b * config.batch_size; i < std::min(train.size(), (b + 1) * config.batch_size); ++i) {
                batch.push_back(&train[order[i]]);
            }
            const nn::Tensor loss = lsr_loss(params, batch);
            if (!std::isfinite(loss.item())) {
                tinylm::set_frozen(params);
                throw Error("stage 2: non-finite loss at step " + std::to_string(step));
            }
            nn::backward(loss);
            params.adapters->update_importance(config.importance_beta);
            opt.step();
            params.adapters->apply_mask();
            opt.zero_grad();
            loss_sum += loss.item();
            ++step;
            if (config.prune_every && step % config.prune_every == 0) tinylm::adalora_reallocate(*params.adapters);
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(per_epoch);
        log.retained = params.adapters->retained_ranks();
        if (validator) {
            tinylm::set_frozen(params);
            log.valid_hr = validator(params, config.select_k);
            tinylm::set_trainable(params, part);
        }
        result.epochs.push_back(log);
        if (!validator || !best_hr || *log.valid_hr > *best_hr) {
            best_hr = log.valid_hr;
            best = take(params, bank_trains);
            result.best_epoch = epoch;
        }
    }
    tinylm::set_frozen(params);
    put(params, *best);
    params.adapters->params().round_to_f32();
    if (bank_trains) {
        for (double& v : params.soft.matrix().value()) v = static_cast<float>(v);
    }
    return result;
}

std::optional<tinylm::SoftPromptBank> build_ablation_bank(Ablation a, const Stage1Banks& banks) {
    const auto need = [&](const std::optional<tinylm::SoftPromptBank>& b, const char* what) {
        if (!b || !b->trained) {
            throw Error("ablation " + std::string(ablation_name(a)) + ": no trained " + what + " bank");
        }
        return *b;
    };
    switch (a) {
        case Ablation::wo_sp:
        case Ablation::w_mcp: return std::nullopt;
        case Ablation::w_usp: return tinylm::init_soft_prompts(banks.k, banks.d, banks.seed);
        case Ablation::wo_ta_bank: return need(banks.rps_only, "RPS-only");
        case Ablation::wo_rps_bank: return need(banks.ta_only, "TA-only");
        case Ablation::w_udpsm: return need(banks.udpsm, "w_UDPSM");
        case Ablation::none:
        case Ablation::w_ulsr: return need(banks.full, "full");
    }
    return std::nullopt;
}

}  // namespace delrec::adapt
