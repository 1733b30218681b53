// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stage 2: with the base and the soft-prompt bank frozen, low-rank adapters
// are trained on ground-truth next-item (LSR) prompts. Also builds the bank
// each ablation variant prescribes.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delrec/distill/distill.hpp"
#include "delrec/prompting/prompt.hpp"
#include "delrec/tinylm/model.hpp"

namespace delrec::adapt {

enum class Ablation { none, wo_sp, w_mcp, w_usp, wo_ta_bank, wo_rps_bank, w_udpsm, w_ulsr };

// Names as written in configs: none, wo_SP, w_MCP, w_USP, wo_TA_bank, wo_RPS_bank, w_UDPSM, w_ULSR.
Ablation parse_ablation(std::string_view name);
std::string_view ablation_name(Ablation a);
std::span<const Ablation> all_ablations();

// How the variant's prompts carry the reference section.
prompting::TemplateConfig::SoftMode soft_mode_for(Ablation a);
// Partition trained in stage 1 and in stage 2.
tinylm::Partition stage1_partition(Ablation a);
tinylm::Partition stage2_partition(Ablation a);

struct AdaptConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    std::size_t rank = 4;           // triplets per adapted matrix
    std::size_t budget = 0;         // retained triplets overall; 0 = half of all
    std::size_t prune_every = 100;  // steps between reallocations; 0 = never
    double importance_beta = 0.85;  // EMA factor for triplet importance
    std::size_t select_k = 10;      // validation HR@k used to pick the epoch
    Ablation ablation = Ablation::none;
    std::uint64_t seed = 1;

    void validate() const;
    std::string canonical() const;
};

// Mean NLL of the ground-truth labels under base + adapters + bank.
nn::Tensor lsr_loss(const tinylm::LMParams& params, std::span<const distill::TrainItem* const> batch);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> valid_hr;
    std::size_t retained = 0;
};

struct Stage2Result {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;  // 0 when epochs = 0
};

// Validation HR@k of the current model.
using Validator = std::function<double(const tinylm::LMParams&, std::size_t k)>;

// Attaches fresh adapters (lambda = 0) and trains them for config.epochs
// epochs over `train` with Lion. Importances are folded in every step and
// the budget is reallocated every prune_every steps. After each epoch the
// validator (if set) scores the model; the adapters of the best epoch are
// kept, ties going to the earlier epoch. Without a validator the last epoch
// is kept. Requires a trained bank unless the variant has no bank or uses a
// random one (w_USP). w_ULSR also updates the bank at the adapter rate.
Stage2Result run_stage2(const AdaptConfig& config, std::span<const distill::TrainItem> train,
                        tinylm::LMParams& params, const Validator& validator = {});

// Stage-1 outputs the ablation banks are built from. Absent banks were not trained.
struct Stage1Banks {
    std::optional<tinylm::SoftPromptBank> full;
    std::optional<tinylm::SoftPromptBank> ta_only;
    std::optional<tinylm::SoftPromptBank> rps_only;
    std::optional<tinylm::SoftPromptBank> udpsm;
    std::size_t k = 0;
    std::size_t d = 0;
    std::uint64_t seed = 1;
};

// The bank a variant runs with; nullopt for wo_SP and w_MCP (no soft slots).
// w_USP returns init_soft_prompts(k, d, seed). Throws when the needed bank is absent.
std::optional<tinylm::SoftPromptBank> build_ablation_bank(Ablation a, const Stage1Banks& banks);

}  // namespace delrec::adapt
