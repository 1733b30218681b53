// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stage 1: the soft-prompt bank is trained on temporal analysis (TA) and
// recommendation pattern simulating (RPS) prompts at once, with the combined
// loss lambda * L_TA + (1 - lambda) * L_RPS and lambda re-balanced from loss
// EMAs. Also hosts the base-model skill pretraining that stands in for a
// pretrained language model.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "delrec/nn/optim.hpp"
#include "delrec/prompting/prompt.hpp"
#include "delrec/tinylm/model.hpp"

namespace delrec::distill {

struct DistillConfig {
    double learning_rate = 5e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double lambda_init = 0.5;
    double lambda_min = 0.1;
    double lambda_max = 0.9;
    double ema_decay = 0.98;
    std::size_t warmup_steps = 10;
    // Pins lambda (0 = RPS only, 1 = TA only); bounds and EMAs are then ignored.
    std::optional<double> fixed_lambda;
    // soft_only normally; soft_base updates the base too (w_UDPSM).
    tinylm::Partition partition = tinylm::Partition::soft_only;
    double base_learning_rate = 1e-4;  // used only when the base is trainable
    std::uint64_t seed = 1;

    void validate() const;
    std::string canonical() const;
};

// A rendered prompt prepared for the model.
struct TrainItem {
    std::uint64_t example_id = 0;
    tinylm::InputSequence input;
    std::vector<tinylm::TokenId> label;
};
TrainItem to_train_item(const prompting::RenderedPrompt& p);
std::vector<TrainItem> to_train_items(std::span<const prompting::RenderedPrompt> prompts);

// Mean NLL of the labels under the model (adapters, if any, included).
nn::Tensor ta_loss(const tinylm::LMParams& params, std::span<const TrainItem* const> batch);
nn::Tensor rps_loss(const tinylm::LMParams& params, std::span<const TrainItem* const> batch);

struct DistillState {
    double lambda = 0.5;
    double ema_ta = 0.0;
    double ema_rps = 0.0;
    std::size_t step = 0;
    std::unique_ptr<nn::Lion> optimizer;
    std::unique_ptr<nn::Lion> base_optimizer;
};

DistillState init_state(const DistillConfig& config);

// Advances the step counter, folds the losses into the EMAs and returns the
// new lambda: lambda_init for the first warmup_steps steps, then
// clip(ema_rps / (ema_ta + ema_rps)).
double update_lambda(DistillState& state, double loss_ta, double loss_rps, const DistillConfig& config);

// clip(ema_rps / (ema_ta + ema_rps)); lambda_init when both are zero.
double lambda_from_emas(double ema_ta, double ema_rps, const DistillConfig& config);

struct StepLog {
    std::size_t step = 0;
    std::optional<double> loss_ta;
    std::optional<double> loss_rps;
    double lambda = 0.0;
    double grad_norm = 0.0;
};

// One optimizer step on the combined loss. A task whose weight is exactly 0
// is not evaluated. Throws on a non-finite loss.
StepLog distill_step(DistillState& state, tinylm::LMParams& params, std::span<const TrainItem* const> ta_batch,
                     std::span<const TrainItem* const> rps_batch, const DistillConfig& config);

struct Stage1Result {
    std::vector<StepLog> curve;
};

// Trains params.soft (initialized by the caller) for config.epochs epochs of
// interleaved TA/RPS batches, marks it trained and stores `provenance` with
// the stage-1 config hash filled in. epochs = 0 leaves the bank untouched and
// untrained. The shorter dataset wraps around within an epoch.
Stage1Result run_stage1(const DistillConfig& config, std::span<const TrainItem> ta, std::span<const TrainItem> rps,
                        tinylm::LMParams& params, const tinylm::BankProvenance& provenance = {});

// CSV `step,loss_ta,loss_rps,lambda,grad_norm`; absent losses are empty.
void write_curve(std::ostream& os, std::span<const StepLog> curve);

// Base-model skill pretraining. Each episode draws a random successor cycle
// over catalog items, renders a TA, RPS or LSR prompt from a history walking
// that cycle, and fills soft-prompt slots with (item, successor) pairs, one
// vector each: emb(item) + W * emb(successor), where W is a pretraining-only
// projection. The pair the answer needs is always present; the other slots
// hold further pairs up to a cap that grows during training. The base learns
// to answer by looking the prediction cue's anchor item up in the reference
// section, which the soft-prompt bank later fills on its own.
struct PretrainConfig {
    std::size_t steps = 1500;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    std::size_t warmup_steps = 100;
    // Extra (item, successor) recall queries appended after each answer.
    std::size_t recall_queries = 8;
    // Filled slots start at 2 and grow by one every `curriculum_steps` steps (0: all k from the start).
    std::size_t curriculum_steps = 40;
    // The share of episodes that keep the full prompt rises linearly from 0
    // to 1 over this many steps; the rest keep only the soft-prompt and
    // prediction sections.
    std::size_t context_ramp_steps = 600;
    std::uint64_t seed = 1;

    std::string canonical() const;
};

struct PretrainEpisode {
    // Soft slots still refer to 0..k-1. The label is the answer followed by
    // recall pairs "q succ(q)".
    TrainItem item;
    // Per label position: the token scored there, PAD where nothing is.
    std::vector<tinylm::TokenId> targets;
    // Per slot: the (item, successor) pair it encodes; (PAD, PAD) for an empty slot.
    std::vector<std::pair<catalog::ItemIndex, catalog::ItemIndex>> pairs;
};

// At most `max_pairs` slots are filled (0: all k). With probability
// 1 - full_prompt_share the prompt is cut down to its soft-prompt and
// prediction sections.
PretrainEpisode pretrain_episode(const prompting::Renderer& renderer, std::uint64_t seed, std::uint64_t index,
                                 std::size_t recall_queries = 0, std::size_t max_pairs = 0,
                                 double full_prompt_share = 1.0);

// Returns the mean loss of the last 50 steps. `progress` (optional) sees every step's loss.
double pretrain_base(tinylm::LMParams& params, const prompting::Renderer& renderer, const PretrainConfig& config,
                     const std::function<void(std::size_t, double)>& progress = {});

}  // namespace delrec::distill
