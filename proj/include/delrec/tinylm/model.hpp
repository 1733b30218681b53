// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Decoder-only transformer language model with three disjoint parameter
// partitions: the base weights, a soft-prompt bank spliced into the input
// sequence, and low-rank adapters P * diag(lambda) * Q on the attention query
// and value projections. Each input row also receives a linear map of the
// previous row's embedding (token shift).
//
// Files (little-endian, floats stored as f32):
//   bank      "DELSPB1", u32 k, u32 d, string provenance, k*d floats
//   adapters  "DELADP1", u32 version, string provenance, u32 budget,
//             u32 count, per target: string name, u32 rank, f32
//             importance[rank], u32 retained[rank]; then the ParamSet
//   model     "DELLMC1", u32 version, config fields, then sections
//             "base" (ParamSet), "soft" (bank body), "adapters" (optional)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delrec/nn/params.hpp"
#include "delrec/tinylm/vocab.hpp"

namespace delrec::tinylm {

struct LMConfig {
    std::size_t d_model = 128;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t ffn_dim = 512;
    std::size_t max_positions = 256;
    std::size_t vocab_size = 0;
    std::uint64_t seed = 1;

    void validate() const;
    std::string canonical() const;  // key=value lines, used for hashing
};

struct BankProvenance {
    std::string teacher_arch;
    std::string dataset_id;
    std::string stage1_config_hash;
    std::string template_hash;
};

class SoftPromptBank {
public:
    SoftPromptBank() = default;
    SoftPromptBank(std::size_t k, std::size_t d);

    std::size_t k() const { return matrix_ ? matrix_.rows() : 0; }
    std::size_t d() const { return matrix_ ? matrix_.cols() : 0; }
    bool empty() const { return k() == 0; }
    nn::Tensor& matrix() { return matrix_; }
    const nn::Tensor& matrix() const { return matrix_; }

    bool trained = false;
    BankProvenance provenance;

    std::string sha256() const;
    void write(std::ostream& os) const;
    static SoftPromptBank read(std::istream& is);
    void save(const std::filesystem::path& path) const;
    static SoftPromptBank load(const std::filesystem::path& path);

private:
    nn::Tensor matrix_;
};

// Entries ~ N(0, 0.02^2) from `seed`; trained = false.
SoftPromptBank init_soft_prompts(std::size_t k, std::size_t d, std::uint64_t seed);

// One adapted weight matrix W (out x in): W + P * diag(lambda) * Q.
struct AdapterTriplets {
    std::string target;  // base parameter name, e.g. "layer0.wq"
    std::size_t rank = 0;
    std::vector<double> importance;  // EMA of |lambda_i * dL/dlambda_i|
    std::vector<bool> retained;
};

class AdapterSet {
public:
    AdapterSet() = default;

    std::vector<AdapterTriplets>& triplets() { return triplets_; }
    const std::vector<AdapterTriplets>& triplets() const { return triplets_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    nn::Tensor& P(std::size_t i) { return params_.at(triplets_[i].target + ".P"); }
    nn::Tensor& lambda(std::size_t i) { return params_.at(triplets_[i].target + ".lambda"); }
    nn::Tensor& Q(std::size_t i) { return params_.at(triplets_[i].target + ".Q"); }
    const nn::Tensor& P(std::size_t i) const { return params_.at(triplets_[i].target + ".P"); }
    const nn::Tensor& lambda(std::size_t i) const { return params_.at(triplets_[i].target + ".lambda"); }
    const nn::Tensor& Q(std::size_t i) const { return params_.at(triplets_[i].target + ".Q"); }
    // Index of the triplet set attached to `target`, or -1.
    int find(std::string_view target) const;

    std::size_t budget = 0;
    std::string provenance;

    std::size_t total_ranks() const;
    std::size_t retained_ranks() const;

    // Folds |lambda * grad(lambda)| of the current gradients into the EMAs.
    void update_importance(double beta);
    // Re-zeroes lambda entries of pruned triplets.
    void apply_mask();

    std::string sha256() const { return params_.sha256(); }
    void write(std::ostream& os) const;
    static AdapterSet read(std::istream& is);
    void save(const std::filesystem::path& path) const;
    static AdapterSet load(const std::filesystem::path& path);

private:
    friend AdapterSet init_adapters(const LMConfig& config, std::size_t rank, std::size_t budget,
                                    std::uint64_t seed);
    std::vector<AdapterTriplets> triplets_;
    nn::ParamSet params_;
};

// Rank-`rank` adapters on every layer's wq and wv with lambda = 0 and
// P, Q ~ N(0, 0.02^2). budget = 0 selects half of the total ranks.
AdapterSet init_adapters(const LMConfig& config, std::size_t rank, std::size_t budget, std::uint64_t seed);

// Keeps the `budget` triplets with the highest importance across all matrices
// (ties by matrix order, then index) and zeroes the lambda of the others.
// Returns the number of triplets retained.
std::size_t adalora_reallocate(AdapterSet& adapters);

struct LMParams {
    LMConfig config;
    nn::ParamSet base;
    SoftPromptBank soft;
    std::optional<AdapterSet> adapters;

    static LMParams init(const LMConfig& config);
    std::size_t scalar_count() const;

    void save(const std::filesystem::path& path) const;
    static LMParams load(const std::filesystem::path& path);
};

// One input position: a hard token id, or a row of the soft-prompt bank.
struct InputToken {
    bool soft = false;
    std::uint32_t id = 0;

    static InputToken hard_token(TokenId t) { return {false, t}; }
    static InputToken slot(std::uint32_t j) { return {true, j}; }
    bool operator==(const InputToken&) const = default;
};
using InputSequence = std::vector<InputToken>;

struct LMExample {
    const InputSequence* input = nullptr;
    std::span<const TokenId> target_prefix;
};

// Next-token logits ((|target_prefix|+1) x |V|) for the sequence
// input, ANSWER_SEP, target_prefix; row t predicts target token t.
nn::Tensor forward_logits(const LMParams& params, const InputSequence& input, std::span<const TokenId> target_prefix);

// Batched form; returns one logits tensor per example.
std::vector<nn::Tensor> forward_batch(const LMParams& params, std::span<const LMExample> examples);

// Mean negative log-likelihood of `target` under `logits` (row t for token t);
// PAD_TOK targets are excluded.
nn::Tensor nll_loss(const nn::Tensor& logits, std::span<const TokenId> target);

// Mean over examples of nll_loss(forward(input, label[:-1]), label).
struct LabeledInput {
    const InputSequence* input = nullptr;
    std::span<const TokenId> label;
};
nn::Tensor batch_nll(const LMParams& params, std::span<const LabeledInput> batch);

// Per-token log-probabilities of each continuation after input + ANSWER_SEP.
// The shared context is encoded once.
std::vector<std::vector<double>> continuation_logprobs(const LMParams& params, const InputSequence& input,
                                                       std::span<const std::vector<TokenId>> continuations);

enum class Partition { soft_only, adapters_only, soft_base, soft_adapters, all };
Partition parse_partition(std::string_view name);
std::string_view partition_name(Partition p);

// Enables gradients on exactly the partition's tensors, disables the rest and
// clears every gradient buffer.
void set_trainable(LMParams& params, Partition p);
void set_frozen(LMParams& params);
std::vector<nn::Tensor> trainable_tensors(LMParams& params, Partition p);

// Gradients keyed "base/<name>", "soft/bank", "adapters/<name>" for the
// tensors of the partition that the loss reached. Other partitions are absent.
std::map<std::string, std::vector<double>> grads(LMParams& params, const std::function<nn::Tensor()>& loss,
                                                 Partition p);

}  // namespace delrec::tinylm
