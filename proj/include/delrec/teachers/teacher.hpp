// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Miniature conventional sequential recommenders (SASRec, GRU4Rec, Caser)
// trained with full-softmax cross-entropy, and their top-h exports.
//
// Checkpoint layout (little-endian):
//   magic "DELTCH1\n", u32 format version,
//   arch name, u32 embedding_dim, u32 item_count, u64 seed,
//   u32 blocks, u32 heads, u32 horizontal_filters, u32 vertical_filters,
//   u32 history_length,
//   then the parameter tensors in construction order (see ParamSet::write).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delrec/catalog/catalog.hpp"
#include "delrec/nn/params.hpp"

namespace delrec::teachers {

using catalog::ItemIndex;

enum class Arch { sasrec, gru4rec, caser };
enum class OptimizerKind { adam, adagrad };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view name);

struct TeacherConfig {
    Arch arch = Arch::sasrec;
    std::size_t embedding_dim = 100;
    std::size_t blocks = 2;  // sasrec attention blocks
    std::size_t heads = 1;
    std::size_t horizontal_filters = 16;  // caser
    std::size_t vertical_filters = 4;     // caser
    double dropout = 0.5;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::size_t epochs = 20;
    std::size_t patience = 5;
    std::size_t history_length = 10;
    std::uint64_t seed = 1;

    static TeacherConfig defaults(Arch arch);
    void validate() const;
};

inline constexpr double kPadScore = -std::numeric_limits<double>::infinity();

class TeacherModel {
public:
    TeacherModel(const TeacherConfig& config, std::size_t item_count);

    const TeacherConfig& config() const { return config_; }
    std::size_t item_count() const { return item_count_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    // Logits (batch x item_count+1) for the item following each history.
    // Histories are concatenated, history_length entries each. Dropout is
    // applied only when `rng` is non-null.
    nn::Tensor logits(std::span<const ItemIndex> histories, Rng* rng) const;

    // Eval-mode scores over all items; index 0 (PAD) is kPadScore.
    std::vector<double> score_next(std::span<const ItemIndex> history) const;
    // Row-major batch x (item_count+1) scores for concatenated histories.
    std::vector<double> score_batch(std::span<const ItemIndex> histories) const;

    // sasrec only: final-layer hidden states, history_length x dim.
    nn::Tensor hidden_states(std::span<const ItemIndex> history) const;

    void save(const std::filesystem::path& path) const;
    static TeacherModel load(const std::filesystem::path& path);

private:
    nn::Tensor sasrec_hidden(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng, bool last_only) const;
    nn::Tensor gru_final(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng) const;
    nn::Tensor caser_final(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng) const;
    void check_ids(std::span<const ItemIndex> ids) const;

    TeacherConfig config_;
    std::size_t item_count_;
    nn::ParamSet params_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_hr10 = 0.0;
    double valid_ndcg10 = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;  // 0 = initial weights
    double best_valid_hr10 = 0.0;
};

// Trains on `train`, early-stopping on full-ranking HR@10 (NDCG@10 on ties) over `valid`
// (skipped when empty), and leaves the best weights in the returned model,
// rounded to float32.
TeacherModel train_teacher(const TeacherConfig& config, std::size_t item_count,
                           std::span<const catalog::SeqExample> train,
                           std::span<const catalog::SeqExample> valid, TrainResult* result = nullptr);

struct FullRanking {
    double hr = 0.0;
    double ndcg = 0.0;
};

// Full-ranking HR@k / NDCG@k (PAD excluded; ties broken toward the lower index).
FullRanking full_ranking(const TeacherModel& model, std::span<const catalog::SeqExample> examples,
                         std::size_t k);
double full_ranking_hr(const TeacherModel& model, std::span<const catalog::SeqExample> examples,
                       std::size_t k);

struct TeacherTopH {
    std::uint64_t example_id = 0;
    std::string arch;
    std::vector<ItemIndex> items;  // descending score
    std::vector<double> scores;    // softmax probabilities over real items
};

// The h best items of a score vector (index 0 excluded); ties go to the lower index.
std::vector<ItemIndex> top_h(std::span<const double> scores, std::size_t h);

std::vector<TeacherTopH> export_top_h(const TeacherModel& model,
                                      std::span<const catalog::SeqExample> examples, std::size_t h);

// `example_id \t arch \t i1:s1,...` with raw item ids and 6-decimal scores.
void write_top_h(std::ostream& os, std::span<const TeacherTopH> rows, const catalog::ItemCatalog& catalog);
std::vector<TeacherTopH> read_top_h(std::istream& is, const catalog::ItemCatalog& catalog);

}  // namespace delrec::teachers
