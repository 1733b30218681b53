// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Candidate ranking and evaluation: the verbalizer turns language-model token
// probabilities into one score per candidate item, and HR@k / NDCG@k
// summarize where the ground truth landed.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "delrec/catalog/catalog.hpp"
#include "delrec/prompting/prompt.hpp"
#include "delrec/tinylm/model.hpp"

namespace delrec::rank {

struct RankResult {
    std::uint64_t example_id = 0;
    std::vector<double> candidate_scores;
    std::vector<std::size_t> ranking;  // candidate indices, best first
    std::size_t target_rank = 0;       // 1-based
};

// Orders candidates by descending score; the lower index wins ties.
RankResult rank_scores(std::uint64_t example_id, std::vector<double> scores, std::size_t target_index);

// Length-normalized log-probability of each title after input + ANSWER_SEP.
std::vector<double> title_scores(const tinylm::LMParams& params, const tinylm::InputSequence& input,
                                 std::span<const std::vector<tinylm::TokenId>> titles);

// Scores prompt.candidates by their titles; the target is prompt.label_item.
RankResult verbalize(const tinylm::LMParams& params, const prompting::RenderedPrompt& prompt,
                     const prompting::Renderer& renderer);

double hr_at_k(std::span<const std::size_t> ranks, std::size_t k);
double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct MetricsReport {
    std::string label;  // free-form run name, e.g. the ablation
    double hr1 = 0.0, hr5 = 0.0, hr10 = 0.0;
    double ndcg5 = 0.0, ndcg10 = 0.0;
    std::size_t n = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string dataset_hash;
    std::string template_hash;
    std::string bank_hash;
    std::vector<std::uint64_t> example_ids;
    std::vector<std::size_t> ranks;
};

// Aggregates per-example results in the given order. Throws when empty.
MetricsReport summarize(std::span<const RankResult> results);

// Scores for the candidate set of one example (same order as the set).
using CandidateScorer =
    std::function<std::vector<double>(const catalog::SeqExample&, const catalog::CandidateSet&)>;

// Draws catalog::sample_candidates(example, universe, m, seed) per example and ranks them.
std::vector<RankResult> rank_examples(const CandidateScorer& scorer, std::span<const catalog::SeqExample> examples,
                                      std::span<const catalog::ItemIndex> universe, std::size_t m,
                                      std::uint64_t seed);

// The language model on LSR prompts, with candidates drawn by the renderer's m and seed.
std::vector<RankResult> rank_examples(const tinylm::LMParams& params, const prompting::Renderer& renderer,
                                      std::span<const catalog::SeqExample> examples);

struct TTest {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

// Paired two-sided t-test on a - b. With zero variance of the differences,
// p = 1 when the mean difference is zero and p = 0 otherwise.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

// Per-example indicator rank <= k, for significance tests.
std::vector<double> hits(std::span<const std::size_t> ranks, std::size_t k);

void write_report(std::ostream& os, const MetricsReport& report);
MetricsReport read_report(std::istream& is);

}  // namespace delrec::rank
