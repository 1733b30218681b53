// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/rank/rank.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "delrec/util/error.hpp"
#include "json.hpp"

namespace delrec::rank {

RankResult rank_scores(std::uint64_t example_id, std::vector<double> scores, std::size_t target_index) {
    if (scores.empty()) throw Error("rank: no candidates");
    if (target_index >= scores.size()) throw Error("rank: target index out of range");
    RankResult r;
    r.example_id = example_id;
    r.ranking.resize(scores.size());
    std::iota(r.ranking.begin(), r.ranking.end(), std::size_t{0});
    std::stable_sort(r.ranking.begin(), r.ranking.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    r.target_rank = static_cast<std::size_t>(std::find(r.ranking.begin(), r.ranking.end(), target_index) -
                                             r.ranking.begin()) + 1;
    r.candidate_scores = std::move(scores);
    return r;
}

std::vector<double> title_scores(const tinylm::LMParams& params, const tinylm::InputSequence& input,
                                 std::span<const std::vector<tinylm::TokenId>> titles) {
    for (const auto& t : titles) {
        if (t.empty()) throw Error("verbalize: empty candidate title");
    }
    const auto lp = tinylm::continuation_logprobs(params, input, titles);
    std::vector<double> out;
    out.reserve(lp.size());
    for (const auto& row : lp) {
        double sum = 0.0;
        for (double v : row) sum += v;
        out.push_back(sum / static_cast<double>(row.size()));
    }
    return out;
}

RankResult verbalize(const tinylm::LMParams& params, const prompting::RenderedPrompt& prompt,
                     const prompting::Renderer& renderer) {
    const auto it = std::find(prompt.candidates.begin(), prompt.candidates.end(), prompt.label_item);
    if (it == prompt.candidates.end()) throw Error("verbalize: the label is not among the candidates");
    std::vector<std::vector<tinylm::TokenId>> titles;
    titles.reserve(prompt.candidates.size());
    for (auto c : prompt.candidates) titles.push_back(renderer.title_tokens(c));
    return rank_scores(prompt.example_id, title_scores(params, prompt.input(), titles),
                       static_cast<std::size_t>(it - prompt.candidates.begin()));
}

double hr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw Error("hr_at_k: empty rank list");
    std::size_t hit = 0;
    for (auto r : ranks) {
        if (r == 0) throw Error("hr_at_k: ranks are 1-based");
        hit += r <= k;
    }
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw Error("ndcg_at_k: empty rank list");
    double sum = 0.0;
    for (auto r : ranks) {
        if (r == 0) throw Error("ndcg_at_k: ranks are 1-based");
        if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    return sum / static_cast<double>(ranks.size());
}

MetricsReport summarize(std::span<const RankResult> results) {
    if (results.empty()) throw Error("evaluate: no examples");
    MetricsReport m;
    for (const auto& r : results) {
        m.example_ids.push_back(r.example_id);
        m.ranks.push_back(r.target_rank);
    }
    m.n = results.size();
    m.hr1 = hr_at_k(m.ranks, 1);
    m.hr5 = hr_at_k(m.ranks, 5);
    m.hr10 = hr_at_k(m.ranks, 10);
    m.ndcg5 = ndcg_at_k(m.ranks, 5);
    m.ndcg10 = ndcg_at_k(m.ranks, 10);
    return m;
}

std::vector<RankResult> rank_examples(const CandidateScorer& scorer, std::span<const catalog::SeqExample> examples,
                                      std::span<const catalog::ItemIndex> universe, std::size_t m,
                                      std::uint64_t seed) {
    std::vector<RankResult> out;
    out.reserve(examples.size());
    for (const auto& e : examples) {
        const auto cand = catalog::sample_candidates(e, universe, m, seed);
        auto scores = scorer(e, cand);
        if (scores.size() != cand.items.size()) throw Error("evaluate: scorer returned the wrong number of scores");
        out.push_back(rank_scores(e.id, std::move(scores), cand.target_index));
    }
    return out;
}

std::vector<RankResult> rank_examples(const tinylm::LMParams& params, const prompting::Renderer& renderer,
                                      std::span<const catalog::SeqExample> examples) {
    std::vector<RankResult> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(verbalize(params, renderer.render_lsr(e), renderer));
    return out;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("paired_t_test: samples differ in length");
    if (a.size() < 2) throw Error("paired_t_test: need at least two pairs");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    TTest r;
    r.df = n - 1.0;
    if (ss == 0.0) {
        r.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
        r.p = mean == 0.0 ? 1.0 : 0.0;
        return r;
    }
    const double sd = std::sqrt(ss / r.df);
    r.t = mean / (sd / std::sqrt(n));
    // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
    r.p = boost::math::ibeta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
    return r;
}

std::vector<double> hits(std::span<const std::size_t> ranks, std::size_t k) {
    std::vector<double> out;
    out.reserve(ranks.size());
    for (auto r : ranks) out.push_back(r <= k ? 1.0 : 0.0);
    return out;
}

namespace {

// Missing metrics (NaN) are stored as null.
void put_metric(nlohmann::ordered_json& j, const char* key, double v) {
    if (std::isnan(v)) {
        j[key] = nullptr;
    } else {
        j[key] = v;
    }
}

double get_metric(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

void write_report(std::ostream& os, const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["n"] = r.n;
    put_metric(j, "hr@1", r.hr1);
    put_metric(j, "hr@5", r.hr5);
    put_metric(j, "hr@10", r.hr10);
    put_metric(j, "ndcg@5", r.ndcg5);
    put_metric(j, "ndcg@10", r.ndcg10);
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["dataset_hash"] = r.dataset_hash;
    j["template_hash"] = r.template_hash;
    j["bank_hash"] = r.bank_hash;
    j["example_ids"] = r.example_ids;
    j["ranks"] = r.ranks;
    os << j.dump(2) << '\n';
}

MetricsReport read_report(std::istream& is) {
    nlohmann::json j;
    try {
        is >> j;
        MetricsReport r;
        r.label = j.at("label").get<std::string>();
        r.n = j.at("n").get<std::size_t>();
        r.hr1 = get_metric(j, "hr@1");
        r.hr5 = get_metric(j, "hr@5");
        r.hr10 = get_metric(j, "hr@10");
        r.ndcg5 = get_metric(j, "ndcg@5");
        r.ndcg10 = get_metric(j, "ndcg@10");
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.dataset_hash = j.at("dataset_hash").get<std::string>();
        r.template_hash = j.at("template_hash").get<std::string>();
        r.bank_hash = j.at("bank_hash").get<std::string>();
        r.example_ids = j.at("example_ids").get<std::vector<std::uint64_t>>();
        r.ranks = j.at("ranks").get<std::vector<std::size_t>>();
        if (r.ranks.size() != r.n || r.example_ids.size() != r.n) throw Error("report: rank list length differs from n");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("report: ") + e.what());
    }
}

}  // namespace delrec::rank
