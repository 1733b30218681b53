// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "delrec/nn/ops.hpp"
#include "delrec/nn/optim.hpp"
#include "delrec/teachers/teacher.hpp"
#include "delrec/util/error.hpp"

namespace delrec::teachers {
namespace {

std::vector<ItemIndex> flatten(std::span<const catalog::SeqExample> ex, std::size_t L) {
    std::vector<ItemIndex> ids;
    ids.reserve(ex.size() * L);
    for (const auto& e : ex) {
        if (e.history.size() != L) throw Error("teacher: example history length does not match config");
        ids.insert(ids.end(), e.history.begin(), e.history.end());
    }
    return ids;
}

// 0-based rank of `target` among indices 1..n-1; equal scores rank the lower index first.
std::size_t rank_of(std::span<const double> scores, ItemIndex target) {
    const double s = scores[target];
    std::size_t rank = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
    }
    return rank;
}

}  // namespace

FullRanking full_ranking(const TeacherModel& model, std::span<const catalog::SeqExample> examples,
                         std::size_t k) {
    FullRanking out;
    if (examples.empty()) return out;
    const std::size_t n = model.item_count() + 1;
    const auto scores = model.score_batch(flatten(examples, model.config().history_length));
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const std::size_t r = rank_of(std::span(scores).subspan(i * n, n), examples[i].target);
        if (r < k) {
            out.hr += 1.0;
            out.ndcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
    }
    out.hr /= static_cast<double>(examples.size());
    out.ndcg /= static_cast<double>(examples.size());
    return out;
}

double full_ranking_hr(const TeacherModel& model, std::span<const catalog::SeqExample> examples,
                       std::size_t k) {
    return full_ranking(model, examples, k).hr;
}

TeacherModel train_teacher(const TeacherConfig& config, std::size_t item_count,
                           std::span<const catalog::SeqExample> train,
                           std::span<const catalog::SeqExample> valid, TrainResult* result) {
    if (train.empty()) throw Error("train_teacher: empty train split");
    TeacherModel model(config, item_count);
    TrainResult local;
    TrainResult& res = result != nullptr ? *result : local;
    res = TrainResult{};
    if (config.epochs == 0) return model;

    auto& params = model.params();
    params.set_requires_grad(true);
    std::unique_ptr<nn::Optimizer> opt;
    if (config.optimizer == OptimizerKind::adam) {
        nn::AdamOptions o;
        o.lr = config.learning_rate;
        opt = std::make_unique<nn::Adam>(params.tensors(), o);
    } else {
        opt = std::make_unique<nn::Adagrad>(params.tensors(), config.learning_rate);
    }

    const std::size_t L = config.history_length;
    const std::size_t d = config.embedding_dim;
    auto best = params.snapshot();
    FullRanking best_valid{-1.0, -1.0};
    std::size_t since_best = 0;
    std::size_t step = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng order_rng = Rng::substream(config.seed, "teacher.order", epoch);
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        std::vector<ItemIndex> ids;
        std::vector<std::uint32_t> targets;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
            const std::size_t nb = std::min(config.batch_size, order.size() - b0);
            ids.clear();
            targets.clear();
            for (std::size_t i = 0; i < nb; ++i) {
                const auto& e = train[order[b0 + i]];
                if (e.history.size() != L) throw Error("teacher: example history length does not match config");
                ids.insert(ids.end(), e.history.begin(), e.history.end());
                targets.push_back(e.target);
            }
            ++step;
            Rng drop = Rng::substream(config.seed, "teacher.dropout", step);
            params.zero_grad();
            const nn::Tensor loss = nn::cross_entropy(model.logits(ids, &drop), targets, -1, true);
            if (!std::isfinite(loss.item())) {
                throw Error("train_teacher: loss diverged at step " + std::to_string(step));
            }
            nn::backward(loss);
            auto& emb = params.at("item_emb");
            if (emb.has_grad()) std::fill_n(emb.grad().begin(), d, 0.0);
            opt->step();
            loss_sum += loss.item();
            ++batches;
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(batches);
        if (!valid.empty()) {
            const FullRanking v = full_ranking(model, valid, 10);
            log.valid_hr10 = v.hr;
            log.valid_ndcg10 = v.ndcg;
            // NDCG@10 breaks HR@10 ties, which are common once HR@10 saturates on small catalogs.
            if (v.hr > best_valid.hr || (v.hr == best_valid.hr && v.ndcg > best_valid.ndcg)) {
                best_valid = v;
                best = params.snapshot();
                res.best_epoch = epoch;
                res.best_valid_hr10 = v.hr;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                res.epochs.push_back(log);
                break;
            }
        } else {
            best = params.snapshot();
            res.best_epoch = epoch;
        }
        res.epochs.push_back(log);
    }
    params.restore(best);
    params.zero_grad();
    params.set_requires_grad(false);
    params.round_to_f32();
    return model;
}

std::vector<ItemIndex> top_h(std::span<const double> scores, std::size_t h) {
    if (scores.empty() || h > scores.size() - 1) throw Error("top_h: h exceeds the item count");
    std::vector<ItemIndex> idx(scores.size() - 1);
    std::iota(idx.begin(), idx.end(), ItemIndex{1});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(h), idx.end(),
                      [&](ItemIndex a, ItemIndex b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    idx.resize(h);
    return idx;
}

std::vector<TeacherTopH> export_top_h(const TeacherModel& model,
                                      std::span<const catalog::SeqExample> examples, std::size_t h) {
    if (h == 0) throw Error("export_top_h: h must be >= 1");
    if (h > model.item_count()) throw Error("export_top_h: h exceeds the item count");
    const std::size_t n = model.item_count() + 1;
    const auto scores = model.score_batch(flatten(examples, model.config().history_length));
    std::vector<TeacherTopH> out;
    out.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const std::span<const double> row(scores.data() + i * n, n);
        const auto logp = nn::log_softmax_row(row.subspan(1));
        TeacherTopH t;
        t.example_id = examples[i].id;
        t.arch = std::string(arch_name(model.config().arch));
        t.items = top_h(row, h);
        for (ItemIndex it : t.items) t.scores.push_back(std::exp(logp[it - 1]));
        out.push_back(std::move(t));
    }
    return out;
}

void write_top_h(std::ostream& os, std::span<const TeacherTopH> rows, const catalog::ItemCatalog& catalog) {
    for (const auto& r : rows) {
        os << r.example_id << '\t' << r.arch << '\t';
        for (std::size_t k = 0; k < r.items.size(); ++k) {
            if (k) os << ',';
            os << catalog.raw_id(r.items[k]) << ':' << std::fixed << std::setprecision(6) << r.scores[k];
        }
        os << '\n';
    }
}

std::vector<TeacherTopH> read_top_h(std::istream& is, const catalog::ItemCatalog& catalog) {
    std::unordered_map<std::string, ItemIndex> index;
    for (std::size_t i = 1; i < catalog.raw_ids.size(); ++i) index.emplace(catalog.raw_ids[i], static_cast<ItemIndex>(i));
    std::vector<TeacherTopH> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fail = [&] { throw Error("top-h file line " + std::to_string(lineno) + ": malformed"); };
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) fail();
        TeacherTopH r;
        try {
            r.example_id = std::stoull(line.substr(0, t1));
        } catch (const std::exception&) {
            fail();
        }
        r.arch = line.substr(t1 + 1, t2 - t1 - 1);
        std::stringstream list(line.substr(t2 + 1));
        std::string entry;
        while (std::getline(list, entry, ',')) {
            const auto colon = entry.rfind(':');
            if (colon == std::string::npos) fail();
            const auto it = index.find(entry.substr(0, colon));
            if (it == index.end()) throw Error("top-h file line " + std::to_string(lineno) + ": unknown item");
            r.items.push_back(it->second);
            try {
                r.scores.push_back(std::stod(entry.substr(colon + 1)));
            } catch (const std::exception&) {
                fail();
            }
        }
        if (r.items.empty()) fail();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace delrec::teachers
