// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>
#include <sstream>

#include "delrec/catalog/synthetic.hpp"
#include "delrec/distill/distill.hpp"
#include "delrec/util/error.hpp"
#include "doctest.h"

using namespace delrec;
using namespace delrec::distill;
using tinylm::InputToken;

namespace {

tinylm::LMParams toy(std::size_t k = 4) {
    tinylm::LMConfig c;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_dim = 32;
    c.max_positions = 32;
    c.vocab_size = 12;
    c.seed = 3;
    tinylm::LMParams p = tinylm::LMParams::init(c);
    for (double& v : p.base.at("tok_emb").value()) v *= 20.0;
    p.soft = tinylm::init_soft_prompts(k, c.d_model, 8);
    return p;
}

// A base whose answer position is driven by attention over the prompt, so the
// bank alone can move the prediction: no position embeddings, a zero
// ANSWER_SEP embedding and weights near unit gain.
tinylm::LMParams responsive(std::size_t k) {
    auto p = toy(k);
    for (std::size_t i = 0; i < p.base.size(); ++i) {
        const std::string& n = p.base.names()[i];
        if (p.base.tensors()[i].rows() > 1 && n.find("emb") == std::string::npos) {
            for (double& v : p.base.at(n).value()) v *= 20.0;
        }
    }
    for (double& v : p.base.at("tok_emb").value()) v *= 3.0;
    for (double& v : p.base.at("pos_emb").value()) v = 0.0;
    for (std::size_t j = 0; j < 16; ++j) p.base.at("tok_emb").value()[tinylm::kAnswerSep * 16 + j] = 0.0;
    return p;
}

TrainItem item(std::vector<InputToken> input, std::vector<tinylm::TokenId> label, std::uint64_t id = 0) {
    return TrainItem{id, std::move(input), std::move(label)};
}

InputToken H(tinylm::TokenId t) { return InputToken::hard_token(t); }
InputToken S(std::uint32_t j) { return InputToken::slot(j); }

std::vector<const TrainItem*> ptrs(const std::vector<TrainItem>& v) {
    std::vector<const TrainItem*> out;
    for (const auto& t : v) out.push_back(&t);
    return out;
}

double oracle_nll(const tinylm::LMParams& p, const TrainItem& t) {
    std::span<const tinylm::TokenId> prefix(t.label.data(), t.label.size() - 1);
    const nn::Tensor logits = tinylm::forward_logits(p, t.input, prefix);
    double sum = 0.0;
    for (std::size_t r = 0; r < t.label.size(); ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(r, c));
        sum += std::log(z) - logits.at(r, t.label[r]);
    }
    return sum / static_cast<double>(t.label.size());
}

}  // namespace

TEST_CASE("lambda from loss EMAs") {
    DistillConfig c;
    CHECK(lambda_from_emas(2.0, 2.0, c) == 0.5);
    CHECK(lambda_from_emas(1.0, 3.0, c) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(lambda_from_emas(0.0, 9.0, c) == 0.9);
    CHECK(lambda_from_emas(9.0, 0.0, c) == 0.1);
    CHECK(lambda_from_emas(0.0, 0.0, c) == c.lambda_init);

    DistillState s = init_state(c);
    Rng rng(3);
    for (std::size_t i = 1; i <= 300; ++i) {
        const double l = update_lambda(s, 5.0 * rng.uniform01(), 5.0 * rng.uniform01() * (i % 7 == 0 ? 20.0 : 1.0), c);
        CHECK(s.step == i);
        if (i <= c.warmup_steps) {
            CHECK(l == 0.5);
        }
        CHECK(l >= 0.1);
        CHECK(l <= 0.9);
    }

    // After warmup the EMAs track the losses and the larger loss gets the larger weight.
    DistillState t = init_state(c);
    for (int i = 0; i < 200; ++i) update_lambda(t, 1.0, 3.0, c);
    CHECK(t.ema_ta == doctest::Approx(1.0));
    CHECK(t.ema_rps == doctest::Approx(3.0));
    CHECK(t.lambda == doctest::Approx(0.75));

    DistillConfig bad;
    bad.lambda_min = 0.6;
    bad.lambda_max = 0.4;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = DistillConfig{};
    bad.lambda_max = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("task losses: uniform model, duplication and a direct oracle") {
    auto p = toy();
    const std::vector<TrainItem> one = {item({H(5), S(0), H(6), S(1)}, {7, 9})};
    const std::vector<TrainItem> two = {one[0], one[0]};
    CHECK(ta_loss(p, ptrs(one)).item() == doctest::Approx(rps_loss(p, ptrs(two)).item()).epsilon(1e-14));
    CHECK(std::abs(ta_loss(p, ptrs(one)).item() - oracle_nll(p, one[0])) < 1e-10);

    const std::vector<TrainItem> mixed = {one[0], item({S(2), H(4), H(8)}, {10})};
    const double expect = 0.5 * (oracle_nll(p, mixed[0]) + oracle_nll(p, mixed[1]));
    CHECK(std::abs(rps_loss(p, ptrs(mixed)).item() - expect) < 1e-10);

    auto uniform = toy();
    for (double& v : uniform.base.at("tok_emb").value()) v = 0.0;
    CHECK(ta_loss(uniform, ptrs(one)).item() == doctest::Approx(std::log(12.0)).epsilon(1e-12));

    CHECK_THROWS_AS(ta_loss(p, {}), Error);
}

TEST_CASE("a step with no gradient applies only weight decay") {
    auto p = toy();
    DistillConfig c;
    c.fixed_lambda = 1.0;
    DistillState s = init_state(c);
    const std::vector<TrainItem> hard_only = {item({H(5), H(6)}, {7})};
    const auto before = std::vector<double>(p.soft.matrix().value().begin(), p.soft.matrix().value().end());
    const std::string base_hash = p.base.sha256();
    distill_step(s, p, ptrs(hard_only), {}, c);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(p.soft.matrix().value()[i] == before[i] - c.learning_rate * (0.0 + c.weight_decay * before[i]));
    }
    CHECK(p.base.sha256() == base_hash);
}

TEST_CASE("stage-1 steps touch only the bank") {
    auto p = toy();
    const std::vector<TrainItem> ta = {item({H(5), S(0), H(6), S(1)}, {7}), item({S(2), H(4)}, {8, 9})};
    const std::vector<TrainItem> rps = {item({S(3), H(4), H(5)}, {10})};
    DistillConfig c;
    DistillState s = init_state(c);
    const std::string base_hash = p.base.sha256();
    const std::string bank_hash = p.soft.sha256();
    for (int i = 0; i < 100; ++i) {
        const StepLog log = distill_step(s, p, ptrs(ta), ptrs(rps), c);
        CHECK(log.step == static_cast<std::size_t>(i));
        CHECK(log.loss_ta.has_value());
        CHECK(log.loss_rps.has_value());
    }
    CHECK(p.base.sha256() == base_hash);
    CHECK(p.soft.sha256() != bank_hash);
    for (const auto& t : p.base.tensors()) CHECK_FALSE(t.has_grad());
}

TEST_CASE("rows outside the batch get exactly zero gradient") {
    auto p = toy(6);
    const std::vector<TrainItem> b = {item({H(5), S(0), H(6), S(3)}, {7}), item({S(3), H(4)}, {8})};
    const auto g = tinylm::grads(p, [&] { return ta_loss(p, ptrs(b)); }, tinylm::Partition::soft_only);
    const auto& bank = g.at("soft/bank");
    for (std::size_t row = 0; row < 6; ++row) {
        double mag = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mag += std::abs(bank[row * 16 + j]);
        if (row == 0 || row == 3) {
            CHECK(mag > 0.0);
        } else {
            CHECK(mag == 0.0);
        }
    }
    CHECK(g.size() == 1);
}

TEST_CASE("a single example overfits through the bank alone") {
    auto p = responsive(6);
    const std::vector<TrainItem> ex = {item({S(0), S(1), S(2), H(5), S(3), S(4), S(5)}, {9})};
    DistillConfig c;
    c.fixed_lambda = 1.0;
    DistillState s = init_state(c);
    double last = 0.0;
    for (int i = 0; i < 500; ++i) last = distill_step(s, p, ptrs(ex), {}, c).loss_ta.value();
    CHECK(ta_loss(p, ptrs(ex)).item() < 0.01);
    CHECK(last < 0.05);
}

TEST_CASE("a 32-example overfit drops the combined loss below 10%") {
    // Each prompt owns one bank row; labels cycle through eight tokens.
    auto p = responsive(32);
    std::vector<TrainItem> ta, rps;
    for (std::uint32_t i = 0; i < 16; ++i) {
        const auto t = static_cast<tinylm::TokenId>(4 + i % 8);
        ta.push_back(item({S(i), H(t), S(i)}, {static_cast<tinylm::TokenId>(4 + (i + 1) % 8)}, i));
        rps.push_back(item({S(16 + i), H(t), S(16 + i)}, {static_cast<tinylm::TokenId>(4 + (i + 3) % 8)}, i));
    }
    DistillConfig c;
    c.batch_size = 16;
    DistillState s = init_state(c);
    const auto tb = ptrs(ta), rb = ptrs(rps);
    const double initial = 0.5 * (ta_loss(p, tb).item() + rps_loss(p, rb).item());
    for (int i = 0; i < 500; ++i) distill_step(s, p, tb, rb, c);
    const double final_loss = 0.5 * (ta_loss(p, tb).item() + rps_loss(p, rb).item());
    CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("a non-finite loss aborts with the step index") {
    auto p = toy();
    const std::vector<TrainItem> b = {item({S(0), H(5)}, {7})};
    DistillConfig c;
    DistillState s = init_state(c);
    distill_step(s, p, ptrs(b), ptrs(b), c);
    p.soft.matrix().value()[0] = std::nan("");
    try {
        distill_step(s, p, ptrs(b), ptrs(b), c);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("run_stage1: epochs, curve, determinism and single-task banks") {
    const std::vector<TrainItem> ta = {item({S(0), H(5)}, {7}, 0), item({S(1), H(6)}, {8}, 1),
                                       item({S(2), H(4)}, {9}, 2)};
    const std::vector<TrainItem> rps = {item({S(3), H(5)}, {10}, 0), item({S(0), H(6)}, {11}, 1)};
    DistillConfig c;
    c.batch_size = 2;
    c.epochs = 0;

    auto p0 = toy();
    const std::string init_hash = p0.soft.sha256();
    CHECK(run_stage1(c, ta, rps, p0).curve.empty());
    CHECK_FALSE(p0.soft.trained);
    CHECK(p0.soft.sha256() == init_hash);

    c.epochs = 10;
    auto p1 = toy();
    auto p2 = toy();
    tinylm::BankProvenance prov{"sasrec", "synthetic", "", "tpl"};
    const auto r1 = run_stage1(c, ta, rps, p1, prov);
    run_stage1(c, ta, rps, p2, prov);
    CHECK(p1.soft.sha256() == p2.soft.sha256());
    CHECK(p1.soft.trained);
    CHECK(p1.soft.provenance.teacher_arch == "sasrec");
    CHECK(p1.soft.provenance.stage1_config_hash.size() == 64);
    REQUIRE(r1.curve.size() == 20);  // two steps per epoch: ceil(3 / 2)
    for (std::size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(r1.curve[i].step == i);
        if (i <= c.warmup_steps) CHECK(r1.curve[i].lambda == 0.5);
        CHECK(r1.curve[i].lambda >= 0.1);
        CHECK(r1.curve[i].lambda <= 0.9);
    }

    std::ostringstream csv;
    write_curve(csv, r1.curve);
    CHECK(csv.str().rfind("step,loss_ta,loss_rps,lambda,grad_norm\n0,", 0) == 0);

    DistillConfig rps_only = c;
    rps_only.fixed_lambda = 0.0;
    auto p3 = toy();
    const auto r3 = run_stage1(rps_only, {}, rps, p3);
    for (const auto& s : r3.curve) {
        CHECK(s.lambda == 0.0);
        CHECK_FALSE(s.loss_ta.has_value());
    }
    std::ostringstream csv3;
    write_curve(csv3, r3.curve);
    CHECK(csv3.str().find("\n0,,") != std::string::npos);

    auto p4 = toy();
    CHECK_THROWS_AS(run_stage1(c, {}, rps, p4), Error);
    CHECK_THROWS_AS(run_stage1(c, ta, {}, p4), Error);
}

TEST_CASE("pretraining episodes carry the successor map as reference pairs") {
    catalog::SyntheticOptions so;
    const auto ds = catalog::generate_synthetic(so);
    const auto universe = catalog::item_universe(ds.log);
    prompting::TemplateConfig tpl;
    tpl.k = 48;
    tpl.m = 10;
    std::vector<std::string> corpus(ds.catalog.titles.begin() + 1, ds.catalog.titles.end());
    const auto extra = prompting::template_corpus(tpl);
    corpus.insert(corpus.end(), extra.begin(), extra.end());
    const auto vocab = tinylm::Vocab::build(corpus, 4096);
    const prompting::Renderer r(vocab, ds.catalog, universe, tpl);

    for (std::uint64_t i = 0; i < 30; ++i) {
        const PretrainEpisode e = pretrain_episode(r, 5, i);
        CHECK(pretrain_episode(r, 5, i).item.input == e.item.input);
        REQUIRE(e.item.label.size() == 1);
        REQUIRE(e.pairs.size() == tpl.k);
        // The cue ends with the anchor item, and some slot maps the anchor to the label.
        const tinylm::TokenId anchor = e.item.input.back().id;
        CHECK_FALSE(e.item.input.back().soft);
        std::size_t hits = 0;
        std::set<catalog::ItemIndex> keys;
        for (const auto& [a, b] : e.pairs) {
            if (a == catalog::kPadItem) continue;
            CHECK(keys.insert(a).second);
            hits += r.title_tokens(a).front() == anchor && r.title_tokens(b) == e.item.label;
        }
        CHECK(hits == 1);
    }

    // Capped slots, recall queries and the cut-down prompt.
    for (std::uint64_t i = 0; i < 30; ++i) {
        const PretrainEpisode full = pretrain_episode(r, 5, i, 3, 4, 1.0);
        const PretrainEpisode bare = pretrain_episode(r, 5, i, 3, 4, 0.0);
        for (const PretrainEpisode* e : {&full, &bare}) {
            std::size_t filled = 0, slots = 0;
            std::set<std::pair<tinylm::TokenId, tinylm::TokenId>> present;
            for (const auto& [a, b] : e->pairs) {
                if (a == catalog::kPadItem) continue;
                ++filled;
                present.insert({r.title_tokens(a).front(), r.title_tokens(b).front()});
            }
            for (const auto& t : e->item.input) {
                if (!t.soft) continue;
                ++slots;
                CHECK(t.id < filled);
            }
            CHECK(filled == 4);
            CHECK(slots == 4);
            REQUIRE(e->item.label.size() == 7);
            REQUIRE(e->targets.size() == 7);
            CHECK(e->targets[0] == e->item.label[0]);
            for (std::size_t q = 0; q < 3; ++q) {
                CHECK(e->targets[1 + 2 * q] == tinylm::kPadTok);
                CHECK(e->targets[2 + 2 * q] == e->item.label[2 + 2 * q]);
                CHECK(present.count({e->item.label[1 + 2 * q], e->item.label[2 + 2 * q]}) == 1);
            }
        }
        CHECK(bare.item.input.size() < full.item.input.size());
        CHECK(bare.item.input.back() == full.item.input.back());
    }
}
