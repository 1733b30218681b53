// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "delrec/adapt/adapt.hpp"
#include "delrec/util/error.hpp"
#include "doctest.h"

using namespace delrec;
using namespace delrec::adapt;
using distill::TrainItem;
using tinylm::InputToken;

namespace {

tinylm::LMParams toy(std::size_t k = 4) {
    tinylm::LMConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.ffn_dim = 32;
    c.max_positions = 32;
    c.vocab_size = 12;
    c.seed = 5;
    tinylm::LMParams p = tinylm::LMParams::init(c);
    for (double& v : p.base.at("tok_emb").value()) v *= 20.0;
    p.soft = tinylm::init_soft_prompts(k, c.d_model, 8);
    p.soft.trained = true;
    return p;
}

InputToken H(tinylm::TokenId t) { return InputToken::hard_token(t); }
InputToken S(std::uint32_t j) { return InputToken::slot(j); }

std::vector<TrainItem> data(std::size_t n) {
    std::vector<TrainItem> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = static_cast<tinylm::TokenId>(4 + i % 8);
        out.push_back(TrainItem{i, {S(0), S(1), H(a), S(2), H(static_cast<tinylm::TokenId>(4 + (i + 3) % 8))},
                                {static_cast<tinylm::TokenId>(4 + (a - 3) % 8)}});
    }
    return out;
}

std::vector<const TrainItem*> ptrs(const std::vector<TrainItem>& v) {
    std::vector<const TrainItem*> out;
    for (const auto& t : v) out.push_back(&t);
    return out;
}

AdaptConfig quick(std::size_t epochs) {
    AdaptConfig c;
    c.epochs = epochs;
    c.batch_size = 4;
    c.learning_rate = 1e-2;
    c.rank = 2;
    c.prune_every = 3;
    return c;
}

}  // namespace

TEST_CASE("ablation names and per-variant wiring") {
    CHECK(all_ablations().size() == 8);
    std::set<std::string> names;
    for (Ablation a : all_ablations()) {
        names.insert(std::string(ablation_name(a)));
        CHECK(parse_ablation(ablation_name(a)) == a);
    }
    CHECK(names.size() == 8);
    CHECK_THROWS_AS(parse_ablation("wo_TA"), Error);
    using M = prompting::TemplateConfig::SoftMode;
    CHECK(soft_mode_for(Ablation::wo_sp) == M::none);
    CHECK(soft_mode_for(Ablation::w_mcp) == M::manual);
    CHECK(soft_mode_for(Ablation::w_usp) == M::bank);
    CHECK(stage1_partition(Ablation::w_udpsm) == tinylm::Partition::soft_base);
    CHECK(stage1_partition(Ablation::none) == tinylm::Partition::soft_only);
    CHECK(stage2_partition(Ablation::w_ulsr) == tinylm::Partition::soft_adapters);
    CHECK(stage2_partition(Ablation::w_udpsm) == tinylm::Partition::adapters_only);

    AdaptConfig c;
    CHECK(c.learning_rate == 1e-4);
    CHECK(c.weight_decay == 1e-6);
    c.rank = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    AdaptConfig d;
    d.ablation = Ablation::w_usp;
    CHECK(d.canonical() != AdaptConfig{}.canonical());
}

TEST_CASE("LSR loss: uniform model, zero adapters and a direct oracle") {
    auto p = toy();
    const auto items = data(6);
    const auto batch = ptrs(items);
    const double plain = lsr_loss(p, batch).item();

    p.adapters = tinylm::init_adapters(p.config, 3, 0, 9);
    CHECK(lsr_loss(p, batch).item() == plain);
    const nn::Tensor with = tinylm::forward_logits(p, items[0].input, {});
    auto no_adapters = p;
    no_adapters.adapters.reset();
    const nn::Tensor without = tinylm::forward_logits(no_adapters, items[0].input, {});
    CHECK(std::equal(with.value().begin(), with.value().end(), without.value().begin()));

    double sum = 0.0;
    for (const auto& it : items) {
        const nn::Tensor logits = tinylm::forward_logits(p, it.input, {});
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(0, c));
        sum += std::log(z) - logits.at(0, it.label[0]);
    }
    CHECK(std::abs(plain - sum / static_cast<double>(items.size())) < 1e-10);

    auto flat = toy();
    for (double& v : flat.base.at("tok_emb").value()) v = 0.0;
    CHECK(lsr_loss(flat, batch).item() == doctest::Approx(std::log(12.0)).epsilon(1e-12));
    CHECK_THROWS_AS(lsr_loss(p, std::span<const TrainItem* const>{}), Error);
}

TEST_CASE("epochs = 0 leaves the stage-1 model unchanged") {
    auto p = toy();
    const auto items = data(8);
    const nn::Tensor before = tinylm::forward_logits(p, items[1].input, {});
    const auto r = run_stage2(quick(0), items, p);
    CHECK(r.epochs.empty());
    REQUIRE(p.adapters);
    for (std::size_t i = 0; i < p.adapters->triplets().size(); ++i) {
        for (double v : p.adapters->lambda(i).value()) CHECK(v == 0.0);
    }
    const nn::Tensor after = tinylm::forward_logits(p, items[1].input, {});
    CHECK(std::equal(before.value().begin(), before.value().end(), after.value().begin()));
}

TEST_CASE("100 stage-2 steps touch only the adapters and respect the budget") {
    auto p = toy();
    const auto items = data(40);
    const std::string base = p.base.sha256(), bank = p.soft.sha256();
    AdaptConfig c = quick(10);  // 10 batches per epoch
    c.budget = 3;
    std::size_t calls = 0;
    const auto r = run_stage2(c, items, p, [&](const tinylm::LMParams& m, std::size_t k) {
        CHECK(k == 10);
        CHECK(m.adapters->retained_ranks() <= 3);
        ++calls;
        return 0.5;
    });
    CHECK(calls == 10);
    CHECK(r.epochs.size() == 10);
    CHECK(p.base.sha256() == base);
    CHECK(p.soft.sha256() == bank);
    CHECK(p.adapters->retained_ranks() <= 3);
    CHECK(p.adapters->budget == 3);
    bool moved = false;
    for (std::size_t i = 0; i < p.adapters->triplets().size(); ++i) {
        for (double v : p.adapters->lambda(i).value()) moved = moved || v != 0.0;
        const auto& t = p.adapters->triplets()[i];
        for (std::size_t j = 0; j < t.rank; ++j) {
            if (!t.retained[j]) CHECK(p.adapters->lambda(i).value()[j] == 0.0);
        }
    }
    CHECK(moved);
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
    CHECK(p.adapters->provenance.find("ablation=none") == 0);
}

TEST_CASE("the best validation epoch is kept, ties going to the earlier one") {
    auto p = toy();
    const auto items = data(16);
    const std::vector<double> hr = {0.4, 0.7, 0.7, 0.2};
    std::vector<std::string> seen;
    const auto r = run_stage2(quick(4), items, p, [&](const tinylm::LMParams& m, std::size_t) {
        seen.push_back(m.adapters->sha256());
        return hr[seen.size() - 1];
    });
    CHECK(r.best_epoch == 2);
    REQUIRE(seen.size() == 4);
    CHECK(seen[1] != seen[2]);
    CHECK(p.adapters->sha256() == seen[1]);
    REQUIRE(r.epochs.size() == 4);
    CHECK(*r.epochs[2].valid_hr == 0.7);

    auto q = toy();
    const auto last = run_stage2(quick(3), items, q);
    CHECK(last.best_epoch == 3);
}

TEST_CASE("bank requirements per variant") {
    const auto items = data(8);
    auto untrained = toy();
    untrained.soft.trained = false;
    CHECK_THROWS_WITH_AS(run_stage2(quick(1), items, untrained), doctest::Contains("untrained"), Error);
    AdaptConfig usp = quick(1);
    usp.ablation = Ablation::w_usp;
    CHECK_NOTHROW(run_stage2(usp, items, untrained));

    auto none = toy();
    none.soft = tinylm::SoftPromptBank{};
    std::vector<TrainItem> hard;
    for (const auto& it : items) {
        TrainItem h = it;
        std::erase_if(h.input, [](const InputToken& t) { return t.soft; });
        hard.push_back(h);
    }
    AdaptConfig wo = quick(1);
    wo.ablation = Ablation::wo_sp;
    CHECK_NOTHROW(run_stage2(wo, hard, none));
    CHECK_THROWS_AS(run_stage2(quick(1), hard, none), Error);
    CHECK_THROWS_AS(run_stage2(quick(1), std::span<const TrainItem>{}, none), Error);

    auto ulsr = toy();
    const std::string bank = ulsr.soft.sha256(), base = ulsr.base.sha256();
    AdaptConfig u = quick(2);
    u.ablation = Ablation::w_ulsr;
    run_stage2(u, items, ulsr);
    CHECK(ulsr.soft.sha256() != bank);
    CHECK(ulsr.base.sha256() == base);
}

TEST_CASE("ablation banks") {
    Stage1Banks b;
    b.k = 4;
    b.d = 16;
    b.seed = 21;
    CHECK_FALSE(build_ablation_bank(Ablation::wo_sp, b).has_value());
    CHECK_FALSE(build_ablation_bank(Ablation::w_mcp, b).has_value());
    const auto usp = build_ablation_bank(Ablation::w_usp, b);
    REQUIRE(usp);
    CHECK(usp->sha256() == tinylm::init_soft_prompts(4, 16, 21).sha256());
    CHECK_FALSE(usp->trained);
    CHECK_THROWS_AS(build_ablation_bank(Ablation::none, b), Error);
    CHECK_THROWS_AS(build_ablation_bank(Ablation::wo_ta_bank, b), Error);

    // The RPS-only bank comes from a stage-1 run with lambda pinned at 0.
    auto p = toy();
    p.soft.trained = false;
    const auto items = data(8);
    distill::DistillConfig dc;
    dc.epochs = 1;
    dc.batch_size = 4;
    dc.fixed_lambda = 0.0;
    const auto res = distill::run_stage1(dc, {}, items, p);
    REQUIRE(res.curve.size() == 2);
    for (const auto& s : res.curve) {
        CHECK(s.lambda == 0.0);
        CHECK_FALSE(s.loss_ta.has_value());
    }
    b.rps_only = p.soft;
    const auto wo_ta = build_ablation_bank(Ablation::wo_ta_bank, b);
    REQUIRE(wo_ta);
    CHECK(wo_ta->sha256() == p.soft.sha256());
    CHECK_THROWS_AS(build_ablation_bank(Ablation::wo_rps_bank, b), Error);
}
