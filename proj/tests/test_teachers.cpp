// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <sstream>

#include "delrec/catalog/synthetic.hpp"
#include "delrec/nn/ops.hpp"
#include "delrec/simd/kernels.hpp"
#include "delrec/teachers/teacher.hpp"
#include "delrec/util/error.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace delrec;
using namespace delrec::teachers;
using catalog::kPadItem;

namespace {

TeacherConfig tiny_config(Arch arch) {
    TeacherConfig c = TeacherConfig::defaults(arch);
    c.embedding_dim = 6;
    c.blocks = 2;
    c.heads = 2;
    c.horizontal_filters = 5;
    c.vertical_filters = 2;
    c.history_length = 4;
    c.dropout = 0.0;
    c.seed = 11;
    return c;
}

struct Cyclic {
    catalog::Dataset ds;
    std::vector<catalog::SeqExample> train, valid, test;
};

const Cyclic& cyclic() {
    static const Cyclic c = [] {
        Cyclic out;
        out.ds = catalog::generate_synthetic({});
        const auto ex = catalog::window_examples(catalog::chronological_split(out.ds.log), 10);
        out.train = catalog::select_split(ex, catalog::Split::train);
        out.valid = catalog::select_split(ex, catalog::Split::valid);
        out.test = catalog::select_split(ex, catalog::Split::test);
        return out;
    }();
    return c;
}

TeacherConfig cyclic_config(Arch arch) {
    TeacherConfig c = TeacherConfig::defaults(arch);
    c.epochs = 20;
    c.seed = 3;
    return c;
}

std::vector<catalog::ItemIndex> history_ending(catalog::ItemIndex last, std::size_t len) {
    std::vector<catalog::ItemIndex> h(len);
    for (std::size_t k = 0; k < len; ++k) {
        const auto back = static_cast<catalog::ItemIndex>(len - 1 - k);
        h[k] = static_cast<catalog::ItemIndex>((last - 1 + 20 * 4 - back) % 20 + 1);
    }
    return h;
}

}  // namespace

TEST_CASE("default hyperparameters per architecture") {
    const auto s = TeacherConfig::defaults(Arch::sasrec);
    CHECK(s.embedding_dim == 100);
    CHECK(s.blocks == 2);
    CHECK(s.learning_rate == 1e-3);
    CHECK(s.dropout == 0.5);
    CHECK(s.batch_size == 128);
    CHECK(s.optimizer == OptimizerKind::adam);
    const auto c = TeacherConfig::defaults(Arch::caser);
    CHECK(c.embedding_dim == 100);
    CHECK(c.horizontal_filters == 16);
    CHECK(c.dropout == 0.4);
    CHECK(c.batch_size == 128);
    const auto g = TeacherConfig::defaults(Arch::gru4rec);
    CHECK(g.embedding_dim == 64);
    CHECK(g.learning_rate == 0.01);
    CHECK(g.dropout == 0.3);
    CHECK(g.batch_size == 50);
    CHECK(g.optimizer == OptimizerKind::adagrad);
}

TEST_CASE("teacher gradients match finite differences on a 5-item instance") {
    const std::vector<catalog::ItemIndex> hist = {kPadItem, 2, 5, 1, 3, 4, 4, 2};
    const std::vector<std::uint32_t> targets = {3, 1};
    for (Arch arch : {Arch::sasrec, Arch::gru4rec, Arch::caser}) {
        for (auto backend : {simd::Backend::scalar, simd::Backend::avx2}) {
            if (!simd::set_backend(backend)) continue;
            CAPTURE(arch_name(arch));
            CAPTURE(simd::backend_name(backend));
            TeacherModel m(tiny_config(arch), 5);
            // Random biases move ReLU and max units off their kinks at zero.
            Rng rng(5);
            for (std::size_t i = 0; i < m.params().size(); ++i) {
                if (m.params().tensors()[i].rows() != 1) continue;
                for (double& v : m.params().at(m.params().names()[i]).value()) v += 0.3 * rng.normal();
            }
            m.params().set_requires_grad(true);
            auto loss = [&] { return nn::cross_entropy(m.logits(hist, nullptr), targets, -1, true); };
            m.params().zero_grad();
            nn::backward(loss());
            // The PAD embedding row is frozen at zero, so it is not a free variable.
            const std::size_t d = m.config().embedding_dim;
            const auto r = testing::finite_difference_check(
                m.params().tensors(), [&] { return loss().item(); }, 1e-5, 1e-6, 1,
                [&](std::size_t t, std::size_t i) { return t == 0 && i < d; });
            CHECK(r.checked == m.params().scalar_count() - d);
            const auto& emb = m.params().at("item_emb");
            for (std::size_t j = 0; j < d; ++j) CHECK(emb.grad()[j] == 0.0);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
    simd::set_backend(simd::Backend::avx2) || simd::set_backend(simd::Backend::scalar);
}

TEST_CASE("sasrec hidden states are causal") {
    TeacherModel m(tiny_config(Arch::sasrec), 5);
    const std::vector<catalog::ItemIndex> base = {1, 2, 3, 4};
    const auto h0 = m.hidden_states(base);
    for (std::size_t j = 0; j < 4; ++j) {
        auto changed = base;
        changed[j] = changed[j] % 5 + 1;
        const auto h1 = m.hidden_states(changed);
        for (std::size_t i = 0; i < j; ++i) {
            for (std::size_t c = 0; c < h0.cols(); ++c) CHECK(h1.at(i, c) == h0.at(i, c));
        }
        double diff = 0.0;
        for (std::size_t c = 0; c < h0.cols(); ++c) diff += std::abs(h1.at(j, c) - h0.at(j, c));
        CHECK(diff > 0.0);
    }
}

TEST_CASE("scores: finite, PAD excluded, unknown items rejected") {
    for (Arch arch : {Arch::sasrec, Arch::gru4rec, Arch::caser}) {
        TeacherModel m(tiny_config(arch), 5);
        const auto s = m.score_next(std::vector<catalog::ItemIndex>{kPadItem, kPadItem, 1, 2});
        REQUIRE(s.size() == 6);
        CHECK(s[0] == kPadScore);
        for (std::size_t i = 1; i < 6; ++i) CHECK(std::isfinite(s[i]));
        const auto cold = m.score_next(std::vector<catalog::ItemIndex>(4, kPadItem));
        for (std::size_t i = 1; i < 6; ++i) CHECK(std::isfinite(cold[i]));
        CHECK_THROWS_AS(m.score_next(std::vector<catalog::ItemIndex>{1, 2, 3, 6}), Error);
        CHECK_THROWS_AS(m.score_next(std::vector<catalog::ItemIndex>{1, 2}), Error);
    }
    // A cold GRU state is h = 0, so the scores are the output bias.
    TeacherModel g(tiny_config(Arch::gru4rec), 5);
    auto& b = g.params().at("out_b");
    for (std::size_t i = 0; i < b.size(); ++i) b.value()[i] = 0.25 * static_cast<double>(i);
    const auto cold = g.score_next(std::vector<catalog::ItemIndex>(4, kPadItem));
    for (std::size_t i = 1; i < 6; ++i) CHECK(cold[i] == b.value()[i]);
}

TEST_CASE("top-h ordering and tie rule") {
    const std::vector<double> s = {kPadScore, 0.5, 2.0, 0.5, 2.0, -1.0};
    CHECK(top_h(s, 1) == std::vector<catalog::ItemIndex>{2});
    CHECK(top_h(s, 4) == std::vector<catalog::ItemIndex>{2, 4, 1, 3});
    CHECK_THROWS_AS(top_h(s, 6), Error);
    for (std::size_t a = 1; a <= 5; ++a) {
        const auto small = top_h(s, a);
        const auto big = top_h(s, 5);
        CHECK(std::equal(small.begin(), small.end(), big.begin()));
    }
}

TEST_CASE("epochs = 0 returns the initial model") {
    const auto& c = cyclic();
    auto cfg = cyclic_config(Arch::sasrec);
    cfg.epochs = 0;
    const TeacherModel fresh(cfg, 20);
    const TeacherModel trained = train_teacher(cfg, 20, c.train, c.valid);
    CHECK(fresh.params().sha256() == trained.params().sha256());
    CHECK_THROWS_AS(train_teacher(cfg, 20, {}, c.valid), Error);
}

TEST_CASE("teachers learn the cyclic pattern") {
    const auto& c = cyclic();
    for (Arch arch : {Arch::sasrec, Arch::gru4rec, Arch::caser}) {
        CAPTURE(arch_name(arch));
        TrainResult res;
        const TeacherModel m = train_teacher(cyclic_config(arch), 20, c.train, c.valid, &res);
        CHECK(res.best_epoch >= 1);
        std::size_t correct = 0;
        for (const auto& e : c.test) {
            const auto s = m.score_next(e.history);
            if (top_h(s, 1)[0] == e.target) ++correct;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(c.test.size());
        CHECK(acc >= 0.99);

        const auto s7 = m.score_next(history_ending(7, 10));
        CHECK(top_h(s7, 1)[0] == 8);

        catalog::SeqExample probe;
        probe.id = 0;
        probe.history = history_ending(7, 10);
        const auto exp5 = export_top_h(m, std::span(&probe, 1), 5);
        REQUIRE(exp5[0].items.size() == 5);
        CHECK(exp5[0].items[0] == 8);
        CHECK(exp5[0].arch == arch_name(arch));
        for (std::size_t k = 1; k < 5; ++k) CHECK(exp5[0].scores[k] <= exp5[0].scores[k - 1]);

        // PAD embedding stays exactly zero and all weights stay finite.
        const auto& emb = m.params().at("item_emb");
        for (std::size_t j = 0; j < emb.cols(); ++j) CHECK(emb.at(0, j) == 0.0);
        for (const auto& t : m.params().tensors()) {
            for (double v : t.value()) REQUIRE(std::isfinite(v));
        }
    }
}

TEST_CASE("export is deterministic, prefix-consistent and round-trips through files") {
    const auto& c = cyclic();
    auto cfg = cyclic_config(Arch::sasrec);
    cfg.epochs = 3;
    const TeacherModel a = train_teacher(cfg, 20, c.train, c.valid);
    const TeacherModel b = train_teacher(cfg, 20, c.train, c.valid);
    std::ostringstream sa, sb;
    write_top_h(sa, export_top_h(a, c.valid, 5), c.ds.catalog);
    write_top_h(sb, export_top_h(b, c.valid, 5), c.ds.catalog);
    CHECK(sa.str() == sb.str());

    const auto h2 = export_top_h(a, c.valid, 2);
    const auto h5 = export_top_h(a, c.valid, 5);
    for (std::size_t i = 0; i < h2.size(); ++i) {
        CHECK(h2[i].items[0] == h5[i].items[0]);
        CHECK(h2[i].items[1] == h5[i].items[1]);
    }
    CHECK_THROWS_AS(export_top_h(a, c.valid, 21), Error);
    CHECK_THROWS_AS(export_top_h(a, c.valid, 0), Error);

    std::istringstream in(sa.str());
    const auto back = read_top_h(in, c.ds.catalog);
    REQUIRE(back.size() == h5.size());
    CHECK(back[3].items == h5[3].items);
    CHECK(back[3].example_id == h5[3].example_id);
    CHECK(std::abs(back[3].scores[0] - h5[3].scores[0]) <= 5e-7);

    const std::string first_line = sa.str().substr(0, sa.str().find('\n'));
    CHECK(first_line.find("\tsasrec\t") != std::string::npos);
    const auto colon = first_line.find(':');
    CHECK(first_line.substr(colon + 1, first_line.find(',') - colon - 1).size() == 8);  // d.dddddd

    const auto path = std::filesystem::temp_directory_path() / "delrec_teacher_roundtrip.bin";
    a.save(path);
    const TeacherModel loaded = TeacherModel::load(path);
    std::filesystem::remove(path);
    CHECK(loaded.params().sha256() == a.params().sha256());
    CHECK(loaded.score_next(c.test[0].history) == a.score_next(c.test[0].history));
}
