// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "delrec/expctl/config.hpp"
#include "delrec/expctl/pipeline.hpp"
#include "delrec/expctl/report.hpp"
#include "delrec/util/error.hpp"
#include "doctest.h"

using namespace delrec;
using namespace delrec::expctl;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTiny = R"(
[run]
seed = 3
[dataset]
format = synthetic
synthetic_items = 16
synthetic_users = 24
synthetic_min_length = 12
synthetic_max_length = 14
history_length = 6
candidates = 5
[teacher]
arch = sasrec
epochs = 2
embedding_dim = 16
batch_size = 32
[lm]
d_model = 16
n_layers = 1
n_heads = 2
ffn_dim = 32
max_positions = 128
[pretrain]
steps = 12
batch_size = 4
warmup_steps = 2
recall_queries = 2
[template]
alpha = 2
k = 4
h = 3
[distill]
epochs = 1
batch_size = 32
[adapt]
epochs = 2
batch_size = 32
rank = 2
select_k = 1
)";

ExperimentConfig tiny() {
    std::istringstream is(kTiny);
    return parse_config(is);
}

struct TempRoot {
    fs::path path;
    explicit TempRoot(const std::string& name) : path(fs::temp_directory_path() / ("delrec_test_" + name)) {
        fs::remove_all(path);
    }
    ~TempRoot() { fs::remove_all(path); }
};

rank::MetricsReport fake(const std::string& label, std::vector<std::size_t> ranks) {
    rank::MetricsReport r;
    r.label = label;
    r.n = ranks.size();
    for (std::size_t i = 0; i < r.n; ++i) r.example_ids.push_back(i);
    r.ranks = std::move(ranks);
    r.hr1 = rank::hr_at_k(r.ranks, 1);
    r.hr5 = rank::hr_at_k(r.ranks, 5);
    r.hr10 = rank::hr_at_k(r.ranks, 10);
    r.ndcg5 = rank::ndcg_at_k(r.ranks, 5);
    r.ndcg10 = rank::ndcg_at_k(r.ranks, 10);
    r.dataset_hash = "d";
    return r;
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("config: defaults, round trip and hashing") {
    const ExperimentConfig d;
    CHECK(d.dataset.history_length == 10);
    CHECK(d.dataset.candidates == 15);
    CHECK(d.dataset.filter_threshold == 5);
    CHECK(d.tpl.alpha == 4);
    CHECK(d.tpl.k == 80);

    const ExperimentConfig c = tiny();
    CHECK(c.tpl.k == 4);
    CHECK(c.teacher.embedding_dim == 16);
    std::ostringstream os;
    write_config(os, c);
    std::istringstream is(os.str());
    const ExperimentConfig back = parse_config(is);
    CHECK(back.canonical() == c.canonical());
    CHECK(back.hash() == c.hash());

    ExperimentConfig o = c;
    o.out = "/elsewhere";
    CHECK(o.hash() == c.hash());
    o.adapt.rank = 3;
    CHECK(o.hash() != c.hash());
    CHECK(o.section_text("dataset") == c.section_text("dataset"));
    CHECK(o.section_text("adapt") != c.section_text("adapt"));

    std::set<std::uint64_t> seeds;
    for (const char* s : {"teacher", "lm", "pretrain", "candidates", "distill", "adapt", "bank"}) {
        seeds.insert(c.derived_seed(s));
    }
    CHECK(seeds.size() == 7);
    CHECK(c.teacher_config().seed == c.derived_seed("teacher"));
    CHECK(c.template_config(prompting::TemplateConfig::SoftMode::none).m == 5);
}

TEST_CASE("config: the teacher architecture applies before its overrides") {
    std::istringstream is("[teacher]\nembedding_dim = 24\narch = gru4rec\n");
    const auto c = parse_config(is);
    CHECK(c.teacher.arch == teachers::Arch::gru4rec);
    CHECK(c.teacher.embedding_dim == 24);
}

TEST_CASE("config: unknown keys and bad values fail fast") {
    const auto fails = [](const std::string& text, const std::string& needle) {
        std::istringstream is(text);
        CHECK_THROWS_WITH_AS(parse_config(is), doctest::Contains(needle.c_str()), Error);
    };
    fails("[adapt]\nrnak = 2\n", "unknown key 'rnak'");
    fails("[adaptt]\nrank = 2\n", "unknown key 'rank' in section [adaptt]");
    fails("[adapt]\nrank = two\n", "bad value 'two'");
    fails("[adapt]\nrank = 0\n", "rank must be positive");
    fails("[run]\nablation = wo_TA\n", "unknown ablation");
    fails("[template]\nalpha = 9\n", "alpha");
    fails("[dataset]\nsplit_train = 0.5\n", "split ratios");
    fails("[dataset]\nformat = parquet\n", "parquet");
    fails("[dataset]\nformat = tsv\n", "dataset.path is required");
    CHECK_THROWS_AS(load_config("/nonexistent/delrec.ini"), Error);
}

TEST_CASE("output root precedence") {
    ::unsetenv(kRootEnv);
    CHECK(resolve_root("") == fs::path("delrec-out"));
    ::setenv(kRootEnv, "/tmp/from-env", 1);
    CHECK(resolve_root("") == fs::path("/tmp/from-env"));
    CHECK(resolve_root("/tmp/explicit") == fs::path("/tmp/explicit"));
    ::unsetenv(kRootEnv);
}

TEST_CASE("report table: rows, missing values and significance markers") {
    const auto one = fake("none", {1, 2, 3, 11});
    const auto table = render_table(std::span(&one, 1));
    const auto ls = lines(table);
    REQUIRE(ls.size() == 2);
    CHECK(ls[0].find("HR@1") != std::string::npos);
    CHECK(ls[0].find("NDCG@10") != std::string::npos);
    CHECK(ls[0].find("HR@5") < ls[0].find("NDCG@5"));
    CHECK(ls[0].find("NDCG@5") < ls[0].find("HR@10"));
    CHECK(ls[1].find("0.2500") != std::string::npos);

    auto missing = one;
    missing.ndcg5 = std::numeric_limits<double>::quiet_NaN();
    CHECK(render_table(std::span(&missing, 1)).find("\xe2\x80\x94") != std::string::npos);
    std::stringstream js;
    rank::write_report(js, missing);
    CHECK(js.str().find("\"ndcg@5\": null") != std::string::npos);
    CHECK(std::isnan(rank::read_report(js).ndcg5));

    // Baseline misses everywhere; the second run hits 4 of 20: paired t = 2.179
    // with 19 df, which lies between the 0.05 (2.093) and 0.02 (2.539) two-sided
    // table points.
    std::vector<std::size_t> base(20, 12), some(20, 12), all(20, 1);
    for (std::size_t i = 0; i < 4; ++i) some[i] = 1;
    const std::vector<rank::MetricsReport> rs = {fake("base", base), fake("some", some), fake("all", all)};
    const auto marked = lines(render_table(rs, true));
    REQUIRE(marked.size() == 5);
    CHECK(marked[2].find("0.2000**") != std::string::npos);
    CHECK(marked[3].find("1.0000*") != std::string::npos);
    CHECK(marked[3].find("1.0000**") == std::string::npos);
    CHECK(marked[1].find('*') == std::string::npos);
    CHECK(marked[4].find("p <= 0.01") != std::string::npos);
    CHECK(lines(render_table(rs, false)).size() == 4);

    auto other = fake("other", some);
    other.dataset_hash = "e";
    const std::vector<rank::MetricsReport> mixed = {rs[0], other};
    CHECK_THROWS_WITH_AS(render_table(mixed), doctest::Contains("different datasets"), Error);
    auto shifted = fake("shifted", some);
    shifted.example_ids[0] = 99;
    const std::vector<rank::MetricsReport> unpaired = {rs[0], shifted};
    CHECK_NOTHROW(render_table(unpaired, false));
    CHECK_THROWS_AS(render_table(unpaired, true), Error);
}

TEST_CASE("sweep outputs") {
    std::vector<SweepPoint> pts(3);
    pts[0].value = 8;
    pts[0].report = fake("a", {1, 2});
    pts[1].value = 16;
    pts[1].error = "boom";
    pts[2].value = 32;
    pts[2].report = fake("c", {1, 1});
    CHECK(sweep_csv(SweepParam::k, pts) == "k,hr@1\n8,0.5\n16,\n32,1\n");
    const std::string svg = sweep_svg(SweepParam::k, pts);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(parse_sweep_param("h") == SweepParam::h);
    CHECK_THROWS_AS(parse_sweep_param("alpha"), Error);
    CHECK_THROWS_AS(run_sweep(tiny(), SweepParam::k, {}, "/tmp", false), Error);
}

TEST_CASE("pipeline: artifacts, caching and determinism") {
    TempRoot a("pipe_a"), b("pipe_b");
    const ExperimentConfig c = tiny();
    std::string first;
    {
        Pipeline p(c, a.path);
        const auto r = p.run();
        CHECK(r.n == p.data().test.size());
        CHECK(r.label == "none");
        CHECK(r.config_hash == c.hash());
        CHECK(r.dataset_hash == p.data().hash);
        CHECK(fs::exists(p.teacher_dir() / "teacher.bin"));
        CHECK(fs::exists(p.top_h_dir() / "top_h.tsv"));
        CHECK(fs::exists(p.bank_dir(BankVariant::full) / "bank.spb"));
        CHECK(fs::exists(p.adapters_dir(adapt::Ablation::none) / "adapters.adp"));
        CHECK(fs::exists(p.report_path(adapt::Ablation::none)));
        for (const auto& dir : {p.data_dir(), p.teacher_dir(), p.top_h_dir(), p.base_dir(),
                                p.bank_dir(BankVariant::full), p.adapters_dir(adapt::Ablation::none),
                                p.report_dir(adapt::Ablation::none)}) {
            std::ifstream meta(dir / "meta.json");
            std::stringstream ss;
            ss << meta.rdbuf();
            CHECK(ss.str().find(c.hash()) != std::string::npos);
        }
        CHECK(p.computed().size() == 7);
        first = read_file(p.report_path(adapt::Ablation::none));
        const auto f = p.fidelity(BankVariant::full);
        CHECK(f.n == p.data().test.size());
        CHECK(f.agreement >= 0.0);
        CHECK(f.agreement <= 1.0);
    }
    {
        Pipeline again(c, a.path);
        again.run();
        CHECK(again.computed().empty());
        CHECK(read_file(again.report_path(adapt::Ablation::none)) == first);
    }
    {
        Pipeline forced(c, a.path, true);
        forced.run();
        CHECK(forced.computed().size() == 7);
        CHECK(read_file(forced.report_path(adapt::Ablation::none)) == first);
    }
    {
        Pipeline fresh(c, b.path);
        fresh.run();
        CHECK(read_file(fresh.report_path(adapt::Ablation::none)) == first);
    }
    {
        // A stage directory without meta.json is a leftover and is rebuilt.
        Pipeline p(c, a.path);
        fs::remove(p.adapters_dir(adapt::Ablation::none) / "meta.json");
        p.stage2(adapt::Ablation::none);
        CHECK(p.computed() == std::vector<std::string>{"adapters"});
    }
    {
        // A different seed shares nothing past the data stage.
        ExperimentConfig s = c;
        s.seed = 4;
        Pipeline p(s, a.path);
        Pipeline q(c, a.path);
        CHECK(p.data_dir() == q.data_dir());
        CHECK(p.teacher_dir() != q.teacher_dir());
    }
}

TEST_CASE("pipeline: the ablation matrix and the top-h prefix property") {
    TempRoot root("pipe_ablate");
    Pipeline p(tiny(), root.path);
    const auto reports = run_ablations(p);
    REQUIRE(reports.size() == 8);
    std::set<std::string> dirs, labels;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto a = adapt::all_ablations()[i];
        CHECK(reports[i].label == adapt::ablation_name(a));
        CHECK(reports[i].dataset_hash == reports[0].dataset_hash);
        CHECK(reports[i].example_ids == reports[0].example_ids);
        dirs.insert(p.report_dir(a).string());
        labels.insert(reports[i].label);
    }
    CHECK(dirs.size() == 8);
    CHECK(labels.size() == 8);
    CHECK(reports[1].bank_hash.empty());  // wo_SP
    CHECK(reports[2].bank_hash.empty());  // w_MCP
    CHECK(reports[3].bank_hash != reports[0].bank_hash);
    CHECK(reports[2].template_hash != reports[0].template_hash);
    // One teacher, one base model and four stage-1 banks serve all eight variants.
    const auto count = [&](const char* stage) {
        const auto& c = p.computed();
        return std::count(c.begin(), c.end(), std::string(stage));
    };
    CHECK(count("teacher") == 1);
    CHECK(count("base") == 1);
    CHECK(count("bank") == 4);
    CHECK(count("adapters") == 8);
    CHECK_NOTHROW(render_table(reports, true));

    ExperimentConfig h1 = tiny();
    h1.tpl.h = 1;
    Pipeline q(h1, root.path);
    const auto& short_lists = q.top_h();
    const auto& long_lists = p.top_h();
    REQUIRE(short_lists.size() == long_lists.size());
    for (std::size_t i = 0; i < short_lists.size(); ++i) {
        REQUIRE(short_lists[i].items.size() == 1);
        CHECK(short_lists[i].items[0] == long_lists[i].items[0]);
    }
    CHECK(q.teacher_dir() == p.teacher_dir());
    CHECK(q.computed() == std::vector<std::string>{"top_h"});
}

TEST_CASE("pipeline: a failing stage names itself and leaves a marker") {
    TempRoot root("pipe_fail");
    ExperimentConfig c = tiny();
    c.dataset.format = "tsv";
    c.dataset.path = root.path / "missing.tsv";
    Pipeline p(c, root.path);
    CHECK_THROWS_WITH_AS(p.run(), doctest::Contains("stage data failed"), Error);
    CHECK(fs::exists(p.data_dir() / "FAILED"));

    ExperimentConfig small = tiny();
    small.lm.max_positions = 16;
    Pipeline q(small, root.path);
    CHECK_THROWS_WITH_AS(q.stage1(BankVariant::full), doctest::Contains("stage base failed"), Error);
    CHECK(fs::exists(q.base_dir() / "FAILED"));
    CHECK_FALSE(fs::exists(q.base_dir() / "meta.json"));
}
