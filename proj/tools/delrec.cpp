// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "delrec/expctl/pipeline.hpp"
#include "delrec/expctl/report.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"

namespace fs = std::filesystem;
using namespace delrec;
using namespace delrec::expctl;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::string out;
};

ExperimentConfig load(const Globals& g) {
    ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    c.validate();
    return c;
}

fs::path root_for(const Globals& g, const ExperimentConfig& c) { return resolve_root(g.out.empty() ? c.out : fs::path(g.out)); }

void print_stats(const char* what, const catalog::DatasetStats& s) {
    std::printf("%-9s users %zu  items %zu  interactions %zu  sparsity %.4f%%\n", what, s.users, s.items,
                s.interactions, 100.0 * s.sparsity);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distills sequential recommenders into a small language model and evaluates it."};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config (INI)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Override [run] seed");
    app.add_flag("--force", g.force, "Recompute stages even when artifacts exist");
    app.add_option("--out", g.out, std::string("Output root (default: [run] out, then $") + kRootEnv + ", then ./delrec-out)");

    std::string variant_arg = "full";
    std::string ablation_arg;
    std::string sweep_param = "k";
    std::vector<std::size_t> sweep_values;
    std::vector<std::string> report_files;
    bool ttest = false;
    std::string table_out;

    auto* ingest = app.add_subcommand("ingest", "Load, filter and split the dataset");
    auto* train_teacher = app.add_subcommand("train-teacher", "Train the sequential recommender teacher");
    auto* export_top_h = app.add_subcommand("export-top-h", "Export the teacher's top-h lists");
    auto* distill = app.add_subcommand("distill", "Stage 1: train the soft-prompt bank");
    distill->add_option("--variant", variant_arg, "full, ta_only, rps_only or udpsm")
        ->check(CLI::IsMember({"full", "ta_only", "rps_only", "udpsm"}));
    auto* finetune = app.add_subcommand("finetune", "Stage 2: train the low-rank adapters");
    finetune->add_option("--ablation", ablation_arg, "Variant (default: [run] ablation)");
    auto* evaluate = app.add_subcommand("evaluate", "Run every stage and evaluate on the test split");
    evaluate->add_option("--ablation", ablation_arg, "Variant (default: [run] ablation)");
    auto* ablate = app.add_subcommand("ablate", "Evaluate all eight variants");
    auto* sweep = app.add_subcommand("sweep", "One run per value of k or h");
    sweep->add_option("--param", sweep_param, "k or h")->check(CLI::IsMember({"k", "h"}));
    sweep->add_option("--values", sweep_values, "Comma-separated values")->delimiter(',')->required();
    auto* report = app.add_subcommand("report", "Render report files as a table");
    report->add_option("files", report_files, "report.json files")->required()->check(CLI::ExistingFile);
    report->add_flag("--ttest", ttest, "Mark rows that differ from the first at p <= 0.01 (*) / 0.05 (**)");
    report->add_option("--table", table_out, "Also write the table to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            std::vector<rank::MetricsReport> reports;
            for (const auto& f : report_files) {
                std::ifstream is(f);
                reports.push_back(rank::read_report(is));
            }
            const std::string table = render_table(reports, ttest);
            std::cout << table;
            if (!table_out.empty()) write_file_atomic(table_out, table);
            return 0;
        }

        const ExperimentConfig config = load(g);
        const fs::path root = root_for(g, config);
        if (sweep->parsed()) {
            const SweepParam param = parse_sweep_param(sweep_param);
            const auto points = run_sweep(config, param, sweep_values, root, g.force, &std::cerr);
            const fs::path dir = root / "sweep" / sha256_hex(config.hash() + sweep_param).substr(0, 16);
            fs::create_directories(dir);
            const std::string csv = sweep_csv(param, points);
            write_file_atomic(dir / ("sweep_" + sweep_param + ".csv"), csv);
            write_file_atomic(dir / ("sweep_" + sweep_param + ".svg"), sweep_svg(param, points));
            std::cout << csv << "written to " << dir.string() << '\n';
            for (const auto& p : points) {
                if (!p.error.empty()) return 1;
            }
            return 0;
        }

        Pipeline pipeline(config, root, g.force, &std::cerr);
        const adapt::Ablation ablation = ablation_arg.empty() ? config.ablation : adapt::parse_ablation(ablation_arg);
        if (ingest->parsed()) {
            const auto& d = pipeline.data();
            print_stats("raw", d.raw_stats);
            print_stats("filtered", d.stats);
            std::printf("examples  train %zu  valid %zu  test %zu\ndataset   %s\n%s\n", d.train.size(), d.valid.size(),
                        d.test.size(), d.hash.c_str(), pipeline.data_dir().c_str());
        } else if (train_teacher->parsed()) {
            const auto e = pipeline.teacher_eval();
            std::printf("test HR@1 %.4f (random %.4f) over %zu examples; paired t %.3f, p %.3g\n%s\n", e.hr1,
                        e.random_hr1, e.n, e.ttest.t, e.ttest.p, pipeline.teacher_dir().c_str());
        } else if (export_top_h->parsed()) {
            const auto& rows = pipeline.top_h();
            std::printf("%zu lists of length %zu\n%s\n", rows.size(), config.tpl.h,
                        (pipeline.top_h_dir() / "top_h.tsv").c_str());
        } else if (distill->parsed()) {
            BankVariant v = BankVariant::full;
            for (BankVariant c : {BankVariant::full, BankVariant::ta_only, BankVariant::rps_only, BankVariant::udpsm}) {
                if (variant_name(c) == variant_arg) v = c;
            }
            const auto f = pipeline.fidelity(v);
            std::printf("held-out RPS agreement %.4f over %zu examples\n%s\n", f.agreement, f.n,
                        pipeline.bank_dir(v).c_str());
        } else if (finetune->parsed()) {
            pipeline.stage2(ablation);
            std::printf("%s\n", pipeline.adapters_dir(ablation).c_str());
        } else if (evaluate->parsed()) {
            const auto r = pipeline.evaluate(ablation);
            std::cout << render_table(std::span(&r, 1)) << pipeline.report_path(ablation).string() << '\n';
        } else if (ablate->parsed()) {
            const auto reports = run_ablations(pipeline);
            const std::string table = render_table(reports, true);
            const fs::path dir = root / "ablate" / config.hash().substr(0, 16);
            fs::create_directories(dir);
            write_file_atomic(dir / "table.txt", table);
            std::string index;
            for (adapt::Ablation a : adapt::all_ablations()) {
                index += std::string(adapt::ablation_name(a)) + "\t" + pipeline.report_path(a).string() + "\n";
            }
            write_file_atomic(dir / "reports.tsv", index);
            std::cout << table << (dir / "table.txt").string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
