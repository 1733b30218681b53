// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stage orchestration with content-addressed artifacts.
//
// Each stage writes into <root>/<stage>/<key>/, where the key hashes the
// config sections the stage reads plus the keys of its inputs, so variants
// that share a teacher or a bank share the directory. A stage is complete
// once its meta.json (stage, key, config hash, inputs) exists; that file is
// written last. A directory without it is a leftover and is cleared before
// the stage reruns. On error the stage leaves a FAILED file with the message.
//
//   data/       examples.tsv, stats.json
//   teacher/    teacher.bin, epochs.csv, eval.json
//   top_h/      top_h.tsv
//   base/       vocab.txt, base.lmc, pretrain.csv
//   bank/       model.lmc, bank.spb, curve.csv, fidelity.json
//   adapters/   model.lmc, adapters.adp, epochs.csv
//   reports/    report.json

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "delrec/expctl/config.hpp"
#include "delrec/rank/rank.hpp"

namespace delrec::expctl {

// Stage-1 runs the ablations draw their banks from.
enum class BankVariant { full, ta_only, rps_only, udpsm };
std::string_view variant_name(BankVariant v);
// nullopt for variants without a trained bank (wo_SP, w_MCP, w_USP).
std::optional<BankVariant> bank_variant_for(adapt::Ablation a);

struct PreparedData {
    catalog::Dataset dataset;
    catalog::DatasetStats raw_stats;  // before filtering
    catalog::DatasetStats stats;      // after filtering
    std::vector<catalog::SeqExample> all, train, valid, test;
    std::vector<catalog::ItemIndex> universe;
    std::string hash;
};

// Teacher quality under the candidate protocol, against a seeded random ranker.
struct TeacherEval {
    double hr1 = 0.0;
    double random_hr1 = 0.0;
    rank::TTest ttest;
    std::size_t n = 0;
};

struct Fidelity {
    double agreement = 0.0;  // held-out RPS top-1 agreement with the teacher
    std::size_t n = 0;
};

// Output root: explicit value, else $DELREC_OUT, else ./delrec-out.
std::filesystem::path resolve_root(const std::filesystem::path& explicit_root);
inline constexpr const char* kRootEnv = "DELREC_OUT";

class Pipeline {
public:
    Pipeline(ExperimentConfig config, std::filesystem::path root, bool force = false, std::ostream* log = nullptr);
    ~Pipeline();

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& root() const { return root_; }

    const PreparedData& data();
    const teachers::TeacherModel& teacher();
    TeacherEval teacher_eval();
    // Teacher lists for the train examples followed by the valid examples.
    const std::vector<teachers::TeacherTopH>& top_h();
    const tinylm::Vocab& vocab();
    tinylm::LMParams base_model();
    // Pretrained model with the variant's trained bank (and, for udpsm, its updated base).
    tinylm::LMParams stage1(BankVariant v);
    std::vector<distill::StepLog> stage1_curve(BankVariant v);
    Fidelity fidelity(BankVariant v);
    tinylm::LMParams stage2(adapt::Ablation a);
    rank::MetricsReport evaluate(adapt::Ablation a);
    // evaluate(config().ablation)
    rank::MetricsReport run();

    // Artifact directories (whether or not the stage has run).
    std::filesystem::path data_dir();
    std::filesystem::path teacher_dir();
    std::filesystem::path top_h_dir();
    std::filesystem::path base_dir();
    std::filesystem::path bank_dir(BankVariant v);
    std::filesystem::path adapters_dir(adapt::Ablation a);
    std::filesystem::path report_dir(adapt::Ablation a);
    std::filesystem::path report_path(adapt::Ablation a) { return report_dir(a) / "report.json"; }

    // Stages actually computed (not loaded) by this object, in order.
    const std::vector<std::string>& computed() const { return computed_; }

private:
    struct Keys;
    const Keys& keys();
    prompting::Renderer renderer(prompting::TemplateConfig::SoftMode mode);
    std::string config_hash_for(adapt::Ablation a) const;
    template <typename F>
    void stage(const std::string& name, const std::filesystem::path& dir, const std::string& inputs, F&& body);
    void say(const std::string& line) const;

    ExperimentConfig config_;
    std::filesystem::path root_;
    bool force_;
    std::ostream* log_;
    std::unique_ptr<Keys> keys_;
    std::set<std::string> done_;
    std::vector<std::string> computed_;

    std::optional<PreparedData> data_;
    std::optional<teachers::TeacherModel> teacher_;
    std::optional<std::vector<teachers::TeacherTopH>> top_h_;
    std::optional<tinylm::Vocab> vocab_;
};

// Writes via a temporary file in the same directory and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace delrec::expctl
