// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: an INI file with one section per module. Every
// key has a default; unknown sections or keys are errors. The canonical text
// (all keys, defaults filled in, fixed order) hashes to the config id.
//
//   [run]       seed, ablation, out
//   [dataset]   format, path, titles, synthetic_*, history_length,
//               candidates, filter_threshold, split_*
//   [teacher]   arch and TeacherConfig hyperparameters
//   [lm]        LMConfig fields and vocab_max
//   [pretrain]  base-model pretraining
//   [template]  alpha, k, h, max_title_tokens
//   [distill]   stage 1
//   [adapt]     stage 2
//
// Module seeds are not configurable: each is drawn from [run] seed through a
// named substream.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "delrec/adapt/adapt.hpp"
#include "delrec/catalog/catalog.hpp"
#include "delrec/catalog/synthetic.hpp"
#include "delrec/distill/distill.hpp"
#include "delrec/prompting/prompt.hpp"
#include "delrec/teachers/teacher.hpp"
#include "delrec/tinylm/model.hpp"

namespace delrec::expctl {

struct DatasetSpec {
    std::string format = "synthetic";  // synthetic, movielens100k, tsv, csv
    std::filesystem::path path;
    std::filesystem::path titles;  // tsv/csv only; empty means "<path>.titles"
    catalog::SyntheticOptions synthetic;
    std::size_t history_length = 10;
    std::size_t candidates = 15;  // m
    int filter_threshold = 5;
    catalog::SplitRatios split;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    adapt::Ablation ablation = adapt::Ablation::none;
    std::filesystem::path out;  // not part of the hash

    DatasetSpec dataset;
    teachers::TeacherConfig teacher = teachers::TeacherConfig::defaults(teachers::Arch::sasrec);
    tinylm::LMConfig lm;
    std::size_t vocab_max = 8192;
    distill::PretrainConfig pretrain;
    prompting::TemplateConfig tpl;
    distill::DistillConfig distill;
    adapt::AdaptConfig adapt;

    // Cross-field checks (alpha < history_length - 1, h >= 1, k >= 1, m >= 2, ...).
    void validate() const;

    // Canonical "section.key=value" lines; `section` restricts to one section.
    std::string canonical() const;
    std::string section_text(std::string_view section) const;
    std::string hash() const;

    // Copies of the module configs with the shared fields and derived seeds filled in.
    teachers::TeacherConfig teacher_config() const;
    tinylm::LMConfig lm_config(std::size_t vocab_size) const;
    distill::PretrainConfig pretrain_config() const;
    prompting::TemplateConfig template_config(prompting::TemplateConfig::SoftMode mode) const;
    distill::DistillConfig distill_config() const;
    adapt::AdaptConfig adapt_config(adapt::Ablation a) const;
    std::uint64_t derived_seed(std::string_view stream) const;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets one key, as if it appeared in the file. Throws on unknown keys or bad values.
void set_value(ExperimentConfig& config, std::string_view section, std::string_view key, std::string_view value);

// Writes the canonical form as an INI file that parse_config reads back.
void write_config(std::ostream& os, const ExperimentConfig& config);

}  // namespace delrec::expctl
