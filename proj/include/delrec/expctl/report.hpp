// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-run drivers (ablation matrix, parameter sweeps) and their rendering.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "delrec/expctl/pipeline.hpp"

namespace delrec::expctl {

// Aligned table with columns HR@1, HR@5, NDCG@5, HR@10, NDCG@10, one row per
// report, missing (NaN) values shown as "—". With `ttest`, every row after
// the first is compared with the first by a paired t-test per column and
// marked "*" at p <= 0.01 and "**" at p <= 0.05. Throws when the reports
// come from different datasets, or when t-tests are asked for reports over
// different examples.
std::string render_table(std::span<const rank::MetricsReport> reports, bool ttest = false);

// One report per ablation variant, in all_ablations() order, sharing upstream artifacts.
std::vector<rank::MetricsReport> run_ablations(Pipeline& pipeline);

enum class SweepParam { k, h };
SweepParam parse_sweep_param(std::string_view name);

struct SweepPoint {
    std::size_t value = 0;
    std::optional<rank::MetricsReport> report;
    std::string error;  // set when the run failed
};

// One full run per value with every other setting unchanged. A failed run is
// recorded and the others continue.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, SweepParam param, std::span<const std::size_t> values,
                                  const std::filesystem::path& root, bool force, std::ostream* log = nullptr);

// `<param>,hr@1` rows; failed runs leave hr@1 empty.
std::string sweep_csv(SweepParam param, std::span<const SweepPoint> points);
// Line plot of HR@1 against the parameter.
std::string sweep_svg(SweepParam param, std::span<const SweepPoint> points);

}  // namespace delrec::expctl
