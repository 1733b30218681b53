// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/expctl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "delrec/util/error.hpp"

namespace delrec::expctl {

namespace {

struct Column {
    const char* name;
    double rank::MetricsReport::*field;
    std::size_t k;
    bool ndcg;
};

constexpr Column kColumns[] = {
    {"HR@1", &rank::MetricsReport::hr1, 1, false},     {"HR@5", &rank::MetricsReport::hr5, 5, false},
    {"NDCG@5", &rank::MetricsReport::ndcg5, 5, true},  {"HR@10", &rank::MetricsReport::hr10, 10, false},
    {"NDCG@10", &rank::MetricsReport::ndcg10, 10, true},
};

std::vector<double> per_example(const rank::MetricsReport& r, const Column& c) {
    if (!c.ndcg) return rank::hits(r.ranks, c.k);
    std::vector<double> out;
    out.reserve(r.ranks.size());
    for (std::size_t rk : r.ranks) out.push_back(rk <= c.k ? 1.0 / std::log2(static_cast<double>(rk) + 1.0) : 0.0);
    return out;
}

std::string cell(double v, const char* marker) {
    if (std::isnan(v)) return "\xe2\x80\x94";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f%s", v, marker);
    return buf;
}

// Display width, counting each UTF-8 sequence once.
std::size_t width(const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w > width(s) ? w - width(s) : 0, ' '); }

}  // namespace

std::string render_table(std::span<const rank::MetricsReport> reports, bool ttest) {
    if (reports.empty()) return {};
    for (const auto& r : reports) {
        if (r.dataset_hash != reports.front().dataset_hash) {
            throw Error("report: '" + r.label + "' and '" + reports.front().label + "' come from different datasets");
        }
    }
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"run"});
    for (const auto& c : kColumns) rows.back().push_back(c.name);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        rows.push_back({r.label.empty() ? "run" + std::to_string(i + 1) : r.label});
        for (const auto& c : kColumns) {
            const double v = r.*c.field;
            const char* marker = "";
            if (ttest && i > 0 && !std::isnan(v) && !std::isnan(reports.front().*c.field)) {
                if (r.example_ids != reports.front().example_ids) {
                    throw Error("report: '" + r.label + "' covers different examples; cannot pair for a t-test");
                }
                const double p = rank::paired_t_test(per_example(r, c), per_example(reports.front(), c)).p;
                marker = p <= 0.01 ? "*" : p <= 0.05 ? "**" : "";
            }
            rows.back().push_back(cell(v, marker));
        }
    }
    std::vector<std::size_t> w(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < row.size(); ++j) w[j] = std::max(w[j], width(row[j]));
    }
    std::string out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t j = 0; j < row.size(); ++j) line += pad(row[j], w[j] + 2);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    if (ttest && reports.size() > 1) {
        out += "* p <= 0.01, ** p <= 0.05 (paired t-test against " + rows[1][0] + ")\n";
    }
    return out;
}

std::vector<rank::MetricsReport> run_ablations(Pipeline& pipeline) {
    std::vector<rank::MetricsReport> out;
    for (adapt::Ablation a : adapt::all_ablations()) out.push_back(pipeline.evaluate(a));
    return out;
}

SweepParam parse_sweep_param(std::string_view name) {
    if (name == "k") return SweepParam::k;
    if (name == "h") return SweepParam::h;
    throw Error("sweep: unknown parameter '" + std::string(name) + "' (expected k or h)");
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, SweepParam param, std::span<const std::size_t> values,
                                  const std::filesystem::path& root, bool force, std::ostream* log) {
    if (values.empty()) throw Error("sweep: no values");
    std::vector<SweepPoint> out;
    for (std::size_t v : values) {
        SweepPoint pt;
        pt.value = v;
        try {
            ExperimentConfig c = config;
            (param == SweepParam::k ? c.tpl.k : c.tpl.h) = v;
            Pipeline p(c, root, force, log);
            pt.report = p.run();
        } catch (const std::exception& e) {
            pt.error = e.what();
            if (log) *log << "sweep value " << v << " failed: " << e.what() << std::endl;
        }
        out.push_back(std::move(pt));
    }
    return out;
}

std::string sweep_csv(SweepParam param, std::span<const SweepPoint> points) {
    std::ostringstream os;
    os.precision(6);
    os << (param == SweepParam::k ? "k" : "h") << ",hr@1\n";
    for (const auto& p : points) {
        os << p.value << ',';
        if (p.report) os << p.report->hr1;
        os << '\n';
    }
    return os.str();
}

std::string sweep_svg(SweepParam param, std::span<const SweepPoint> points) {
    constexpr double W = 480, H = 320, L = 60, R = 20, T = 20, B = 50;
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : points) {
        if (p.report && !std::isnan(p.report->hr1)) xy.emplace_back(static_cast<double>(p.value), p.report->hr1);
    }
    double x0 = 0, x1 = 1;
    if (!xy.empty()) {
        x0 = xy.front().first;
        x1 = xy.front().first;
        for (const auto& [x, y] : xy) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
        }
        if (x1 == x0) x1 = x0 + 1;
    }
    const auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    const auto sy = [&](double y) { return H - B - y * (H - T - B); };
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = i / 4.0;
        os << "<text x=\"" << L - 8 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
    }
    for (const auto& [x, y] : xy) {
        os << "<text x=\"" << sx(x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << x << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
       << (param == SweepParam::k ? "soft prompts k" : "teacher list h") << "</text>\n";
    os << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
       << ")\" text-anchor=\"middle\">HR@1</text>\n";
    if (!xy.empty()) {
        os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : xy) os << sx(x) << ',' << sy(y) << ' ';
        os << "\"/>\n";
        for (const auto& [x, y] : xy) {
            os << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"steelblue\"/>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace delrec::expctl
