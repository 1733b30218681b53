// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/catalog/catalog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "delrec/util/error.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::catalog {
namespace {

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numeric ids order numerically and before non-numeric ones.
bool natural_less(const std::string& a, const std::string& b) {
    const bool na = all_digits(a);
    const bool nb = all_digits(b);
    if (na != nb) return na;
    if (na) {
        auto strip = [](std::string_view s) {
            const auto p = s.find_first_not_of('0');
            return p == std::string_view::npos ? std::string_view("0") : s.substr(p);
        };
        const auto sa = strip(a);
        const auto sb = strip(b);
        if (sa.size() != sb.size()) return sa.size() < sb.size();
        if (sa != sb) return sa < sb;
    }
    return a < b;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string normalize_title(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            space = !out.empty();
        } else {
            if (space) out.push_back(' ');
            space = false;
            out.push_back(c);
        }
    }
    return out;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto p = line.find(sep, start);
        if (p == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    const std::string t = trim(s);
    std::int64_t v = 0;
    const auto* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        // Accept integral-valued floats such as "978300760.0".
        double d = 0;
        auto [p2, e2] = std::from_chars(t.data(), end, d);
        if (e2 != std::errc() || p2 != end || !std::isfinite(d) || d != std::floor(d)) return std::nullopt;
        v = static_cast<std::int64_t>(d);
    }
    return v;
}

std::optional<double> parse_double(std::string_view s) {
    const std::string t = trim(s);
    double d = 0;
    const auto* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, d);
    if (ec != std::errc() || ptr != end || !std::isfinite(d)) return std::nullopt;
    return d;
}

struct RawRow {
    std::string user;
    std::string item;
    std::int64_t timestamp;
    std::optional<double> rating;
};

std::ifstream open_or_throw(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    return in;
}

std::vector<RawRow> read_rows(const std::filesystem::path& path, char sep) {
    auto in = open_or_throw(path);
    std::vector<RawRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto f = split(line, sep);
        const auto fail = [&] {
            throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": unparseable row");
        };
        if (f.size() < 3 || f.size() > 4) {
            fail();
        }
        const auto ts = parse_int(f[2]);
        if (!ts) {
            if (lineno == 1 && rows.empty()) continue;  // header
            fail();
        }
        if (*ts < 0) fail();
        RawRow r{trim(f[0]), trim(f[1]), *ts, std::nullopt};
        if (r.user.empty() || r.item.empty()) fail();
        if (f.size() == 4 && !trim(f[3]).empty()) {
            r.rating = parse_double(f[3]);
            if (!r.rating) fail();
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

Dataset build(std::vector<RawRow> rows, const std::map<std::string, std::string>& titles) {
    if (rows.empty()) throw Error("no interactions");

    std::vector<std::string> users;
    std::vector<std::string> items;
    for (const auto& r : rows) {
        users.push_back(r.user);
        items.push_back(r.item);
    }
    auto uniq = [](std::vector<std::string>& v) {
        std::sort(v.begin(), v.end(), natural_less);
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(users);
    uniq(items);

    Dataset ds;
    ds.log.user_ids = users;
    std::unordered_map<std::string, std::uint32_t> user_index;
    for (std::uint32_t i = 0; i < users.size(); ++i) user_index.emplace(users[i], i);
    std::unordered_map<std::string, ItemIndex> item_index;
    for (const auto& raw : items) {
        const auto it = titles.find(raw);
        if (it == titles.end()) throw Error("missing title for item " + raw);
        std::string t = normalize_title(it->second);
        if (t.empty()) throw Error("empty title for item " + raw);
        item_index.emplace(raw, static_cast<ItemIndex>(ds.catalog.raw_ids.size()));
        ds.catalog.raw_ids.push_back(raw);
        ds.catalog.titles.push_back(std::move(t));
    }

    std::vector<Interaction> ev;
    ev.reserve(rows.size());
    for (auto& r : rows) {
        ev.push_back({user_index.at(r.user), item_index.at(r.item), r.timestamp, r.rating});
    }
    std::stable_sort(ev.begin(), ev.end(), [](const Interaction& a, const Interaction& b) {
        return std::tie(a.user, a.timestamp) < std::tie(b.user, b.timestamp);
    });
    std::set<std::tuple<std::uint32_t, ItemIndex, std::int64_t>> seen;
    for (auto& e : ev) {
        if (seen.emplace(e.user, e.item, e.timestamp).second) ds.log.events.push_back(e);
    }
    return ds;
}

std::map<std::string, std::string> read_sidecar_titles(const std::filesystem::path& p) {
    auto in = open_or_throw(p);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(p.string() + ": expected item<TAB>title");
        out[trim(std::string_view(line).substr(0, tab))] = line.substr(tab + 1);
    }
    return out;
}

Dataset load_movielens(const std::filesystem::path& dir) {
    const auto data = dir / "u.data";
    std::vector<RawRow> rows;
    {
        auto in = open_or_throw(data);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            const auto f = split(line, '\t');
            const auto ts = f.size() == 4 ? parse_int(f[3]) : std::nullopt;
            const auto rating = f.size() == 4 ? parse_double(f[2]) : std::nullopt;
            if (!ts || !rating || *ts < 0) {
                throw Error("u.data:" + std::to_string(lineno) + ": unparseable row");
            }
            rows.push_back({trim(f[0]), trim(f[1]), *ts, rating});
        }
    }
    std::map<std::string, std::string> titles;
    {
        auto in = open_or_throw(dir / "u.item");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (trim(line).empty()) continue;
            const auto f = split(line, '|');
            if (f.size() < 2) throw Error("u.item: malformed line");
            titles[trim(f[0])] = std::string(f[1]);
        }
    }
    return build(std::move(rows), titles);
}

}  // namespace

std::optional<ItemIndex> ItemCatalog::find(std::string_view raw) const {
    for (std::size_t i = 1; i < raw_ids.size(); ++i) {
        if (raw_ids[i] == raw) return static_cast<ItemIndex>(i);
    }
    return std::nullopt;
}

Format parse_format(std::string_view name) {
    if (name == "tsv") return Format::tsv;
    if (name == "csv") return Format::csv;
    if (name == "movielens-100k" || name == "movielens100k" || name == "ml-100k") return Format::movielens100k;
    throw Error("unknown dataset format: " + std::string(name));
}

Dataset load_interactions(const std::filesystem::path& path, Format format,
                          const std::optional<std::filesystem::path>& titles_path) {
    if (format == Format::movielens100k) return load_movielens(path);
    auto rows = read_rows(path, format == Format::tsv ? '\t' : ',');
    if (rows.empty()) throw Error("no interactions");
    const auto sidecar = titles_path.value_or(std::filesystem::path(path.string() + ".titles"));
    return build(std::move(rows), read_sidecar_titles(sidecar));
}

InteractionLog filter_min_interactions(const InteractionLog& log, int threshold) {
    if (threshold < 1) throw Error("filter_min_interactions: threshold must be >= 1");
    std::vector<Interaction> cur = log.events;
    while (true) {
        std::unordered_map<std::uint32_t, int> uc;
        std::unordered_map<ItemIndex, int> ic;
        for (const auto& e : cur) {
            ++uc[e.user];
            ++ic[e.item];
        }
        std::vector<Interaction> next;
        next.reserve(cur.size());
        for (const auto& e : cur) {
            if (uc[e.user] >= threshold && ic[e.item] >= threshold) next.push_back(e);
        }
        if (next.size() == cur.size()) break;
        cur = std::move(next);
    }
    if (cur.empty()) throw Error("dataset exhausted by filtering");
    return {log.user_ids, std::move(cur)};
}

Dataset compact(const InteractionLog& log, const ItemCatalog& catalog) {
    Dataset out;
    const auto universe = item_universe(log);
    std::vector<ItemIndex> remap(catalog.raw_ids.size(), kPadItem);
    for (ItemIndex old : universe) {
        remap.at(old) = static_cast<ItemIndex>(out.catalog.raw_ids.size());
        out.catalog.raw_ids.push_back(catalog.raw_ids.at(old));
        out.catalog.titles.push_back(catalog.titles.at(old));
    }
    std::vector<std::uint32_t> user_remap(log.user_ids.size(), 0);
    std::vector<bool> used(log.user_ids.size(), false);
    for (const auto& e : log.events) used.at(e.user) = true;
    for (std::size_t u = 0; u < used.size(); ++u) {
        if (!used[u]) continue;
        user_remap[u] = static_cast<std::uint32_t>(out.log.user_ids.size());
        out.log.user_ids.push_back(log.user_ids[u]);
    }
    out.log.events.reserve(log.events.size());
    for (auto e : log.events) {
        e.item = remap[e.item];
        e.user = user_remap[e.user];
        out.log.events.push_back(e);
    }
    return out;
}

DatasetStats stats(const InteractionLog& log) {
    DatasetStats s;
    std::set<std::uint32_t> users;
    std::set<ItemIndex> items;
    for (const auto& e : log.events) {
        users.insert(e.user);
        items.insert(e.item);
    }
    s.users = users.size();
    s.items = items.size();
    s.interactions = log.events.size();
    if (s.users > 0 && s.items > 0) {
        s.sparsity = 1.0 - static_cast<double>(s.interactions) /
                               (static_cast<double>(s.users) * static_cast<double>(s.items));
    }
    return s;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

TaggedLog chronological_split(const InteractionLog& log, SplitRatios ratios) {
    if (ratios.train <= 0 || ratios.valid <= 0 || ratios.test <= 0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
        throw Error("chronological_split: ratios must be positive and sum to 1");
    }
    TaggedLog out;
    out.log.user_ids = log.user_ids;
    out.log.events = log.events;
    std::stable_sort(out.log.events.begin(), out.log.events.end(),
                     [](const Interaction& a, const Interaction& b) {
                         return std::tie(a.user, a.timestamp) < std::tie(b.user, b.timestamp);
                     });
    out.tags.resize(out.log.events.size());
    // The small epsilon keeps exact products such as 0.9 * 10 from flooring to 8.
    constexpr double kEps = 1e-9;
    std::size_t i = 0;
    while (i < out.log.events.size()) {
        std::size_t j = i;
        while (j < out.log.events.size() && out.log.events[j].user == out.log.events[i].user) ++j;
        const std::size_t n = j - i;
        const auto b1 = static_cast<std::size_t>(std::floor(ratios.train * n + kEps));
        const auto b2 = static_cast<std::size_t>(std::floor((ratios.train + ratios.valid) * n + kEps));
        if (b1 == 0) {
            throw Error("chronological_split: user " + log.user_ids.at(out.log.events[i].user) +
                        " has an empty train segment");
        }
        for (std::size_t k = 0; k < n; ++k) {
            out.tags[i + k] = k < b1 ? Split::train : (k < b2 ? Split::valid : Split::test);
        }
        i = j;
    }
    return out;
}

std::vector<ItemIndex> SeqExample::real_history() const {
    std::vector<ItemIndex> out;
    for (ItemIndex h : history) {
        if (h != kPadItem) out.push_back(h);
    }
    return out;
}

std::vector<SeqExample> window_examples(const TaggedLog& tagged, std::size_t history_length) {
    if (history_length == 0) throw Error("window_examples: history length must be positive");
    const auto& ev = tagged.log.events;
    std::vector<SeqExample> out;
    std::uint64_t next_id = 0;
    std::size_t i = 0;
    while (i < ev.size()) {
        std::size_t j = i;
        while (j < ev.size() && ev[j].user == ev[i].user) ++j;
        for (std::size_t t = i + 1; t < j; ++t) {
            SeqExample ex;
            ex.id = next_id++;
            ex.user = ev[t].user;
            ex.target = ev[t].item;
            ex.split = tagged.tags[t];
            ex.history.assign(history_length, kPadItem);
            const std::size_t avail = std::min(history_length, t - i);
            for (std::size_t k = 0; k < avail; ++k) {
                ex.history[history_length - avail + k] = ev[t - avail + k].item;
            }
            out.push_back(std::move(ex));
        }
        i = j;
    }
    return out;
}

std::vector<SeqExample> select_split(std::span<const SeqExample> all, Split split) {
    std::vector<SeqExample> out;
    for (const auto& e : all) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

std::vector<ItemIndex> item_universe(const InteractionLog& log) {
    std::vector<ItemIndex> items;
    items.reserve(log.events.size());
    for (const auto& e : log.events) items.push_back(e.item);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    return items;
}

CandidateSet sample_candidates_for(ItemIndex positive, std::span<const ItemIndex> exclude,
                                   std::span<const ItemIndex> universe, std::size_t m,
                                   std::uint64_t seed, std::uint64_t example_id,
                                   std::string_view salt) {
    if (m == 0) throw Error("sample_candidates: m must be positive");
    if (universe.size() < m) throw Error("sample_candidates: item universe smaller than m");
    std::vector<ItemIndex> banned(exclude.begin(), exclude.end());
    banned.push_back(positive);
    std::sort(banned.begin(), banned.end());
    std::vector<ItemIndex> eligible;
    eligible.reserve(universe.size());
    for (ItemIndex it : universe) {
        if (!std::binary_search(banned.begin(), banned.end(), it)) eligible.push_back(it);
    }
    if (eligible.size() < m - 1) throw Error("sample_candidates: universe too small after exclusions");

    Rng rng = Rng::substream(seed, salt, example_id);
    // Partial Fisher-Yates: the first m-1 slots become a uniform sample without replacement.
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const std::size_t j = k + rng.uniform_index(eligible.size() - k);
        std::swap(eligible[k], eligible[j]);
    }
    CandidateSet c;
    c.items.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(m - 1));
    c.items.push_back(positive);
    rng.shuffle(c.items);
    c.target_index = static_cast<std::size_t>(
        std::find(c.items.begin(), c.items.end(), positive) - c.items.begin());
    return c;
}

CandidateSet sample_candidates(const SeqExample& example, std::span<const ItemIndex> universe,
                               std::size_t m, std::uint64_t seed) {
    const auto hist = example.real_history();
    return sample_candidates_for(example.target, hist, universe, m, seed, example.id, "candidates");
}

void write_examples(std::ostream& os, std::span<const SeqExample> examples,
                    const InteractionLog& log, const ItemCatalog& catalog) {
    for (const auto& e : examples) {
        os << log.user_ids.at(e.user) << '\t';
        for (std::size_t k = 0; k < e.history.size(); ++k) {
            if (k) os << ',';
            os << catalog.raw_id(e.history[k]);
        }
        os << '\t' << catalog.raw_id(e.target) << '\t' << split_name(e.split) << '\n';
    }
}

void write_candidates(std::ostream& os, std::span<const SeqExample> examples,
                      std::span<const CandidateSet> candidates, const ItemCatalog& catalog) {
    if (examples.size() != candidates.size()) throw Error("write_candidates: size mismatch");
    for (std::size_t i = 0; i < examples.size(); ++i) {
        os << examples[i].id << '\t';
        const auto& c = candidates[i];
        for (std::size_t k = 0; k < c.items.size(); ++k) {
            if (k) os << ',';
            os << catalog.raw_id(c.items[k]);
        }
        os << '\t' << c.target_index << '\n';
    }
}

}  // namespace delrec::catalog
