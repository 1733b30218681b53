// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Interaction ingestion and the sequence-example protocol: minimum-count
// filtering, per-user chronological split, fixed-length history windows and
// sampled candidate sets.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace delrec::catalog {

// Dense item index. 0 is the padding sentinel; real items are 1..N.
using ItemIndex = std::uint32_t;
inline constexpr ItemIndex kPadItem = 0;
inline constexpr std::string_view kPadItemToken = "<pad_item>";

struct Interaction {
    std::uint32_t user = 0;  // dense index into InteractionLog::user_ids
    ItemIndex item = kPadItem;
    std::int64_t timestamp = 0;
    std::optional<double> rating;  // kept for reference; every row counts as one interaction
};

struct ItemCatalog {
    // Index 0 holds the padding entry.
    std::vector<std::string> raw_ids{std::string(kPadItemToken)};
    std::vector<std::string> titles{std::string(kPadItemToken)};

    std::size_t item_count() const { return titles.size() - 1; }
    const std::string& title(ItemIndex i) const { return titles.at(i); }
    const std::string& raw_id(ItemIndex i) const { return raw_ids.at(i); }
    std::optional<ItemIndex> find(std::string_view raw) const;
};

// Events sorted by (user, timestamp), stable with respect to input order.
struct InteractionLog {
    std::vector<std::string> user_ids;
    std::vector<Interaction> events;
};

struct Dataset {
    InteractionLog log;
    ItemCatalog catalog;
};

enum class Format { tsv, csv, movielens100k };

Format parse_format(std::string_view name);

// tsv/csv: columns user, item, timestamp[, rating]; titles come from
// `titles_path` (default: "<path>.titles", TSV item<TAB>title).
// movielens100k: `path` is the directory holding u.data and u.item.
Dataset load_interactions(const std::filesystem::path& path, Format format,
                          const std::optional<std::filesystem::path>& titles_path = std::nullopt);

// Drops users and items with fewer than `threshold` interactions, repeating
// until no further removal happens.
InteractionLog filter_min_interactions(const InteractionLog& log, int threshold = 5);

// Re-indexes items so the catalog holds exactly the items present in `log`.
Dataset compact(const InteractionLog& log, const ItemCatalog& catalog);

struct DatasetStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t interactions = 0;
    double sparsity = 0.0;  // 1 - interactions / (users * items)
};
DatasetStats stats(const InteractionLog& log);

enum class Split : std::uint8_t { train, valid, test };
std::string_view split_name(Split s);

struct SplitRatios {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

// Parallel to log.events.
struct TaggedLog {
    InteractionLog log;
    std::vector<Split> tags;
};

// Per user: the first floor(0.8 n) events are train, up to floor(0.9 n) valid,
// the rest test (boundaries from the cumulative ratios).
TaggedLog chronological_split(const InteractionLog& log, SplitRatios ratios = {});

struct SeqExample {
    std::uint64_t id = 0;
    std::uint32_t user = 0;
    std::vector<ItemIndex> history;  // oldest -> newest, left-padded with kPadItem
    ItemIndex target = kPadItem;
    Split split = Split::train;

    // Non-padding history items, oldest first.
    std::vector<ItemIndex> real_history() const;
};

// One example per event whose tag is a target split, except a user's first
// event (no history). History may reach back across split boundaries.
std::vector<SeqExample> window_examples(const TaggedLog& tagged, std::size_t history_length = 10);

std::vector<SeqExample> select_split(std::span<const SeqExample> all, Split split);

struct CandidateSet {
    std::vector<ItemIndex> items;
    std::size_t target_index = 0;
};

// Sorted distinct items present in the log.
std::vector<ItemIndex> item_universe(const InteractionLog& log);

// m distinct items: the target plus m-1 uniform negatives that are neither the
// target nor in the history, in an order fixed by (seed, example id).
CandidateSet sample_candidates(const SeqExample& example, std::span<const ItemIndex> universe,
                               std::size_t m, std::uint64_t seed);

// Same protocol for an arbitrary positive item and exclusion list; `salt`
// separates independent draws for one example.
CandidateSet sample_candidates_for(ItemIndex positive, std::span<const ItemIndex> exclude,
                                   std::span<const ItemIndex> universe, std::size_t m,
                                   std::uint64_t seed, std::uint64_t example_id,
                                   std::string_view salt);

// `user_id \t h1,...,hL \t target \t split` with raw ids.
void write_examples(std::ostream& os, std::span<const SeqExample> examples,
                    const InteractionLog& log, const ItemCatalog& catalog);
// `example_id \t c1,...,cm \t target_index` (0-based index).
void write_candidates(std::ostream& os, std::span<const SeqExample> examples,
                      std::span<const CandidateSet> candidates, const ItemCatalog& catalog);

}  // namespace delrec::catalog
