// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/catalog/synthetic.hpp"

#include <array>
#include <string>

#include "delrec/util/error.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::catalog {
namespace {

constexpr std::array<std::string_view, 64> kWords = {
    "amber",  "birch",   "cedar",  "delta",  "ember",  "fjord",  "garnet", "harbor",
    "iris",   "juniper", "kestrel", "lagoon", "meadow", "nectar", "onyx",   "pepper",
    "quartz", "raven",   "sierra", "tundra", "umber",  "violet", "willow", "xenon",
    "yarrow", "zephyr",  "acorn",  "basalt", "canyon", "dune",   "falcon", "glacier",
    "hazel",  "indigo",  "jasper", "kelp",   "lotus",  "maple",  "nimbus", "oasis",
    "pebble", "quill",   "reef",   "saffron", "thistle", "upland", "vapor", "walnut",
    "yonder", "zinnia",  "aspen",  "bramble", "cobalt", "drift",  "elm",    "fern",
    "grove",  "heron",   "island", "jade",   "kiln",   "lichen", "marble", "nutmeg",
};

std::string title_for(std::size_t i) {
    // Past the word list, titles stay single tokens by suffixing a counter.
    const auto w = kWords[i % kWords.size()];
    if (i < kWords.size()) return std::string(w);
    return std::string(w) + std::to_string(i / kWords.size());
}

}  // namespace

SyntheticKind parse_synthetic_kind(std::string_view name) {
    if (name == "cyclic") return SyntheticKind::cyclic;
    if (name == "markov") return SyntheticKind::markov;
    throw Error("unknown synthetic kind: " + std::string(name));
}

std::vector<ItemIndex> synthetic_successors(const SyntheticOptions& opt) {
    const auto n = static_cast<ItemIndex>(opt.items);
    std::vector<ItemIndex> next(n + 1, kPadItem);
    if (opt.kind == SyntheticKind::cyclic) {
        for (ItemIndex i = 1; i <= n; ++i) next[i] = i % n + 1;
        return next;
    }
    // A random single cycle through all items keeps every item reachable.
    std::vector<ItemIndex> order(n);
    for (ItemIndex i = 0; i < n; ++i) order[i] = i + 1;
    Rng rng = Rng::substream(opt.seed, "synthetic.successors");
    rng.shuffle(order);
    for (ItemIndex k = 0; k < n; ++k) next[order[k]] = order[(k + 1) % n];
    return next;
}

Dataset generate_synthetic(const SyntheticOptions& opt) {
    if (opt.items < 2) throw Error("synthetic: need at least 2 items");
    if (opt.users == 0) throw Error("synthetic: need at least 1 user");
    if (opt.min_length < 3 || opt.max_length < opt.min_length) {
        throw Error("synthetic: need 3 <= min_length <= max_length");
    }
    if (opt.noise < 0.0 || opt.noise > 1.0) throw Error("synthetic: noise must be in [0, 1]");

    const auto next = synthetic_successors(opt);
    Dataset ds;
    for (std::size_t i = 1; i <= opt.items; ++i) {
        ds.catalog.raw_ids.push_back(std::to_string(i));
        ds.catalog.titles.push_back(title_for(i - 1));
    }
    for (std::size_t u = 0; u < opt.users; ++u) {
        ds.log.user_ids.push_back("u" + std::to_string(u + 1));
        Rng rng = Rng::substream(opt.seed, "synthetic.user", u);
        const std::size_t len = opt.min_length + rng.uniform_index(opt.max_length - opt.min_length + 1);
        auto item = static_cast<ItemIndex>(1 + rng.uniform_index(opt.items));
        for (std::size_t t = 0; t < len; ++t) {
            ds.log.events.push_back({static_cast<std::uint32_t>(u), item,
                                     static_cast<std::int64_t>(1000 * (t + 1)), std::nullopt});
            if (opt.kind == SyntheticKind::markov && rng.uniform01() < opt.noise) {
                item = static_cast<ItemIndex>(1 + rng.uniform_index(opt.items));
            } else {
                item = next[item];
            }
        }
    }
    return ds;
}

}  // namespace delrec::catalog
