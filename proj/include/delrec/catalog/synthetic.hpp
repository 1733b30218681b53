// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

#include "delrec/catalog/catalog.hpp"

namespace delrec::catalog {

enum class SyntheticKind {
    cyclic,  // item i is always followed by i % n + 1
    markov,  // each item has one preferred successor, taken with probability 1 - noise
};

SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticOptions {
    SyntheticKind kind = SyntheticKind::cyclic;
    std::size_t items = 20;
    std::size_t users = 200;
    std::size_t min_length = 20;
    std::size_t max_length = 30;
    double noise = 0.0;  // markov only
    std::uint64_t seed = 7;
};

// Raw ids are "1".."N"; titles are distinct single words so each title is one
// vocabulary token.
Dataset generate_synthetic(const SyntheticOptions& opt);

// Successor map of the generator (index 0 unused); for cyclic data this is i -> i % n + 1.
std::vector<ItemIndex> synthetic_successors(const SyntheticOptions& opt);

}  // namespace delrec::catalog
