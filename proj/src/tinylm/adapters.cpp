// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>

#include "delrec/tinylm/model.hpp"
#include "delrec/util/binio.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::tinylm {
namespace {

constexpr std::string_view kAdapterMagic = "DELADP1";

}  // namespace

AdapterSet init_adapters(const LMConfig& config, std::size_t rank, std::size_t budget, std::uint64_t seed) {
    config.validate();
    if (rank == 0) throw Error("init_adapters: rank must be positive");
    AdapterSet a;
    Rng rng = Rng::substream(seed, "tinylm.adapters");
    const std::size_t d = config.d_model;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        for (const char* m : {"wq", "wv"}) {
            AdapterTriplets t;
            t.target = "layer" + std::to_string(l) + "." + m;
            t.rank = rank;
            t.importance.assign(rank, 0.0);
            t.retained.assign(rank, true);
            a.params_.add_normal(t.target + ".P", d, rank, 0.02, rng);
            a.params_.add_constant(t.target + ".lambda", 1, rank, 0.0);
            a.params_.add_normal(t.target + ".Q", rank, d, 0.02, rng);
            a.triplets_.push_back(std::move(t));
        }
    }
    a.budget = budget == 0 ? a.total_ranks() / 2 : budget;
    a.params_.round_to_f32();
    return a;
}

int AdapterSet::find(std::string_view target) const {
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
        if (triplets_[i].target == target) return static_cast<int>(i);
    }
    return -1;
}

std::size_t AdapterSet::total_ranks() const {
    std::size_t n = 0;
    for (const auto& t : triplets_) n += t.rank;
    return n;
}

std::size_t AdapterSet::retained_ranks() const {
    std::size_t n = 0;
    for (const auto& t : triplets_) n += static_cast<std::size_t>(std::count(t.retained.begin(), t.retained.end(), true));
    return n;
}

void AdapterSet::update_importance(double beta) {
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
        const nn::Tensor& lam = lambda(i);
        auto& imp = triplets_[i].importance;
        for (std::size_t j = 0; j < imp.size(); ++j) {
            const double g = lam.has_grad() ? lam.grad()[j] : 0.0;
            imp[j] = beta * imp[j] + (1.0 - beta) * std::abs(lam.value()[j] * g);
        }
    }
}

void AdapterSet::apply_mask() {
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
        auto lam = lambda(i).value();
        for (std::size_t j = 0; j < lam.size(); ++j) {
            if (!triplets_[i].retained[j]) lam[j] = 0.0;
        }
    }
}

std::size_t adalora_reallocate(AdapterSet& adapters) {
    struct Entry {
        double importance;
        std::size_t matrix, index;
    };
    std::vector<Entry> all;
    auto& ts = adapters.triplets();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (std::size_t j = 0; j < ts[i].rank; ++j) all.push_back({ts[i].importance[j], i, j});
    }
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.importance > b.importance; });
    const std::size_t keep = std::min(adapters.budget, all.size());
    for (std::size_t n = 0; n < all.size(); ++n) ts[all[n].matrix].retained[all[n].index] = n < keep;
    adapters.apply_mask();
    return keep;
}

void AdapterSet::write(std::ostream& os) const {
    binio::write_magic(os, kAdapterMagic);
    binio::write_u32(os, 1);
    binio::write_string(os, provenance);
    binio::write_u32(os, static_cast<std::uint32_t>(budget));
    binio::write_u32(os, static_cast<std::uint32_t>(triplets_.size()));
    for (const auto& t : triplets_) {
        binio::write_string(os, t.target);
        binio::write_u32(os, static_cast<std::uint32_t>(t.rank));
        binio::write_f32(os, t.importance);
        for (bool r : t.retained) binio::write_u32(os, r ? 1 : 0);
    }
    params_.write(os);
}

AdapterSet AdapterSet::read(std::istream& is) {
    binio::expect_magic(is, kAdapterMagic);
    if (binio::read_u32(is) != 1) throw Error("adapter file: unsupported version");
    AdapterSet a;
    a.provenance = binio::read_string(is);
    a.budget = binio::read_u32(is);
    const auto count = binio::read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        AdapterTriplets t;
        t.target = binio::read_string(is);
        t.rank = binio::read_u32(is);
        t.importance = binio::read_f32(is, t.rank);
        for (std::size_t j = 0; j < t.rank; ++j) t.retained.push_back(binio::read_u32(is) != 0);
        a.triplets_.push_back(std::move(t));
    }
    // Shapes come from the serialized tensors themselves.
    const auto n = binio::read_u32(is);
    if (n != 3 * count) throw Error("adapter file: tensor count does not match the triplet table");
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name = binio::read_string(is);
        const auto rows = binio::read_u32(is);
        const auto cols = binio::read_u32(is);
        a.params_.add(std::move(name), nn::Tensor::from(rows, cols, binio::read_f32(is, std::size_t{rows} * cols)));
    }
    for (std::size_t i = 0; i < a.triplets_.size(); ++i) {
        const auto r = a.triplets_[i].rank;
        if (a.P(i).cols() != r || a.lambda(i).cols() != r || a.Q(i).rows() != r) {
            throw Error("adapter file: rank mismatch for " + a.triplets_[i].target);
        }
    }
    return a;
}

void AdapterSet::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    write(os);
}

AdapterSet AdapterSet::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string());
    return read(is);
}

}  // namespace delrec::tinylm
