// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <set>

#include "delrec/nn/ops.hpp"
#include "delrec/teachers/teacher.hpp"
#include "delrec/util/binio.hpp"
#include "delrec/util/error.hpp"

namespace delrec::teachers {
namespace {

constexpr std::string_view kMagic = "DELTCH1\n";
constexpr std::uint32_t kVersion = 1;

using nn::Tensor;

std::string blk(std::size_t b, std::string_view name) {
    return "block" + std::to_string(b) + "." + std::string(name);
}

// Heights assigned to the horizontal filters: 1..L cycled.
std::vector<std::size_t> caser_heights(const TeacherConfig& c) {
    std::vector<std::size_t> counts(c.history_length + 1, 0);
    for (std::size_t f = 0; f < c.horizontal_filters; ++f) ++counts[f % c.history_length + 1];
    return counts;
}

Tensor maybe_dropout(const Tensor& x, double p, Rng* rng) {
    return rng != nullptr ? nn::dropout(x, p, *rng) : x;
}

}  // namespace

std::string_view arch_name(Arch a) {
    switch (a) {
        case Arch::sasrec: return "sasrec";
        case Arch::gru4rec: return "gru4rec";
        case Arch::caser: return "caser";
    }
    return "?";
}

Arch parse_arch(std::string_view name) {
    if (name == "sasrec") return Arch::sasrec;
    if (name == "gru4rec") return Arch::gru4rec;
    if (name == "caser") return Arch::caser;
    throw Error("unknown teacher architecture: " + std::string(name));
}

TeacherConfig TeacherConfig::defaults(Arch arch) {
    TeacherConfig c;
    c.arch = arch;
    switch (arch) {
        case Arch::sasrec:
            break;
        case Arch::caser:
            c.dropout = 0.4;
            break;
        case Arch::gru4rec:
            c.embedding_dim = 64;
            c.learning_rate = 0.01;
            c.dropout = 0.3;
            c.batch_size = 50;
            c.optimizer = OptimizerKind::adagrad;
            break;
    }
    return c;
}

void TeacherConfig::validate() const {
    if (embedding_dim == 0) throw Error("teacher: embedding_dim must be positive");
    if (heads == 0 || embedding_dim % heads != 0) throw Error("teacher: embedding_dim must divide into heads");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("teacher: dropout must be in [0, 1)");
    if (!(learning_rate > 0.0)) throw Error("teacher: learning_rate must be positive");
    if (batch_size == 0) throw Error("teacher: batch_size must be positive");
    if (history_length == 0) throw Error("teacher: history_length must be positive");
    if (arch == Arch::sasrec && blocks == 0) throw Error("teacher: sasrec needs at least one block");
    if (arch == Arch::caser && horizontal_filters == 0 && vertical_filters == 0) {
        throw Error("teacher: caser needs at least one filter");
    }
}

TeacherModel::TeacherModel(const TeacherConfig& config, std::size_t item_count)
    : config_(config), item_count_(item_count) {
    config_.validate();
    if (item_count == 0) throw Error("teacher: empty item set");
    const std::size_t d = config_.embedding_dim;
    const std::size_t n = item_count + 1;
    const std::size_t L = config_.history_length;
    Rng rng = Rng::substream(config_.seed, "teacher.init");
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    auto linear_std = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    Tensor& emb = params_.add_normal("item_emb", n, d, emb_std, rng);
    std::fill_n(emb.data(), d, 0.0);

    switch (config_.arch) {
        case Arch::sasrec:
            params_.add_normal("pos_emb", L, d, emb_std, rng);
            for (std::size_t b = 0; b < config_.blocks; ++b) {
                params_.add_constant(blk(b, "ln1.g"), 1, d, 1.0);
                params_.add_constant(blk(b, "ln1.b"), 1, d, 0.0);
                for (const char* w : {"wq", "wk", "wv"}) {
                    params_.add_normal(blk(b, w), d, d, linear_std(d), rng);
                    params_.add_constant(blk(b, std::string("b") + (w + 1)), 1, d, 0.0);
                }
                params_.add_constant(blk(b, "ln2.g"), 1, d, 1.0);
                params_.add_constant(blk(b, "ln2.b"), 1, d, 0.0);
                params_.add_normal(blk(b, "ffn.w1"), d, d, linear_std(d), rng);
                params_.add_constant(blk(b, "ffn.b1"), 1, d, 0.0);
                params_.add_normal(blk(b, "ffn.w2"), d, d, linear_std(d), rng);
                params_.add_constant(blk(b, "ffn.b2"), 1, d, 0.0);
            }
            params_.add_constant("final_ln.g", 1, d, 1.0);
            params_.add_constant("final_ln.b", 1, d, 0.0);
            params_.add_constant("out_b", 1, n, 0.0);
            break;
        case Arch::gru4rec:
            for (const char* g : {"z", "r", "n"}) {
                params_.add_normal(std::string("gru.wx") + g, d, d, linear_std(d), rng);
                params_.add_constant(std::string("gru.bx") + g, 1, d, 0.0);
                params_.add_normal(std::string("gru.wh") + g, d, d, linear_std(d), rng);
            }
            params_.add_constant("gru.bhn", 1, d, 0.0);
            params_.add_normal("out_w", n, d, linear_std(d), rng);
            params_.add_constant("out_b", 1, n, 0.0);
            break;
        case Arch::caser: {
            const auto counts = caser_heights(config_);
            std::size_t features = config_.vertical_filters * d;
            for (std::size_t h = 1; h <= L; ++h) {
                if (counts[h] == 0) continue;
                params_.add_normal("conv_h" + std::to_string(h) + ".w", counts[h], h * d, linear_std(h * d), rng);
                params_.add_constant("conv_h" + std::to_string(h) + ".b", 1, counts[h], 0.0);
                features += counts[h];
            }
            if (config_.vertical_filters > 0) {
                params_.add_normal("conv_v.w", config_.vertical_filters, L, linear_std(L), rng);
            }
            params_.add_normal("fc.w", d, features, linear_std(features), rng);
            params_.add_constant("fc.b", 1, d, 0.0);
            params_.add_normal("out_w", n, d, linear_std(d), rng);
            params_.add_constant("out_b", 1, n, 0.0);
            break;
        }
    }
    params_.round_to_f32();
}

void TeacherModel::check_ids(std::span<const ItemIndex> ids) const {
    if (ids.size() % config_.history_length != 0) {
        throw Error("teacher: history length must be " + std::to_string(config_.history_length));
    }
    for (ItemIndex id : ids) {
        if (id > item_count_) throw Error("teacher: unknown item index " + std::to_string(id));
    }
}

Tensor TeacherModel::sasrec_hidden(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng,
                                  bool last_only) const {
    const std::size_t L = config_.history_length;
    const double p = config_.dropout;
    std::vector<std::uint32_t> pos(ids.size());
    std::vector<double> valid(ids.size());
    std::vector<std::uint8_t> key_valid(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        pos[i] = static_cast<std::uint32_t>(i % L);
        valid[i] = ids[i] != catalog::kPadItem ? 1.0 : 0.0;
        key_valid[i] = ids[i] != catalog::kPadItem ? 1 : 0;
    }
    std::vector<std::size_t> last(batch);
    std::vector<double> last_valid(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        last[b] = b * L + L - 1;
        last_valid[b] = valid[last[b]];
    }
    Tensor x = nn::add(nn::gather_rows(params_.at("item_emb"), ids, 0), nn::gather_rows(params_.at("pos_emb"), pos));
    x = nn::mask_rows(maybe_dropout(x, p, rng), valid);
    for (std::size_t b = 0; b < config_.blocks; ++b) {
        // In the last block only the final position feeds the output when last_only is set.
        const bool trim = last_only && b + 1 == config_.blocks;
        const Tensor h = nn::layer_norm(x, params_.at(blk(b, "ln1.g")), params_.at(blk(b, "ln1.b")));
        const Tensor hq = trim ? nn::pick_rows(h, last) : h;
        const Tensor q = nn::linear(hq, params_.at(blk(b, "wq")), params_.at(blk(b, "bq")));
        const Tensor k = nn::linear(h, params_.at(blk(b, "wk")), params_.at(blk(b, "bk")));
        const Tensor v = nn::linear(h, params_.at(blk(b, "wv")), params_.at(blk(b, "bv")));
        const nn::AttentionShape shape{batch, config_.heads, trim ? 1 : L, L, true};
        if (trim) x = nn::pick_rows(x, last);
        x = nn::add(x, maybe_dropout(nn::attention(q, k, v, shape, key_valid), p, rng));
        const Tensor h2 = nn::layer_norm(x, params_.at(blk(b, "ln2.g")), params_.at(blk(b, "ln2.b")));
        Tensor f = nn::relu(nn::linear(h2, params_.at(blk(b, "ffn.w1")), params_.at(blk(b, "ffn.b1"))));
        f = nn::linear(maybe_dropout(f, p, rng), params_.at(blk(b, "ffn.w2")), params_.at(blk(b, "ffn.b2")));
        x = nn::mask_rows(nn::add(x, maybe_dropout(f, p, rng)), trim ? last_valid : valid);
    }
    return nn::layer_norm(x, params_.at("final_ln.g"), params_.at("final_ln.b"));
}

Tensor TeacherModel::gru_final(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng) const {
    const std::size_t L = config_.history_length;
    const std::size_t d = config_.embedding_dim;
    const Tensor x = maybe_dropout(nn::gather_rows(params_.at("item_emb"), ids, 0), config_.dropout, rng);
    const Tensor xz = nn::linear(x, params_.at("gru.wxz"), params_.at("gru.bxz"));
    const Tensor xr = nn::linear(x, params_.at("gru.wxr"), params_.at("gru.bxr"));
    const Tensor xn = nn::linear(x, params_.at("gru.wxn"), params_.at("gru.bxn"));
    const Tensor none;
    Tensor h = Tensor::zeros(batch, d);
    std::vector<std::size_t> rows(batch);
    std::vector<double> mask(batch);
    for (std::size_t t = 0; t < L; ++t) {
        bool any = false;
        for (std::size_t b = 0; b < batch; ++b) {
            rows[b] = b * L + t;
            mask[b] = ids[rows[b]] != catalog::kPadItem ? 1.0 : 0.0;
            any = any || mask[b] != 0.0;
        }
        if (!any) continue;
        const Tensor z = nn::sigmoid(nn::add(nn::pick_rows(xz, rows), nn::linear(h, params_.at("gru.whz"), none)));
        const Tensor r = nn::sigmoid(nn::add(nn::pick_rows(xr, rows), nn::linear(h, params_.at("gru.whr"), none)));
        const Tensor hn = nn::linear(h, params_.at("gru.whn"), params_.at("gru.bhn"));
        const Tensor n = nn::tanh(nn::add(nn::pick_rows(xn, rows), nn::mul(r, hn)));
        // h' = n + z * (h - n); padded steps keep h.
        const Tensor next = nn::add(n, nn::mul(z, nn::sub(h, n)));
        h = nn::add(h, nn::mask_rows(nn::sub(next, h), mask));
    }
    return maybe_dropout(h, config_.dropout, rng);
}

Tensor TeacherModel::caser_final(std::span<const ItemIndex> ids, std::size_t batch, Rng* rng) const {
    const std::size_t L = config_.history_length;
    const Tensor x = nn::gather_rows(params_.at("item_emb"), ids, 0);
    std::vector<Tensor> features;
    const auto counts = caser_heights(config_);
    for (std::size_t h = 1; h <= L; ++h) {
        if (counts[h] == 0) continue;
        const std::string base = "conv_h" + std::to_string(h);
        const Tensor conv = nn::relu(nn::linear(nn::unfold_rows(x, batch, L, h), params_.at(base + ".w"),
                                                params_.at(base + ".b")));
        features.push_back(nn::segment_max(conv, L - h + 1));
    }
    if (config_.vertical_filters > 0) features.push_back(nn::vertical_conv(x, params_.at("conv_v.w"), batch, L));
    const Tensor all = maybe_dropout(nn::concat_cols(features), config_.dropout, rng);
    return nn::relu(nn::linear(all, params_.at("fc.w"), params_.at("fc.b")));
}

Tensor TeacherModel::logits(std::span<const ItemIndex> histories, Rng* rng) const {
    check_ids(histories);
    const std::size_t L = config_.history_length;
    const std::size_t batch = histories.size() / L;
    if (batch == 0) throw Error("teacher: empty batch");
    switch (config_.arch) {
        case Arch::sasrec: {
            const Tensor final = sasrec_hidden(histories, batch, rng, true);
            return nn::add_row(nn::matmul_nt(final, params_.at("item_emb")), params_.at("out_b"));
        }
        case Arch::gru4rec:
            return nn::linear(gru_final(histories, batch, rng), params_.at("out_w"), params_.at("out_b"));
        case Arch::caser:
            return nn::linear(caser_final(histories, batch, rng), params_.at("out_w"), params_.at("out_b"));
    }
    throw Error("teacher: bad architecture");
}

std::vector<double> TeacherModel::score_batch(std::span<const ItemIndex> histories) const {
    const std::size_t L = config_.history_length;
    const std::size_t n = item_count_ + 1;
    check_ids(histories);
    const std::size_t batch = histories.size() / L;
    std::vector<double> out(batch * n);
    constexpr std::size_t kChunk = 256;
    for (std::size_t b0 = 0; b0 < batch; b0 += kChunk) {
        const std::size_t nb = std::min(kChunk, batch - b0);
        const Tensor lg = logits(histories.subspan(b0 * L, nb * L), nullptr);
        std::copy(lg.value().begin(), lg.value().end(), out.begin() + static_cast<std::ptrdiff_t>(b0 * n));
    }
    for (std::size_t b = 0; b < batch; ++b) out[b * n] = kPadScore;
    return out;
}

std::vector<double> TeacherModel::score_next(std::span<const ItemIndex> history) const {
    if (history.size() != config_.history_length) {
        throw Error("teacher: history length must be " + std::to_string(config_.history_length));
    }
    return score_batch(history);
}

Tensor TeacherModel::hidden_states(std::span<const ItemIndex> history) const {
    if (config_.arch != Arch::sasrec) throw Error("teacher: hidden_states is defined for sasrec only");
    if (history.size() != config_.history_length) throw Error("teacher: bad history length");
    check_ids(history);
    return sasrec_hidden(history, 1, nullptr, false);
}

void TeacherModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    binio::write_magic(os, kMagic);
    binio::write_u32(os, kVersion);
    binio::write_string(os, arch_name(config_.arch));
    binio::write_u32(os, static_cast<std::uint32_t>(config_.embedding_dim));
    binio::write_u32(os, static_cast<std::uint32_t>(item_count_));
    binio::write_u64(os, config_.seed);
    binio::write_u32(os, static_cast<std::uint32_t>(config_.blocks));
    binio::write_u32(os, static_cast<std::uint32_t>(config_.heads));
    binio::write_u32(os, static_cast<std::uint32_t>(config_.horizontal_filters));
    binio::write_u32(os, static_cast<std::uint32_t>(config_.vertical_filters));
    binio::write_u32(os, static_cast<std::uint32_t>(config_.history_length));
    params_.write(os);
    if (!os) throw Error("write failed: " + path.string());
}

TeacherModel TeacherModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    binio::expect_magic(is, kMagic);
    if (binio::read_u32(is) != kVersion) throw Error("teacher checkpoint: unsupported version");
    TeacherConfig c = TeacherConfig::defaults(parse_arch(binio::read_string(is)));
    c.embedding_dim = binio::read_u32(is);
    const std::size_t items = binio::read_u32(is);
    c.seed = binio::read_u64(is);
    c.blocks = binio::read_u32(is);
    c.heads = binio::read_u32(is);
    c.horizontal_filters = binio::read_u32(is);
    c.vertical_filters = binio::read_u32(is);
    c.history_length = binio::read_u32(is);
    TeacherModel m(c, items);
    m.params_.read(is);
    return m;
}

}  // namespace delrec::teachers
