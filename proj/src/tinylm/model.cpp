// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/tinylm/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "delrec/nn/ops.hpp"
#include "delrec/util/binio.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::tinylm {
namespace {

constexpr std::string_view kModelMagic = "DELLMC1";

std::string layer_name(std::size_t l, const char* part) { return "layer" + std::to_string(l) + "." + part; }

nn::Tensor project(const LMParams& p, const std::string& name, const nn::Tensor& h) {
    nn::Tensor y = nn::linear(h, p.base.at(name + ".w"), p.base.at(name + ".b"));
    if (p.adapters) {
        const int i = p.adapters->find(name);
        if (i >= 0) {
            const auto& a = *p.adapters;
            const auto idx = static_cast<std::size_t>(i);
            const nn::Tensor low = nn::scale_cols(nn::matmul_nt(h, a.Q(idx)), a.lambda(idx));
            y = nn::add(y, nn::matmul_nt(low, a.P(idx)));
        }
    }
    return y;
}

nn::Tensor norm(const LMParams& p, const std::string& name, const nn::Tensor& x) {
    return nn::layer_norm(x, p.base.at(name + ".g"), p.base.at(name + ".b"));
}

nn::Tensor feed_forward(const LMParams& p, std::size_t l, const nn::Tensor& x) {
    const nn::Tensor h = norm(p, layer_name(l, "ln2"), x);
    const std::string f1 = layer_name(l, "ffn1"), f2 = layer_name(l, "ffn2");
    const nn::Tensor u = nn::gelu(nn::linear(h, p.base.at(f1 + ".w"), p.base.at(f1 + ".b")));
    return nn::add(x, nn::linear(u, p.base.at(f2 + ".w"), p.base.at(f2 + ".b")));
}

// Embeds ids (soft slot j encoded as vocab_size + j) at the given positions,
// plus a token shift: a linear map of the previous input row's embedding.
nn::Tensor embed(const LMParams& p, std::span<const std::uint32_t> ids, std::span<const std::uint32_t> prev,
                 std::span<const std::uint32_t> positions, bool uses_soft) {
    const nn::Tensor& tok = p.base.at("tok_emb");
    nn::Tensor table = tok;
    if (uses_soft) {
        const nn::Tensor parts[] = {tok, p.soft.matrix()};
        table = nn::concat_rows(parts);
    }
    const nn::Tensor shifted = nn::linear(nn::gather_rows(table, prev), p.base.at("shift.w"), p.base.at("shift.b"));
    return nn::add(nn::add(nn::gather_rows(table, ids), shifted), nn::gather_rows(p.base.at("pos_emb"), positions));
}

// Row t's predecessor within each length-T block; the first row sees PAD.
std::vector<std::uint32_t> previous_ids(std::span<const std::uint32_t> ids, std::size_t T) {
    std::vector<std::uint32_t> prev(ids.size(), kPadTok);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i % T != 0) prev[i] = ids[i - 1];
    }
    return prev;
}

std::uint32_t encode_input(const LMParams& p, const InputToken& t, bool& uses_soft) {
    const std::size_t V = p.config.vocab_size;
    if (t.soft) {
        if (t.id >= p.soft.k()) throw Error("forward: soft slot " + std::to_string(t.id) + " out of range");
        uses_soft = true;
        return static_cast<std::uint32_t>(V + t.id);
    }
    if (t.id >= V) throw Error("forward: token id out of range");
    return t.id;
}

}  // namespace

void LMConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0 || max_positions == 0 || vocab_size == 0)
        throw Error("LMConfig: all sizes must be positive");
    if (d_model % n_heads != 0) throw Error("LMConfig: d_model must be divisible by n_heads");
    if (vocab_size <= kReservedTokens) throw Error("LMConfig: vocabulary has no regular tokens");
}

std::string LMConfig::canonical() const {
    std::ostringstream os;
    os << "d_model=" << d_model << "\nn_layers=" << n_layers << "\nn_heads=" << n_heads << "\nffn_dim=" << ffn_dim
       << "\nmax_positions=" << max_positions << "\nvocab_size=" << vocab_size << "\nseed=" << seed << '\n';
    return os.str();
}

LMParams LMParams::init(const LMConfig& config) {
    config.validate();
    LMParams p;
    p.config = config;
    Rng rng = Rng::substream(config.seed, "tinylm.init");
    const std::size_t d = config.d_model, f = config.ffn_dim;
    const double out_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    p.base.add_normal("tok_emb", config.vocab_size, d, 0.02, rng);
    p.base.add_normal("pos_emb", config.max_positions, d, 0.02, rng);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        p.base.add_constant(layer_name(l, "ln1.g"), 1, d, 1.0);
        p.base.add_constant(layer_name(l, "ln1.b"), 1, d, 0.0);
        for (const char* m : {"wq", "wk", "wv"}) {
            p.base.add_normal(layer_name(l, m) + ".w", d, d, 0.02, rng);
            p.base.add_constant(layer_name(l, m) + ".b", 1, d, 0.0);
        }
        p.base.add_normal(layer_name(l, "wo.w"), d, d, out_std, rng);
        p.base.add_constant(layer_name(l, "wo.b"), 1, d, 0.0);
        p.base.add_constant(layer_name(l, "ln2.g"), 1, d, 1.0);
        p.base.add_constant(layer_name(l, "ln2.b"), 1, d, 0.0);
        p.base.add_normal(layer_name(l, "ffn1.w"), f, d, 0.02, rng);
        p.base.add_constant(layer_name(l, "ffn1.b"), 1, f, 0.0);
        p.base.add_normal(layer_name(l, "ffn2.w"), d, f, out_std, rng);
        p.base.add_constant(layer_name(l, "ffn2.b"), 1, d, 0.0);
    }
    p.base.add_constant("final_ln.g", 1, d, 1.0);
    p.base.add_constant("final_ln.b", 1, d, 0.0);
    p.base.add_normal("shift.w", d, d, 0.02, rng);
    p.base.add_constant("shift.b", 1, d, 0.0);
    p.base.round_to_f32();
    return p;
}

std::size_t LMParams::scalar_count() const {
    return base.scalar_count() + soft.k() * soft.d() + (adapters ? adapters->params().scalar_count() : 0);
}

std::vector<nn::Tensor> forward_batch(const LMParams& p, std::span<const LMExample> examples) {
    if (examples.empty()) return {};
    if (!p.soft.empty() && p.soft.d() != p.config.d_model) throw Error("forward: bank width differs from d_model");
    const std::size_t B = examples.size();
    std::vector<std::size_t> input_len(B), total_len(B);
    std::size_t T = 0;
    for (std::size_t b = 0; b < B; ++b) {
        input_len[b] = examples[b].input->size();
        total_len[b] = input_len[b] + 1 + examples[b].target_prefix.size();
        T = std::max(T, total_len[b]);
    }
    if (T > p.config.max_positions) {
        throw Error("forward: sequence length " + std::to_string(T) + " exceeds max_positions " +
                    std::to_string(p.config.max_positions));
    }
    // Right padding: causal attention keeps real positions blind to the pad tail.
    std::vector<std::uint32_t> ids(B * T, kPadTok), pos(B * T);
    bool uses_soft = false;
    for (std::size_t b = 0; b < B; ++b) {
        std::uint32_t* row = ids.data() + b * T;
        std::size_t t = 0;
        for (const auto& tok : *examples[b].input) row[t++] = encode_input(p, tok, uses_soft);
        row[t++] = kAnswerSep;
        for (TokenId y : examples[b].target_prefix) {
            if (y >= p.config.vocab_size) throw Error("forward: token id out of range");
            row[t++] = y;
        }
        for (std::size_t i = 0; i < T; ++i) pos[b * T + i] = static_cast<std::uint32_t>(i);
    }

    nn::Tensor x = embed(p, ids, previous_ids(ids, T), pos, uses_soft);
    const nn::AttentionShape shape{B, p.config.n_heads, T, T, true};
    for (std::size_t l = 0; l < p.config.n_layers; ++l) {
        const nn::Tensor h = norm(p, layer_name(l, "ln1"), x);
        const nn::Tensor a = nn::attention(project(p, layer_name(l, "wq"), h), project(p, layer_name(l, "wk"), h),
                                           project(p, layer_name(l, "wv"), h), shape);
        x = nn::add(x, nn::linear(a, p.base.at(layer_name(l, "wo.w")), p.base.at(layer_name(l, "wo.b"))));
        x = feed_forward(p, l, x);
    }

    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = input_len[b]; t < total_len[b]; ++t) rows.push_back(b * T + t);
    }
    const nn::Tensor logits = nn::matmul_nt(norm(p, "final_ln", nn::pick_rows(x, rows)), p.base.at("tok_emb"));
    std::vector<nn::Tensor> out;
    std::size_t r0 = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t n = total_len[b] - input_len[b];
        out.push_back(B == 1 ? logits : nn::slice_rows(logits, r0, n));
        r0 += n;
    }
    return out;
}

nn::Tensor forward_logits(const LMParams& p, const InputSequence& input, std::span<const TokenId> target_prefix) {
    const LMExample ex{&input, target_prefix};
    return forward_batch(p, std::span(&ex, 1))[0];
}

nn::Tensor nll_loss(const nn::Tensor& logits, std::span<const TokenId> target) {
    if (target.empty()) throw Error("nll_loss: empty target");
    if (logits.rows() != target.size()) throw Error("nll_loss: logits rows do not match the target length");
    return nn::cross_entropy(logits, target, kPadTok);
}

nn::Tensor batch_nll(const LMParams& p, std::span<const LabeledInput> batch) {
    if (batch.empty()) throw Error("batch_nll: empty batch");
    std::vector<LMExample> ex;
    ex.reserve(batch.size());
    for (const auto& b : batch) {
        if (b.label.empty()) throw Error("nll_loss: empty target");
        ex.push_back({b.input, b.label.first(b.label.size() - 1)});
    }
    const auto logits = forward_batch(p, ex);
    std::vector<nn::Tensor> losses;
    losses.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) losses.push_back(nll_loss(logits[i], batch[i].label));
    return batch.size() == 1 ? losses[0] : nn::mean_of(losses);
}

std::vector<std::vector<double>> continuation_logprobs(const LMParams& p, const InputSequence& input,
                                                       std::span<const std::vector<TokenId>> continuations) {
    const std::size_t P = input.size() + 1;
    std::size_t C = 0;
    for (const auto& c : continuations) {
        if (c.empty()) throw Error("continuation_logprobs: empty continuation");
        C = std::max(C, c.size() - 1);
        for (TokenId t : c) {
            if (t >= p.config.vocab_size) throw Error("continuation_logprobs: token id out of range");
        }
    }
    if (P + C > p.config.max_positions) throw Error("continuation_logprobs: sequence exceeds max_positions");

    // Context pass, keeping per-layer keys and values.
    std::vector<std::uint32_t> ids, pos;
    bool uses_soft = false;
    for (const auto& tok : input) ids.push_back(encode_input(p, tok, uses_soft));
    ids.push_back(kAnswerSep);
    for (std::size_t i = 0; i < P; ++i) pos.push_back(static_cast<std::uint32_t>(i));
    nn::Tensor x = embed(p, ids, previous_ids(ids, P), pos, uses_soft);
    std::vector<nn::Tensor> ks, vs;
    for (std::size_t l = 0; l < p.config.n_layers; ++l) {
        const nn::Tensor h = norm(p, layer_name(l, "ln1"), x);
        ks.push_back(project(p, layer_name(l, "wk"), h));
        vs.push_back(project(p, layer_name(l, "wv"), h));
        const nn::Tensor a = nn::attention(project(p, layer_name(l, "wq"), h), ks.back(), vs.back(),
                                           {1, p.config.n_heads, P, P, true});
        x = nn::add(x, nn::linear(a, p.base.at(layer_name(l, "wo.w")), p.base.at(layer_name(l, "wo.b"))));
        x = feed_forward(p, l, x);
    }
    const nn::Tensor& tok = p.base.at("tok_emb");
    const nn::Tensor last = nn::matmul_nt(norm(p, "final_ln", nn::slice_rows(x, P - 1, 1)), tok);
    const auto first_lp = nn::log_softmax_row(last.value());

    std::vector<std::vector<double>> out(continuations.size());
    for (std::size_t c = 0; c < continuations.size(); ++c) out[c].push_back(first_lp[continuations[c][0]]);
    if (C == 0) return out;

    // Continuation pass over all candidates at once, attending to the cached context.
    const std::size_t B = continuations.size();
    std::vector<std::uint32_t> cids(B * C, kPadTok), cprev(B * C, kPadTok), cpos(B * C);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& c = continuations[b];
        cprev[b * C] = kAnswerSep;
        for (std::size_t t = 0; t + 1 < c.size(); ++t) cids[b * C + t] = c[t];
        for (std::size_t t = 1; t < C; ++t) cprev[b * C + t] = cids[b * C + t - 1];
        for (std::size_t t = 0; t < C; ++t) cpos[b * C + t] = static_cast<std::uint32_t>(P + t);
    }
    nn::Tensor y = embed(p, cids, cprev, cpos, false);
    for (std::size_t l = 0; l < p.config.n_layers; ++l) {
        const nn::Tensor h = norm(p, layer_name(l, "ln1"), y);
        const nn::Tensor k = project(p, layer_name(l, "wk"), h);
        const nn::Tensor v = project(p, layer_name(l, "wv"), h);
        std::vector<nn::Tensor> kparts, vparts;
        for (std::size_t b = 0; b < B; ++b) {
            kparts.push_back(ks[l]);
            kparts.push_back(nn::slice_rows(k, b * C, C));
            vparts.push_back(vs[l]);
            vparts.push_back(nn::slice_rows(v, b * C, C));
        }
        const nn::Tensor a = nn::attention(project(p, layer_name(l, "wq"), h), nn::concat_rows(kparts),
                                           nn::concat_rows(vparts), {B, p.config.n_heads, C, P + C, true});
        y = nn::add(y, nn::linear(a, p.base.at(layer_name(l, "wo.w")), p.base.at(layer_name(l, "wo.b"))));
        y = feed_forward(p, l, y);
    }
    const nn::Tensor logits = nn::matmul_nt(norm(p, "final_ln", y), tok);
    const std::size_t V = p.config.vocab_size;
    for (std::size_t b = 0; b < B; ++b) {
        const auto& c = continuations[b];
        for (std::size_t t = 1; t < c.size(); ++t) {
            const auto lp = nn::log_softmax_row(logits.value().subspan((b * C + t - 1) * V, V));
            out[b].push_back(lp[c[t]]);
        }
    }
    return out;
}

Partition parse_partition(std::string_view name) {
    if (name == "soft-only") return Partition::soft_only;
    if (name == "adapters-only") return Partition::adapters_only;
    if (name == "soft+base") return Partition::soft_base;
    if (name == "soft+adapters") return Partition::soft_adapters;
    if (name == "all") return Partition::all;
    throw Error("unknown partition '" + std::string(name) + "'");
}

std::string_view partition_name(Partition p) {
    switch (p) {
        case Partition::soft_only: return "soft-only";
        case Partition::adapters_only: return "adapters-only";
        case Partition::soft_base: return "soft+base";
        case Partition::soft_adapters: return "soft+adapters";
        case Partition::all: return "all";
    }
    return "?";
}

namespace {

bool has_soft(Partition p) { return p != Partition::adapters_only; }
bool has_base(Partition p) { return p == Partition::soft_base || p == Partition::all; }
bool has_adapters(Partition p) {
    return p == Partition::adapters_only || p == Partition::soft_adapters || p == Partition::all;
}

}  // namespace

void set_frozen(LMParams& p) {
    p.base.set_requires_grad(false);
    p.base.zero_grad();
    if (!p.soft.empty()) {
        p.soft.matrix().set_requires_grad(false);
        p.soft.matrix().zero_grad();
    }
    if (p.adapters) {
        p.adapters->params().set_requires_grad(false);
        p.adapters->params().zero_grad();
    }
}

void set_trainable(LMParams& p, Partition part) {
    set_frozen(p);
    if (has_soft(part) && !p.soft.empty()) p.soft.matrix().set_requires_grad(true);
    if (has_base(part)) p.base.set_requires_grad(true);
    if (has_adapters(part) && p.adapters) p.adapters->params().set_requires_grad(true);
}

std::vector<nn::Tensor> trainable_tensors(LMParams& p, Partition part) {
    std::vector<nn::Tensor> out;
    if (has_base(part)) out.insert(out.end(), p.base.tensors().begin(), p.base.tensors().end());
    if (has_soft(part) && !p.soft.empty()) out.push_back(p.soft.matrix());
    if (has_adapters(part) && p.adapters) {
        out.insert(out.end(), p.adapters->params().tensors().begin(), p.adapters->params().tensors().end());
    }
    return out;
}

std::map<std::string, std::vector<double>> grads(LMParams& p, const std::function<nn::Tensor()>& loss,
                                                 Partition part) {
    set_trainable(p, part);
    nn::backward(loss());
    std::map<std::string, std::vector<double>> out;
    const auto take = [&](const std::string& key, const nn::Tensor& t) {
        if (t.has_grad()) out.emplace(key, std::vector<double>(t.grad().begin(), t.grad().end()));
    };
    if (has_base(part)) {
        for (std::size_t i = 0; i < p.base.size(); ++i) take("base/" + p.base.names()[i], p.base.tensors()[i]);
    }
    if (has_soft(part) && !p.soft.empty()) take("soft/bank", p.soft.matrix());
    if (has_adapters(part) && p.adapters) {
        const auto& ap = p.adapters->params();
        for (std::size_t i = 0; i < ap.size(); ++i) take("adapters/" + ap.names()[i], ap.tensors()[i]);
    }
    set_frozen(p);
    return out;
}

void LMParams::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    binio::write_magic(os, kModelMagic);
    binio::write_u32(os, 1);
    binio::write_string(os, config.canonical());
    binio::write_string(os, "base");
    base.write(os);
    binio::write_string(os, "soft");
    soft.write(os);
    binio::write_string(os, "adapters");
    binio::write_u32(os, adapters ? 1 : 0);
    if (adapters) adapters->write(os);
}

LMParams LMParams::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string());
    binio::expect_magic(is, kModelMagic);
    if (binio::read_u32(is) != 1) throw Error("model file: unsupported version");
    LMConfig c;
    std::istringstream cs(binio::read_string(is));
    std::string line;
    while (std::getline(cs, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("model file: malformed config line");
        const std::string key = line.substr(0, eq);
        const auto value = std::stoull(line.substr(eq + 1));
        if (key == "d_model") c.d_model = value;
        else if (key == "n_layers") c.n_layers = value;
        else if (key == "n_heads") c.n_heads = value;
        else if (key == "ffn_dim") c.ffn_dim = value;
        else if (key == "max_positions") c.max_positions = value;
        else if (key == "vocab_size") c.vocab_size = value;
        else if (key == "seed") c.seed = value;
        else throw Error("model file: unknown config key " + key);
    }
    LMParams p = LMParams::init(c);
    const auto section = [&](std::string_view name) {
        if (binio::read_string(is) != name) throw Error("model file: expected section " + std::string(name));
    };
    section("base");
    p.base.read(is);
    section("soft");
    p.soft = SoftPromptBank::read(is);
    section("adapters");
    if (binio::read_u32(is) != 0) p.adapters = AdapterSet::read(is);
    return p;
}

}  // namespace delrec::tinylm
