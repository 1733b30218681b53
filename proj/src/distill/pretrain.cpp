// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>

#include "delrec/distill/distill.hpp"
#include "delrec/nn/ops.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::distill {

using catalog::ItemIndex;
using catalog::kPadItem;

std::string PretrainConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "steps=" << steps << "\nbatch_size=" << batch_size << "\nlearning_rate=" << learning_rate
       << "\nwarmup_steps=" << warmup_steps << "\nrecall_queries=" << recall_queries
       << "\ncurriculum_steps=" << curriculum_steps << "\ncontext_ramp_steps=" << context_ramp_steps << "\nseed=" << seed << "\n";
    return os.str();
}

PretrainEpisode pretrain_episode(const prompting::Renderer& renderer, std::uint64_t seed, std::uint64_t index,
                                 std::size_t recall_queries, std::size_t max_pairs, double full_prompt_share) {
    const auto& cfg = renderer.config();
    const auto universe = renderer.universe();
    const std::size_t min_len = cfg.alpha + 2;
    if (universe.size() < 2) throw Error("pretrain: the item universe is too small");
    if (cfg.soft_mode != prompting::TemplateConfig::SoftMode::bank) {
        throw Error("pretrain: the template must carry a soft-prompt section");
    }

    Rng rng = Rng::substream(seed, "distill.pretrain", index);
    const std::size_t n = min_len + rng.uniform_index(cfg.history_length - min_len + 1);
    const std::size_t s_hi = std::min(universe.size(), cfg.k);
    const std::size_t s_lo = std::min(n + 1, s_hi);
    const std::size_t s = s_lo + rng.uniform_index(s_hi - s_lo + 1);

    // The first s shuffled items form the cycle pool[i] -> pool[i + 1].
    std::vector<ItemIndex> pool(universe.begin(), universe.end());
    rng.shuffle(pool);
    const std::size_t start = rng.uniform_index(s);

    catalog::SeqExample e;
    e.id = index;
    e.history.assign(cfg.history_length - n, kPadItem);
    for (std::size_t j = 0; j < n; ++j) e.history.push_back(pool[(start + j) % s]);
    e.target = pool[(start + n) % s];

    prompting::RenderedPrompt p;
    switch (rng.uniform_index(3)) {
        case 0:
            p = *renderer.render_ta(e);
            break;
        case 1: {
            static const char* kArchs[] = {"sasrec", "gru4rec", "caser"};
            teachers::TeacherTopH top;
            top.example_id = e.id;
            top.arch = kArchs[rng.uniform_index(3)];
            top.items.push_back(e.target);
            std::vector<ItemIndex> others;
            for (ItemIndex it : universe) {
                if (it != e.target) others.push_back(it);
            }
            rng.shuffle(others);
            for (std::size_t i = 0; i + 1 < cfg.h && i < others.size(); ++i) top.items.push_back(others[i]);
            for (std::size_t i = 0; i < top.items.size(); ++i) top.scores.push_back(1.0 / static_cast<double>(i + 1));
            p = renderer.render_rps(e, top);
            break;
        }
        default:
            p = renderer.render_lsr(e);
    }

    // Candidate pairs: the cycle, then distractors over items outside it. The
    // pair ending at the answer always makes it into a slot.
    std::vector<std::pair<ItemIndex, ItemIndex>> cand;
    for (std::size_t i = 0; i < s; ++i) cand.emplace_back(pool[i], pool[(i + 1) % s]);
    for (std::size_t i = s; i < pool.size(); ++i) {
        ItemIndex next = pool[rng.uniform_index(pool.size())];
        if (next == pool[i]) next = pool[(i + 1 + rng.uniform_index(pool.size() - 1)) % pool.size()];
        cand.emplace_back(pool[i], next);
    }
    const std::size_t needed = static_cast<std::size_t>(
        std::find_if(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(s),
                     [&](const auto& pr) { return pr.second == p.label_item; }) -
        cand.begin());
    if (needed == s) throw Error("pretrain: the answer is not on the cycle");
    std::swap(cand[0], cand[needed]);
    std::vector<std::pair<ItemIndex, ItemIndex>> rest(cand.begin() + 1, cand.end());
    rng.shuffle(rest);
    const std::size_t cap = std::max<std::size_t>(1, std::min({cand.size(), cfg.k, max_pairs ? max_pairs : cfg.k}));
    cand.resize(1);
    cand.insert(cand.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(cap - 1));
    rng.shuffle(cand);

    // Unfilled slots are dropped from the prompt.
    std::erase_if(p.segments, [&](const prompting::PromptSegment& seg) {
        return seg.kind == prompting::PromptSegment::Kind::soft_slot && seg.slot >= cand.size();
    });
    if (rng.uniform01() >= full_prompt_share) {
        std::erase_if(p.segments, [](const prompting::PromptSegment& seg) {
            return seg.section != prompting::Section::soft_prompts && seg.section != prompting::Section::prediction;
        });
    }

    PretrainEpisode out;
    out.pairs.assign(cfg.k, {kPadItem, kPadItem});
    std::copy(cand.begin(), cand.end(), out.pairs.begin());
    out.item = TrainItem{p.example_id, p.input(), p.label_tokens};
    out.targets = p.label_tokens;
    for (std::size_t q = 0; q < recall_queries; ++q) {
        const auto& [a, b] = cand[rng.uniform_index(cand.size())];
        out.item.label.push_back(renderer.title_tokens(a).front());
        out.targets.push_back(tinylm::kPadTok);
        out.item.label.push_back(renderer.title_tokens(b).front());
        out.targets.push_back(out.item.label.back());
    }
    return out;
}

double pretrain_base(tinylm::LMParams& params, const prompting::Renderer& renderer, const PretrainConfig& config,
                     const std::function<void(std::size_t, double)>& progress) {
    if (config.batch_size == 0) throw Error("pretrain: batch_size must be positive");
    const std::size_t d = params.config.d_model;
    const std::size_t k = renderer.config().k;
    tinylm::set_frozen(params);
    params.base.set_requires_grad(true);

    Rng init = Rng::substream(config.seed, "distill.pair_proj");
    std::vector<double> w(d * d);
    for (double& v : w) v = init.normal() / std::sqrt(static_cast<double>(d));
    nn::Tensor pair_proj = nn::Tensor::parameter(d, d, std::move(w));
    pair_proj.set_requires_grad(true);

    std::vector<nn::Tensor> weights = params.base.tensors();
    weights.push_back(pair_proj);
    nn::Adam opt(weights, nn::AdamOptions{config.learning_rate});
    const nn::Tensor& tok_emb = params.base.at("tok_emb");

    std::vector<double> tail;
    for (std::size_t step = 0; step < config.steps; ++step) {
        const double warm =
            config.warmup_steps ? std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps))
                                : 1.0;
        opt.set_lr(config.learning_rate * warm);

        const std::size_t max_pairs = config.curriculum_steps ? 2 + step / config.curriculum_steps : 0;
        const double share = config.context_ramp_steps ? std::min(1.0, static_cast<double>(step) /
                                                                       static_cast<double>(config.context_ramp_steps))
                                                      : 1.0;

        // One bank of batch_size * k rows; example i owns rows i*k .. i*k+k-1.
        std::vector<PretrainEpisode> batch;
        std::vector<std::uint32_t> keys, values;
        std::vector<double> present;
        for (std::size_t i = 0; i < config.batch_size; ++i) {
            PretrainEpisode ep = pretrain_episode(renderer, config.seed, step * config.batch_size + i,
                                                  config.recall_queries, max_pairs, share);
            for (auto& tok : ep.item.input) {
                if (tok.soft) tok.id += static_cast<std::uint32_t>(i * k);
            }
            for (const auto& [a, b] : ep.pairs) {
                const bool used = a != kPadItem;
                keys.push_back(used ? renderer.title_tokens(a).front() : tinylm::kPadTok);
                values.push_back(used ? renderer.title_tokens(b).front() : tinylm::kPadTok);
                present.push_back(used ? 1.0 : 0.0);
            }
            batch.push_back(std::move(ep));
        }
        const nn::Tensor bank = nn::mask_rows(
            nn::add(nn::gather_rows(tok_emb, keys), nn::matmul_nt(nn::gather_rows(tok_emb, values), pair_proj)),
            present);
        tinylm::LMParams view{params.config, params.base, tinylm::SoftPromptBank{}, std::nullopt};
        view.soft.matrix() = bank;

        std::vector<tinylm::LMExample> in;
        for (const auto& b : batch) {
            in.push_back({&b.item.input, std::span(b.item.label).first(b.item.label.size() - 1)});
        }
        const auto logits = tinylm::forward_batch(view, in);
        std::vector<nn::Tensor> losses;
        for (std::size_t i = 0; i < batch.size(); ++i) losses.push_back(tinylm::nll_loss(logits[i], batch[i].targets));
        const nn::Tensor loss = nn::mean_of(losses);
        if (!std::isfinite(loss.item())) {
            tinylm::set_frozen(params);
            throw Error("pretrain: non-finite loss at step " + std::to_string(step));
        }
        nn::backward(loss);
        const double norm = nn::grad_norm(weights);
        if (norm > 1.0) {
            for (auto& t : weights) {
                for (double& g : t.grad()) g /= norm;
            }
        }
        opt.step();
        opt.zero_grad();

        tail.push_back(loss.item());
        if (tail.size() > 50) tail.erase(tail.begin());
        if (progress) progress(step, loss.item());
    }
    tinylm::set_frozen(params);
    params.base.round_to_f32();
    double sum = 0.0;
    for (double v : tail) sum += v;
    return tail.empty() ? 0.0 : sum / static_cast<double>(tail.size());
}

}  // namespace delrec::distill
