// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/prompting/prompt.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::prompting {
namespace {

std::string fill(const std::string& text, std::string_view teacher) {
    std::string out = text;
    const std::string key = "{teacher}";
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + teacher.size())) {
        out.replace(pos, key.size(), teacher);
    }
    return out;
}

constexpr std::string_view kAnchor = "{anchor}";

std::string without_anchor(std::string text) {
    for (auto pos = text.find(kAnchor); pos != std::string::npos; pos = text.find(kAnchor)) text.erase(pos, kAnchor.size());
    return text;
}

}  // namespace

std::string_view task_name(Task t) {
    switch (t) {
        case Task::ta: return "ta";
        case Task::rps: return "rps";
        case Task::lsr: return "lsr";
    }
    return "?";
}

tinylm::InputSequence RenderedPrompt::input() const {
    tinylm::InputSequence in;
    in.reserve(input_length());
    for (const auto& s : segments) {
        if (s.kind == PromptSegment::Kind::soft_slot) {
            in.push_back(tinylm::InputToken::slot(s.slot));
        } else {
            for (TokenId t : s.tokens) in.push_back(tinylm::InputToken::hard_token(t));
        }
    }
    return in;
}

std::size_t RenderedPrompt::input_length() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.kind == PromptSegment::Kind::soft_slot ? 1 : s.tokens.size();
    return n;
}

std::size_t RenderedPrompt::soft_slot_count() const {
    return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](const PromptSegment& s) {
        return s.kind == PromptSegment::Kind::soft_slot;
    }));
}

void TemplateConfig::validate() const {
    if (alpha < 2 || alpha + 2 > history_length) {
        throw Error("template: alpha must satisfy 1 < alpha < history_length - 1");
    }
    if (k == 0) throw Error("template: k must be positive");
    if (m == 0) throw Error("template: m must be positive");
    if (h == 0) throw Error("template: h must be >= 1");
    if (max_title_tokens == 0) throw Error("template: max_title_tokens must be positive");
}

std::string TemplateConfig::canonical() const {
    std::ostringstream os;
    const auto& s = strings;
    os << "version=1\nalpha=" << alpha << "\nk=" << k << "\nm=" << m << "\nh=" << h
       << "\nhistory_length=" << history_length << "\nmax_title_tokens=" << max_title_tokens
       << "\nteacher=" << teacher_name << "\nseed=" << seed << "\nsoft_mode=" << static_cast<int>(soft_mode) << '\n';
    for (const std::string* t : {&s.ta_instruction, &s.ta_demo, &s.ta_demo_next, &s.ta_history, &s.ta_then,
                                 &s.rps_instruction, &s.lsr_instruction, &s.history, &s.no_history, &s.candidates,
                                 &s.reference, &s.lsr_reference, &s.ta_prediction, &s.rps_prediction,
                                 &s.lsr_prediction, &s.ellipsis, &s.manual_reference}) {
        os << *t << '\n';
    }
    return os.str();
}

std::string TemplateConfig::hash() const { return sha256_hex(canonical()); }

std::vector<std::string> template_corpus(const TemplateConfig& config) {
    const auto& s = config.strings;
    std::vector<std::string> out = {s.ta_instruction, s.ta_demo,    s.ta_demo_next,  s.ta_history,     s.ta_then,
                                    s.lsr_instruction, s.history,   s.no_history,    s.candidates,     s.reference,
                                    s.lsr_reference,   without_anchor(s.ta_prediction), without_anchor(s.lsr_prediction),
                                    s.ellipsis,        ","};
    for (const auto& arch : {"sasrec", "gru4rec", "caser"}) {
        out.push_back(fill(s.rps_instruction, arch));
        out.push_back(without_anchor(fill(s.rps_prediction, arch)));
        out.push_back(fill(s.manual_reference, arch));
    }
    return out;
}

Renderer::Renderer(const tinylm::Vocab& vocab, const catalog::ItemCatalog& catalog, std::vector<ItemIndex> universe,
                   TemplateConfig config)
    : vocab_(&vocab), catalog_(&catalog), universe_(std::move(universe)), config_(std::move(config)) {
    config_.validate();
    titles_.resize(catalog.titles.size());
    const TokenId ellipsis = vocab.id(config_.strings.ellipsis);
    for (std::size_t i = 1; i < catalog.titles.size(); ++i) {
        auto ids = vocab.encode(catalog.titles[i]);
        if (ids.size() > config_.max_title_tokens) {
            ids.resize(config_.max_title_tokens);
            ids.push_back(ellipsis);
        }
        titles_[i] = std::move(ids);
    }
}

const std::vector<TokenId>& Renderer::title_tokens(ItemIndex item) const {
    if (item == catalog::kPadItem || item >= titles_.size()) throw Error("render: item index out of range");
    return titles_[item];
}

void Renderer::append_text(RenderedPrompt& p, Section s, const std::string& text) const {
    PromptSegment seg;
    seg.section = s;
    seg.tokens = vocab_->encode(text);
    if (!p.segments.empty() && p.segments.back().kind == PromptSegment::Kind::hard && p.segments.back().section == s) {
        auto& prev = p.segments.back().tokens;
        prev.insert(prev.end(), seg.tokens.begin(), seg.tokens.end());
    } else {
        p.segments.push_back(std::move(seg));
    }
}

void Renderer::append_items(RenderedPrompt& p, Section s, std::span<const ItemIndex> items) const {
    const TokenId comma = vocab_->id(",");
    std::vector<TokenId> ids;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) ids.push_back(comma);
        const auto& t = title_tokens(items[i]);
        ids.insert(ids.end(), t.begin(), t.end());
    }
    if (!p.segments.empty() && p.segments.back().kind == PromptSegment::Kind::hard && p.segments.back().section == s) {
        auto& prev = p.segments.back().tokens;
        prev.insert(prev.end(), ids.begin(), ids.end());
    } else {
        PromptSegment seg;
        seg.section = s;
        seg.tokens = std::move(ids);
        p.segments.push_back(std::move(seg));
    }
}

void Renderer::append_soft(RenderedPrompt& p, const std::string& lead) const {
    append_text(p, Section::soft_prompts, lead);
    for (std::uint32_t j = 0; j < config_.k; ++j) {
        PromptSegment seg;
        seg.kind = PromptSegment::Kind::soft_slot;
        seg.section = Section::soft_prompts;
        seg.slot = j;
        p.segments.push_back(std::move(seg));
    }
}

void Renderer::append_cue(RenderedPrompt& p, const std::string& text, ItemIndex anchor) const {
    const auto pos = text.find(kAnchor);
    if (pos == std::string::npos) {
        append_text(p, Section::prediction, text);
        return;
    }
    append_text(p, Section::prediction, text.substr(0, pos));
    if (anchor == catalog::kPadItem) {
        append_text(p, Section::prediction, config_.strings.no_history);
    } else {
        const ItemIndex one[] = {anchor};
        append_items(p, Section::prediction, one);
    }
    append_text(p, Section::prediction, text.substr(pos + kAnchor.size()));
}

void Renderer::set_label(RenderedPrompt& p, ItemIndex item) const {
    p.label_item = item;
    p.label_tokens = title_tokens(item);
    if (p.label_tokens.empty()) throw Error("render: item " + catalog_->raw_id(item) + " has an empty title");
}

std::optional<RenderedPrompt> Renderer::render_ta(const catalog::SeqExample& example, RenderStats* stats) const {
    const auto items = example.real_history();  // I_1 .. I_{n-1}
    const std::size_t a = config_.alpha;
    if (items.size() < a + 2) {
        if (stats) ++stats->skipped_short_history;
        return std::nullopt;
    }
    const std::size_t n1 = items.size();  // index of I_{n-1} is n1-1 (0-based)
    const ItemIndex masked = items[n1 - 2];
    RenderedPrompt p;
    p.example_id = example.id;
    p.task = Task::ta;
    const auto& s = config_.strings;
    append_text(p, Section::instruction, s.ta_instruction);

    append_text(p, Section::sequence, s.ta_demo);
    append_items(p, Section::sequence, std::span(items).first(a - 1));
    append_text(p, Section::sequence, s.ta_demo_next);
    append_items(p, Section::sequence, std::span(items).subspan(a - 1, 1));
    append_text(p, Section::sequence, ".");
    append_text(p, Section::sequence, s.ta_history);
    append_items(p, Section::sequence, std::span(items).subspan(a - 1, n1 - 2 - (a - 1)));
    auto& seq = p.segments.back().tokens;
    seq.push_back(vocab_->id(","));
    seq.push_back(tinylm::kMaskTok);
    append_text(p, Section::sequence, ", " + s.ta_then);
    append_items(p, Section::sequence, std::span(items).subspan(n1 - 1, 1));

    // The masked item is among the candidates; negatives avoid the whole history.
    const auto cand = catalog::sample_candidates_for(masked, items, universe_, config_.m, config_.seed, example.id,
                                                     "ta.candidates");
    append_text(p, Section::candidates, s.candidates);
    append_items(p, Section::candidates, cand.items);
    p.candidates = cand.items;

    append_soft(p, s.reference);
    append_cue(p, s.ta_prediction, items[n1 - 3]);
    set_label(p, masked);
    if (stats) ++stats->rendered;
    return p;
}

RenderedPrompt Renderer::render_rps(const catalog::SeqExample& example, const teachers::TeacherTopH& top) const {
    if (top.example_id != example.id) {
        throw Error("render_rps: teacher record " + std::to_string(top.example_id) + " does not match example " +
                    std::to_string(example.id));
    }
    if (top.items.empty()) throw Error("render_rps: empty teacher list");
    RenderedPrompt p;
    p.example_id = example.id;
    p.task = Task::rps;
    const auto& s = config_.strings;
    append_text(p, Section::instruction, fill(s.rps_instruction, top.arch));
    append_text(p, Section::sequence, s.history);
    const auto items = example.real_history();
    if (items.empty()) {
        append_text(p, Section::sequence, s.no_history);
    } else {
        append_items(p, Section::sequence, items);
    }
    std::vector<ItemIndex> shown = top.items;
    Rng rng = Rng::substream(config_.seed, "rps.shuffle", example.id);
    rng.shuffle(shown);
    append_text(p, Section::candidates, s.candidates);
    append_items(p, Section::candidates, shown);
    p.candidates = shown;
    append_soft(p, s.reference);
    append_cue(p, fill(s.rps_prediction, top.arch), items.empty() ? catalog::kPadItem : items.back());
    set_label(p, top.items.front());
    return p;
}

RenderedPrompt Renderer::render_lsr(const catalog::SeqExample& example, const catalog::CandidateSet& cand) const {
    if (cand.target_index >= cand.items.size() || cand.items[cand.target_index] != example.target) {
        throw Error("render_lsr: candidate set target does not match example " + std::to_string(example.id));
    }
    RenderedPrompt p;
    p.example_id = example.id;
    p.task = Task::lsr;
    const auto& s = config_.strings;
    append_text(p, Section::instruction, s.lsr_instruction);
    append_text(p, Section::sequence, s.history);
    const auto items = example.real_history();
    if (items.empty()) {
        append_text(p, Section::sequence, s.no_history);
    } else {
        append_items(p, Section::sequence, items);
    }
    append_text(p, Section::candidates, s.candidates);
    append_items(p, Section::candidates, cand.items);
    p.candidates = cand.items;
    switch (config_.soft_mode) {
        case TemplateConfig::SoftMode::bank: append_soft(p, s.lsr_reference); break;
        case TemplateConfig::SoftMode::manual:
            append_text(p, Section::soft_prompts, fill(s.manual_reference, config_.teacher_name));
            break;
        case TemplateConfig::SoftMode::none: break;
    }
    append_cue(p, s.lsr_prediction, items.empty() ? catalog::kPadItem : items.back());
    set_label(p, example.target);
    return p;
}

RenderedPrompt Renderer::render_lsr(const catalog::SeqExample& example) const {
    return render_lsr(example, catalog::sample_candidates(example, universe_, config_.m, config_.seed));
}

std::size_t count_overflow(std::span<const RenderedPrompt> prompts, std::size_t max_positions) {
    return static_cast<std::size_t>(std::count_if(prompts.begin(), prompts.end(), [&](const RenderedPrompt& p) {
        return p.forward_length() > max_positions;
    }));
}

void write_dump(std::ostream& text, std::ostream& ids, std::span<const RenderedPrompt> prompts,
                const tinylm::Vocab& vocab) {
    for (const auto& p : prompts) {
        text << p.example_id << '\t' << task_name(p.task) << '\t';
        ids << p.example_id << '\t' << task_name(p.task) << '\t';
        bool first = true;
        for (const auto& s : p.segments) {
            if (s.kind == PromptSegment::Kind::soft_slot) {
                text << (first ? "" : " ") << "\xe2\x9f\xa8SOFT:" << s.slot << "\xe2\x9f\xa9";
                ids << (first ? "" : " ") << 's' << s.slot;
                first = false;
                continue;
            }
            for (TokenId t : s.tokens) {
                text << (first ? "" : " ") << vocab.token(t);
                ids << (first ? "" : " ") << t;
                first = false;
            }
        }
        text << '\t' << vocab.decode(p.label_tokens) << '\n';
        ids << '\t';
        for (std::size_t i = 0; i < p.label_tokens.size(); ++i) ids << (i ? " " : "") << p.label_tokens[i];
        ids << '\n';
    }
}

}  // namespace delrec::prompting
