// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Prompt templates for the three language-model tasks: temporal analysis (TA,
// recover a masked item), recommendation pattern simulating (RPS, reproduce
// a teacher's top recommendation) and next-item recommendation (LSR).
// Every prompt has five sections in this order: instruction, interaction
// sequence, candidate set, soft prompts, prediction cue.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "delrec/catalog/catalog.hpp"
#include "delrec/teachers/teacher.hpp"
#include "delrec/tinylm/model.hpp"

namespace delrec::prompting {

using catalog::ItemIndex;
using tinylm::TokenId;

enum class Task { ta, rps, lsr };
std::string_view task_name(Task t);

enum class Section : std::uint8_t { instruction, sequence, candidates, soft_prompts, prediction };

struct PromptSegment {
    enum class Kind { hard, soft_slot };
    Kind kind = Kind::hard;
    Section section = Section::instruction;
    std::vector<TokenId> tokens;  // hard
    std::uint32_t slot = 0;       // soft_slot
};

struct RenderedPrompt {
    std::uint64_t example_id = 0;
    Task task = Task::lsr;
    std::vector<PromptSegment> segments;
    std::vector<TokenId> label_tokens;
    ItemIndex label_item = catalog::kPadItem;
    std::vector<ItemIndex> candidates;  // in listed order

    tinylm::InputSequence input() const;
    std::size_t input_length() const;
    // Positions used by a teacher-forced forward pass: input, ANSWER_SEP, label[:-1].
    std::size_t forward_length() const { return input_length() + label_tokens.size(); }
    std::size_t soft_slot_count() const;
};

// Canonical English template text, version 1. Placeholders: {teacher} and,
// in the prediction cues, {anchor}: the item the answer follows (the last
// history item; for TA the item just before the mask).
struct TemplateStrings {
    std::string ta_instruction = "Given a viewing history in order with one item hidden, find the hidden item.";
    std::string ta_demo = "Example: after";
    std::string ta_demo_next = "comes";
    std::string ta_history = "History:";
    std::string ta_then = "then";
    std::string rps_instruction = "Predict the item that the {teacher} model recommends next for this user.";
    std::string lsr_instruction = "Predict the next item this user will interact with.";
    std::string history = "History:";
    std::string no_history = "no prior interactions";
    std::string candidates = "Candidates:";
    std::string reference = "Reference:";
    std::string lsr_reference = "Treat the following more as a reference:";
    std::string ta_prediction = "The hidden item comes right after {anchor}";
    std::string rps_prediction = "{teacher} recommends the item after {anchor}";
    std::string lsr_prediction = "The next item comes after {anchor}";
    std::string ellipsis = "\xe2\x80\xa6";
    // Hard-text replacement for the soft prompts (w_MCP ablation).
    std::string manual_reference =
        "Reference: the {teacher} model reads the history with self-attention and recommends the item that "
        "usually follows the most recent ones.";
};

struct TemplateConfig {
    std::size_t alpha = 4;
    std::size_t k = 80;
    std::size_t m = 15;
    std::size_t h = 5;
    std::size_t history_length = 10;
    std::size_t max_title_tokens = 12;
    std::string teacher_name = "sasrec";
    std::uint64_t seed = 1;
    // Soft-prompt section mode for LSR prompts.
    enum class SoftMode { bank, none, manual } soft_mode = SoftMode::bank;
    TemplateStrings strings;

    void validate() const;
    std::string canonical() const;
    std::string hash() const;
};

// Text fragments to seed the vocabulary with, besides item titles.
std::vector<std::string> template_corpus(const TemplateConfig& config);

struct RenderStats {
    std::size_t rendered = 0;
    std::size_t skipped_short_history = 0;
};

class Renderer {
public:
    Renderer(const tinylm::Vocab& vocab, const catalog::ItemCatalog& catalog, std::vector<ItemIndex> universe,
             TemplateConfig config);

    const TemplateConfig& config() const { return config_; }
    const tinylm::Vocab& vocab() const { return *vocab_; }
    const catalog::ItemCatalog& catalog() const { return *catalog_; }
    std::span<const ItemIndex> universe() const { return universe_; }

    // Title tokens, truncated to max_title_tokens plus an ellipsis token.
    const std::vector<TokenId>& title_tokens(ItemIndex item) const;

    // Returns nullopt (and counts the skip) when the history holds fewer than alpha+2 real items.
    std::optional<RenderedPrompt> render_ta(const catalog::SeqExample& example, RenderStats* stats = nullptr) const;
    RenderedPrompt render_rps(const catalog::SeqExample& example, const teachers::TeacherTopH& top) const;
    RenderedPrompt render_lsr(const catalog::SeqExample& example, const catalog::CandidateSet& candidates) const;
    // LSR with candidates drawn by catalog::sample_candidates(example, universe, m, seed).
    RenderedPrompt render_lsr(const catalog::SeqExample& example) const;

private:
    void append_text(RenderedPrompt& p, Section s, const std::string& text) const;
    void append_items(RenderedPrompt& p, Section s, std::span<const ItemIndex> items) const;
    void append_soft(RenderedPrompt& p, const std::string& lead) const;
    void append_cue(RenderedPrompt& p, const std::string& text, ItemIndex anchor) const;
    void set_label(RenderedPrompt& p, ItemIndex item) const;

    const tinylm::Vocab* vocab_;
    const catalog::ItemCatalog* catalog_;
    std::vector<ItemIndex> universe_;
    TemplateConfig config_;
    std::vector<std::vector<TokenId>> titles_;
};

// Prompts whose teacher-forced length exceeds `max_positions`.
std::size_t count_overflow(std::span<const RenderedPrompt> prompts, std::size_t max_positions);

// Debug dump: one line per prompt, `id \t task \t text \t label` with soft
// slots written as ⟨SOFT:j⟩; the sidecar holds `id \t task \t ids \t label ids`
// with slots as s<j>.
void write_dump(std::ostream& text, std::ostream& ids, std::span<const RenderedPrompt> prompts,
                const tinylm::Vocab& vocab);

}  // namespace delrec::prompting
