// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>
#include <sstream>

#include "delrec/prompting/prompt.hpp"
#include "delrec/util/error.hpp"
#include "doctest.h"

using namespace delrec;
using namespace delrec::prompting;
using catalog::kPadItem;

namespace {

struct Fixture {
    catalog::ItemCatalog cat;
    tinylm::Vocab vocab;
    std::vector<ItemIndex> universe;

    explicit Fixture(std::size_t items = 40) {
        for (std::size_t i = 1; i <= items; ++i) {
            cat.raw_ids.push_back(std::to_string(i));
            cat.titles.push_back("i" + std::to_string(i));
            universe.push_back(static_cast<ItemIndex>(i));
        }
        cat.titles[21] = "A Very Long Title With Many Words That Goes On And On Forever More";
        std::vector<std::string> corpus(cat.titles.begin() + 1, cat.titles.end());
        const auto extra = template_corpus(TemplateConfig{});
        corpus.insert(corpus.end(), extra.begin(), extra.end());
        vocab = tinylm::Vocab::build(corpus, 1000);
    }

    Renderer renderer(TemplateConfig c = {}) const { return Renderer(vocab, cat, universe, c); }
};

catalog::SeqExample example(std::vector<ItemIndex> history, ItemIndex target, std::uint64_t id = 7) {
    catalog::SeqExample e;
    e.id = id;
    e.history = std::move(history);
    e.target = target;
    return e;
}

std::string text_of(const RenderedPrompt& p, const tinylm::Vocab& v) {
    std::string s;
    for (const auto& seg : p.segments) {
        if (seg.kind == PromptSegment::Kind::soft_slot) {
            s += " [S" + std::to_string(seg.slot) + "]";
            continue;
        }
        for (auto t : seg.tokens) s += " " + v.token(t);
    }
    return s;
}

std::string section_text(const RenderedPrompt& p, Section s, const tinylm::Vocab& v) {
    std::string out;
    for (const auto& seg : p.segments) {
        if (seg.section != s || seg.kind != PromptSegment::Kind::hard) continue;
        for (auto t : seg.tokens) out += (out.empty() ? "" : " ") + v.token(t);
    }
    return out;
}

void check_structure(const RenderedPrompt& p, std::size_t k) {
    for (std::size_t i = 1; i < p.segments.size(); ++i) CHECK(p.segments[i - 1].section <= p.segments[i].section);
    CHECK(p.segments.front().section == Section::instruction);
    CHECK(p.segments.back().section == Section::prediction);
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < p.segments.size(); ++i) {
        if (p.segments[i].kind == PromptSegment::Kind::soft_slot) pos.push_back(i);
    }
    REQUIRE(pos.size() == k);
    for (std::size_t j = 0; j < pos.size(); ++j) {
        CHECK(p.segments[pos[j]].slot == j);
        if (j) CHECK(pos[j] == pos[j - 1] + 1);
    }
    CHECK_FALSE(p.label_tokens.empty());
}

}  // namespace

TEST_CASE("TA prompt for a nine-item history with alpha = 4") {
    const Fixture f;
    TemplateConfig c;
    c.k = 3;
    const auto r = f.renderer(c);
    const auto e2 = example({kPadItem, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 10);
    RenderStats st;
    const auto p = r.render_ta(e2, &st);
    REQUIRE(p);
    CHECK(st.rendered == 1);
    CHECK(p->task == Task::ta);
    CHECK(section_text(*p, Section::sequence, f.vocab) ==
          "example : after i1 , i2 , i3 comes i4 . history : i4 , i5 , i6 , i7 , <mask> , then i9");
    CHECK(p->label_item == 8);
    CHECK(f.vocab.decode(p->label_tokens) == "i8");
    CHECK(p->candidates.size() == 15);
    CHECK(std::count(p->candidates.begin(), p->candidates.end(), ItemIndex{8}) == 1);
    for (ItemIndex it : p->candidates) {
        if (it != 8) CHECK(it > 9);
    }
    check_structure(*p, 3);
    CHECK(section_text(*p, Section::prediction, f.vocab) == "the hidden item comes right after i7");

    const auto again = r.render_ta(e2);
    CHECK(again->input() == p->input());
}

TEST_CASE("TA boundaries: alpha = 2 and too-short histories") {
    const Fixture f;
    TemplateConfig c;
    c.k = 2;
    c.alpha = 2;
    const auto r = f.renderer(c);
    const auto p = r.render_ta(example({kPadItem, kPadItem, kPadItem, kPadItem, kPadItem, kPadItem, 1, 2, 3, 4}, 5));
    REQUIRE(p);
    CHECK(section_text(*p, Section::sequence, f.vocab) == "example : after i1 comes i2 . history : i2 , <mask> , then i4");
    CHECK(p->label_item == 3);

    RenderStats st;
    const auto skipped = r.render_ta(example({kPadItem, kPadItem, kPadItem, kPadItem, kPadItem, kPadItem, kPadItem, 1, 2, 3}, 4), &st);
    CHECK_FALSE(skipped);
    CHECK(st.skipped_short_history == 1);
    CHECK(st.rendered == 0);

    TemplateConfig bad;
    bad.alpha = 1;
    CHECK_THROWS_AS(f.renderer(bad), Error);
    bad.alpha = 9;
    CHECK_THROWS_AS(f.renderer(bad), Error);
}

TEST_CASE("RPS prompt lists the teacher's top-h shuffled and names the teacher") {
    const Fixture f;
    TemplateConfig c;
    c.k = 4;
    const auto r = f.renderer(c);
    const auto e = example({kPadItem, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 10);
    teachers::TeacherTopH top;
    top.example_id = 7;
    top.arch = "gru4rec";
    top.items = {8, 3, 5};
    top.scores = {0.5, 0.3, 0.2};
    const auto p = r.render_rps(e, top);
    CHECK(p.label_item == 8);
    CHECK(std::set<ItemIndex>(p.candidates.begin(), p.candidates.end()) == std::set<ItemIndex>{3, 5, 8});
    CHECK(section_text(p, Section::instruction, f.vocab).find("gru4rec") != std::string::npos);
    CHECK(section_text(p, Section::sequence, f.vocab) == "history : i1 , i2 , i3 , i4 , i5 , i6 , i7 , i8 , i9");
    check_structure(p, 4);
    CHECK(r.render_rps(e, top).candidates == p.candidates);

    // Shuffles differ across examples but are fixed per example.
    std::set<std::vector<ItemIndex>> orders;
    for (std::uint64_t id = 0; id < 20; ++id) {
        auto t = top;
        t.example_id = id;
        orders.insert(r.render_rps(example(e.history, 10, id), t).candidates);
    }
    CHECK(orders.size() > 1);

    top.items = {8};
    const auto one = r.render_rps(e, top);
    CHECK(one.candidates == std::vector<ItemIndex>{8});
    top.example_id = 99;
    CHECK_THROWS_AS(r.render_rps(e, top), Error);
}

TEST_CASE("LSR prompt, its ablation forms and the empty-history sentinel") {
    const Fixture f;
    TemplateConfig c;
    c.k = 5;
    const auto r = f.renderer(c);
    const auto e = example({kPadItem, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 10);
    const auto p = r.render_lsr(e);
    CHECK(p.candidates.size() == 15);
    CHECK(std::count(p.candidates.begin(), p.candidates.end(), ItemIndex{10}) == 1);
    CHECK(p.label_item == 10);
    check_structure(p, 5);
    CHECK(section_text(p, Section::soft_prompts, f.vocab) == "treat the following more as a reference :");

    TemplateConfig none = c;
    none.soft_mode = TemplateConfig::SoftMode::none;
    const auto q = f.renderer(none).render_lsr(e);
    CHECK(q.soft_slot_count() == 0);
    CHECK(section_text(q, Section::soft_prompts, f.vocab).empty());
    CHECK(text_of(q, f.vocab).find("reference") == std::string::npos);

    TemplateConfig manual = c;
    manual.soft_mode = TemplateConfig::SoftMode::manual;
    const auto mp = f.renderer(manual).render_lsr(e);
    CHECK(mp.soft_slot_count() == 0);
    CHECK(section_text(mp, Section::soft_prompts, f.vocab).find("self - attention") != std::string::npos);

    const auto cold = r.render_lsr(example(std::vector<ItemIndex>(10, kPadItem), 3));
    CHECK(section_text(cold, Section::sequence, f.vocab) == "history : no prior interactions");

    catalog::CandidateSet wrong{{1, 2, 3}, 0};
    CHECK_THROWS_AS(r.render_lsr(e, wrong), Error);
}

TEST_CASE("title truncation, overflow counting and dumps") {
    const Fixture f;
    TemplateConfig c;
    c.k = 2;
    const auto r = f.renderer(c);
    const auto& t = r.title_tokens(21);
    REQUIRE(t.size() == 13);
    CHECK(f.vocab.token(t.back()) == "\xe2\x80\xa6");
    CHECK(r.title_tokens(3).size() == 1);

    const auto e = example({kPadItem, 1, 2, 3, 4, 5, 6, 7, 8, 21}, 10);
    std::vector<RenderedPrompt> ps = {r.render_lsr(e), *r.render_ta(e)};
    const std::size_t longest = std::max(ps[0].forward_length(), ps[1].forward_length());
    CHECK(count_overflow(ps, longest) == 0);
    CHECK(count_overflow(ps, longest - 1) >= 1);
    CHECK(count_overflow(ps, 1) == 2);

    std::ostringstream text, ids;
    write_dump(text, ids, ps, f.vocab);
    CHECK(text.str().find("\xe2\x9f\xa8SOFT:0\xe2\x9f\xa9 \xe2\x9f\xa8SOFT:1\xe2\x9f\xa9") != std::string::npos);
    CHECK(text.str().rfind("7\tlsr\t", 0) == 0);
    CHECK(ids.str().find(" s0 s1 ") != std::string::npos);

    TemplateConfig other = c;
    CHECK(other.hash() == c.hash());
    other.strings.lsr_prediction = "Next:";
    CHECK(other.hash() != c.hash());
}
