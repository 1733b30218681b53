// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/tinylm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>

#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"

namespace delrec::tinylm {
namespace {

constexpr const char* kReservedNames[kReservedTokens] = {"<pad>", "<mask>", "<ans>", "<unk>"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    const auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_space(c)) {
            flush();
        } else if (is_punct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    flush();
    return out;
}

void Vocab::push(std::string token) {
    index_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::string> corpus, std::size_t max_size) {
    if (corpus.empty()) throw Error("build_vocab: empty corpus");
    if (max_size < kReservedTokens) throw Error("build_vocab: max_size below the reserved token count");
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus) {
        for (auto& t : tokenize(text)) ++counts[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const char* r : kReservedNames) v.push(r);
    for (auto& [tok, n] : ranked) {
        if (v.size() >= max_size) break;
        if (!v.contains(tok)) v.push(tok);
    }
    return v;
}

TokenId Vocab::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkTok : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) throw Error("vocab: token id out of range");
    return tokens_[id];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) s.push_back(' ');
        s += token(ids[i]);
    }
    return s;
}

std::string Vocab::sha256() const {
    Sha256 h;
    for (const auto& t : tokens_) {
        h.update(t);
        h.update(std::string_view("\n"));
    }
    return h.hex_digest();
}

void Vocab::write(std::ostream& os) const {
    for (const auto& t : tokens_) os << t << '\n';
}

Vocab Vocab::read(std::istream& is) {
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
        if (v.contains(line)) throw Error("vocab file: duplicate token '" + line + "'");
        v.push(line);
    }
    if (v.size() < kReservedTokens) throw Error("vocab file: missing reserved tokens");
    for (std::size_t i = 0; i < kReservedTokens; ++i) {
        if (v.tokens_[i] != kReservedNames[i]) throw Error("vocab file: reserved tokens out of place");
    }
    return v;
}

}  // namespace delrec::tinylm
