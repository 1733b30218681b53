// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace delrec::tinylm {

using TokenId = std::uint32_t;

inline constexpr TokenId kPadTok = 0;
inline constexpr TokenId kMaskTok = 1;
inline constexpr TokenId kAnswerSep = 2;
inline constexpr TokenId kUnkTok = 3;
inline constexpr std::size_t kReservedTokens = 4;

// Lowercases ASCII, splits on whitespace and makes every ASCII punctuation
// character its own token. Bytes >= 0x80 are word characters.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
public:
    // Word-level vocabulary, most frequent first (ties by byte order), with
    // the reserved tokens at ids 0..3. `max_size` counts the reserved ids.
    static Vocab build(std::span<const std::string> corpus, std::size_t max_size);

    std::size_t size() const { return tokens_.size(); }
    TokenId id(std::string_view token) const;  // kUnkTok when absent
    const std::string& token(TokenId id) const;
    bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

    std::vector<TokenId> encode(std::string_view text) const;
    // Space-joined tokens.
    std::string decode(std::span<const TokenId> ids) const;

    std::string sha256() const;
    // One token per line.
    void write(std::ostream& os) const;
    static Vocab read(std::istream& is);

private:
    void push(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace delrec::tinylm
