// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace delrec {

// Incremental SHA-256 (OpenSSL EVP underneath). Used for freeze checks,
// provenance ids and artifact addressing.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::uint8_t> bytes);
    Sha256& update(std::string_view text);
    Sha256& update(std::span<const double> values);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view text);

}  // namespace delrec
