// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian binary framing shared by every checkpoint format:
// u32/u64 integers, length-prefixed UTF-8 strings, and f32 blobs.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace delrec::binio {

void write_magic(std::ostream& os, std::string_view magic);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_string(std::ostream& os, std::string_view s);
// Values are narrowed to float32.
void write_f32(std::ostream& os, std::span<const double> values);

void expect_magic(std::istream& is, std::string_view magic);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::string read_string(std::istream& is);
std::vector<double> read_f32(std::istream& is, std::size_t count);

// Rounds each value to the nearest float32, the precision files store.
void round_to_f32(std::span<double> values);

}  // namespace delrec::binio
