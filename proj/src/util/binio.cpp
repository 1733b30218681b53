// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/util/binio.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "delrec/util/error.hpp"

namespace delrec::binio {
namespace {

void read_exact(std::istream& is, char* dst, std::size_t n) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw Error("binary read: unexpected end of file");
}

}  // namespace

void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void write_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void write_string(std::ostream& os, std::string_view s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_f32(std::ostream& os, std::span<const double> values) {
    for (double v : values) write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    read_exact(is, got.data(), got.size());
    if (got != magic) throw Error("bad file magic: expected " + std::string(magic));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    read_exact(is, reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    read_exact(is, reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    if (n > (1u << 28)) throw Error("binary read: string length out of range");
    std::string s(n, '\0');
    read_exact(is, s.data(), n);
    return s;
}

std::vector<double> read_f32(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(read_u32(is));
    return out;
}

void round_to_f32(std::span<double> values) {
    for (double& v : values) v = static_cast<float>(v);
}

}  // namespace delrec::binio
