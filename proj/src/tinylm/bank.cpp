// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <sstream>

#include "delrec/tinylm/model.hpp"
#include "delrec/util/binio.hpp"
#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::tinylm {
namespace {

constexpr std::string_view kBankMagic = "DELSPB1";

std::string encode_provenance(const SoftPromptBank& b) {
    std::ostringstream os;
    os << "trained=" << (b.trained ? 1 : 0) << '\n'
       << "teacher_arch=" << b.provenance.teacher_arch << '\n'
       << "dataset_id=" << b.provenance.dataset_id << '\n'
       << "stage1_config_hash=" << b.provenance.stage1_config_hash << '\n'
       << "template_hash=" << b.provenance.template_hash << '\n';
    return os.str();
}

void decode_provenance(const std::string& text, SoftPromptBank& b) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("bank file: malformed provenance line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "trained") b.trained = value == "1";
        else if (key == "teacher_arch") b.provenance.teacher_arch = value;
        else if (key == "dataset_id") b.provenance.dataset_id = value;
        else if (key == "stage1_config_hash") b.provenance.stage1_config_hash = value;
        else if (key == "template_hash") b.provenance.template_hash = value;
        else throw Error("bank file: unknown provenance key '" + key + "'");
    }
}

}  // namespace

SoftPromptBank::SoftPromptBank(std::size_t k, std::size_t d) : matrix_(nn::Tensor::zeros(k, d)) {}

SoftPromptBank init_soft_prompts(std::size_t k, std::size_t d, std::uint64_t seed) {
    if (k == 0 || d == 0) throw Error("init_soft_prompts: k and d must be positive");
    SoftPromptBank b(k, d);
    Rng rng = Rng::substream(seed, "tinylm.soft_prompts");
    for (double& v : b.matrix().value()) v = 0.02 * rng.normal();
    return b;
}

std::string SoftPromptBank::sha256() const {
    Sha256 h;
    h.update(std::to_string(k()) + "x" + std::to_string(d()));
    if (!empty()) {
        std::vector<double> v(matrix_.value().begin(), matrix_.value().end());
        binio::round_to_f32(v);
        h.update(std::span<const double>(v));
    }
    return h.hex_digest();
}

void SoftPromptBank::write(std::ostream& os) const {
    binio::write_magic(os, kBankMagic);
    binio::write_u32(os, static_cast<std::uint32_t>(k()));
    binio::write_u32(os, static_cast<std::uint32_t>(d()));
    binio::write_string(os, encode_provenance(*this));
    if (!empty()) binio::write_f32(os, matrix_.value());
}

SoftPromptBank SoftPromptBank::read(std::istream& is) {
    binio::expect_magic(is, kBankMagic);
    const auto k = binio::read_u32(is);
    const auto d = binio::read_u32(is);
    SoftPromptBank b;
    decode_provenance(binio::read_string(is), b);
    if (k != 0) {
        b.matrix_ = nn::Tensor::from(k, d, binio::read_f32(is, std::size_t{k} * d));
        for (double v : b.matrix_.value()) {
            if (!std::isfinite(v)) throw Error("bank file: non-finite entry");
        }
    }
    return b;
}

void SoftPromptBank::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    write(os);
}

SoftPromptBank SoftPromptBank::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string());
    return read(is);
}

}  // namespace delrec::tinylm
