// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace delrec {

// Every recoverable failure in the library surfaces as this type. Messages name
// the offending input (file line, item id, step index) so callers can report
// them verbatim.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace delrec
