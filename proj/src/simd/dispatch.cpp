// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include <atomic>

#include "delrec/simd/kernels.hpp"

namespace delrec::simd {

const KernelTable* avx2_table_impl();

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* best_table() {
    if (const KernelTable* t = avx2_table(); t != nullptr) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{best_table()};
    return table;
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable* table = cpu_has_avx2_fma() ? avx2_table_impl() : nullptr;
    return table;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool set_backend(Backend b) {
    const KernelTable* t = b == Backend::scalar ? &scalar_table() : avx2_table();
    if (t == nullptr) return false;
    current().store(t, std::memory_order_relaxed);
    return true;
}

std::string_view backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "unknown";
}

}  // namespace delrec::simd
