// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "delrec/simd/kernels.hpp"
#include "delrec/util/error.hpp"

namespace delrec::nn {
namespace {

using NodePtr = std::shared_ptr<Node>;

NodePtr make_result(std::size_t rows, std::size_t cols, std::initializer_list<const Tensor*> inputs) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    for (const Tensor* t : inputs) {
        if (t != nullptr && *t && t->requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
        for (const Tensor* t : inputs) n->parents.push_back(t != nullptr && *t ? t->node() : nullptr);
    }
    return n;
}

NodePtr make_result(std::size_t rows, std::size_t cols, std::span<const Tensor> inputs) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    for (const Tensor& t : inputs)
        if (t.requires_grad()) n->requires_grad = true;
    if (n->requires_grad)
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
    return n;
}

bool wants(const Node& self, std::size_t i) {
    return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
}

const simd::KernelTable& K() { return simd::active(); }

template <class F, class G>
Tensor unary(const Tensor& a, F f, G df) {
    auto n = make_result(a.rows(), a.cols(), {&a});
    const double* x = a.data();
    for (std::size_t i = 0; i < n->size(); ++i) n->value[i] = f(x[i]);
    if (n->requires_grad) {
        n->backward_fn = [df](Node& self) {
            Node& p = *self.parents[0];
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i)
                g[i] += self.grad[i] * df(p.value[i], self.value[i]);
        };
    }
    return Tensor(n);
}

}  // namespace

Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> ids, int frozen_row) {
    const std::size_t d = table.cols();
    auto n = make_result(ids.size(), d, {&table});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows())
            throw Error("gather_rows: index " + std::to_string(ids[i]) + " out of range " +
                        std::to_string(table.rows()));
        std::copy_n(table.data() + ids[i] * d, d, n->value.data() + i * d);
    }
    if (n->requires_grad) {
        std::vector<std::uint32_t> idx(ids.begin(), ids.end());
        n->backward_fn = [idx = std::move(idx), d, frozen_row](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (static_cast<int>(idx[i]) == frozen_row) continue;
                K().axpy(1.0, self.grad.data() + i * d, g.data() + idx[i] * d, d);
            }
        };
    }
    return Tensor(n);
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    const std::size_t d = parts[0].cols();
    std::size_t rows = 0;
    for (const Tensor& t : parts) {
        if (t.cols() != d) throw Error("concat_rows: column mismatch");
        rows += t.rows();
    }
    auto n = make_result(rows, d, parts);
    std::size_t off = 0;
    for (const Tensor& t : parts) {
        std::copy_n(t.data(), t.size(), n->value.data() + off);
        off += t.size();
    }
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            std::size_t off = 0;
            for (auto& p : self.parents) {
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (std::size_t i = 0; i < p->size(); ++i) g[i] += self.grad[off + i];
                }
                off += p->size();
            }
        };
    }
    return Tensor(n);
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw Error("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t cols = 0;
    for (const Tensor& t : parts) {
        if (t.rows() != r) throw Error("concat_cols: row mismatch");
        cols += t.cols();
    }
    auto n = make_result(r, cols, parts);
    std::size_t c0 = 0;
    for (const Tensor& t : parts) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(t.data() + i * t.cols(), t.cols(), n->value.data() + i * cols + c0);
        c0 += t.cols();
    }
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            std::size_t c0 = 0;
            for (auto& p : self.parents) {
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (std::size_t i = 0; i < p->rows; ++i)
                        for (std::size_t j = 0; j < p->cols; ++j)
                            g[i * p->cols + j] += self.grad[i * self.cols + c0 + j];
                }
                c0 += p->cols;
            }
        };
    }
    return Tensor(n);
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    if (begin + count > x.rows()) throw Error("slice_rows: range out of bounds");
    const std::size_t d = x.cols();
    auto n = make_result(count, d, {&x});
    std::copy_n(x.data() + begin * d, count * d, n->value.data());
    if (n->requires_grad) {
        n->backward_fn = [begin, d](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) g[begin * d + i] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor pick_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t d = x.cols();
    auto n = make_result(rows.size(), d, {&x});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows()) throw Error("pick_rows: row out of range");
        std::copy_n(x.data() + rows[i] * d, d, n->value.data() + i * d);
    }
    if (n->requires_grad) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        n->backward_fn = [idx = std::move(idx), d](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i)
                K().axpy(1.0, self.grad.data() + i * d, g.data() + idx[i] * d, d);
        };
    }
    return Tensor(n);
}

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
    if (rows * cols != x.size()) throw Error("reshape: size mismatch");
    auto n = make_result(rows, cols, {&x});
    n->value = x.node()->value;
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimension mismatch");
    const std::size_t m = a.rows(), nn = b.rows(), k = a.cols();
    auto n = make_result(m, nn, {&a, &b});
    K().gemm_nt(m, nn, k, a.data(), k, b.data(), k, n->value.data(), nn, false);
    if (n->requires_grad) {
        n->backward_fn = [m, nn, k](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad)  // dA = dC * B
                K().gemm_nn(m, k, nn, self.grad.data(), nn, pb.value.data(), k, pa.ensure_grad().data(), k, true);
            if (pb.requires_grad)  // dB = dC^T * A
                K().gemm_tn_acc(nn, k, m, self.grad.data(), nn, pa.value.data(), k, pb.ensure_grad().data(), k);
        };
    }
    return Tensor(n);
}

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw Error("matmul_nn: inner dimension mismatch");
    const std::size_t m = a.rows(), nn = b.cols(), k = a.cols();
    auto n = make_result(m, nn, {&a, &b});
    K().gemm_nn(m, nn, k, a.data(), k, b.data(), nn, n->value.data(), nn, false);
    if (n->requires_grad) {
        n->backward_fn = [m, nn, k](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad)  // dA = dC * B^T
                K().gemm_nt(m, k, nn, self.grad.data(), nn, pb.value.data(), nn, pa.ensure_grad().data(), k, true);
            if (pb.requires_grad)  // dB = A^T * dC
                K().gemm_tn_acc(k, nn, m, pa.value.data(), k, self.grad.data(), nn, pb.ensure_grad().data(), nn);
        };
    }
    return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const std::size_t m = x.rows(), in = x.cols(), out = w.rows();
    if (w.cols() != in) throw Error("linear: weight shape does not match input");
    if (bias && (bias.rows() != 1 || bias.cols() != out)) throw Error("linear: bias shape mismatch");
    auto n = make_result(m, out, {&x, &w, bias ? &bias : nullptr});
    K().gemm_nt(m, out, in, x.data(), in, w.data(), in, n->value.data(), out, false);
    if (bias) {
        for (std::size_t i = 0; i < m; ++i) K().axpy(1.0, bias.data(), n->value.data() + i * out, out);
    }
    if (n->requires_grad) {
        n->backward_fn = [m, in, out](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            if (px.requires_grad)
                K().gemm_nn(m, in, out, self.grad.data(), out, pw.value.data(), in, px.ensure_grad().data(), in, true);
            if (pw.requires_grad)
                K().gemm_tn_acc(out, in, m, self.grad.data(), out, px.value.data(), in, pw.ensure_grad().data(), in);
            if (wants(self, 2)) {
                auto& gb = self.parents[2]->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) K().axpy(1.0, self.grad.data() + i * out, gb.data(), out);
            }
        };
    }
    return Tensor(n);
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto n = make_result(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] + b.data()[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            for (int s = 0; s < 2; ++s) {
                if (!wants(self, s)) continue;
                auto& g = self.parents[s]->ensure_grad();
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto n = make_result(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] - b.data()[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            for (int s = 0; s < 2; ++s) {
                if (!wants(self, s)) continue;
                auto& g = self.parents[s]->ensure_grad();
                const double sign = s == 0 ? 1.0 : -1.0;
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += sign * self.grad[i];
            }
        };
    }
    return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto n = make_result(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] * b.data()[i];
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * pa.value[i];
            }
        };
    }
    return Tensor(n);
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor one_minus(const Tensor& a) {
    return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) throw Error("add_row: bias shape mismatch");
    const std::size_t c = a.cols();
    auto n = make_result(a.rows(), c, {&a, &bias});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = a.data()[i * c + j] + bias.data()[j];
    if (n->requires_grad) {
        n->backward_fn = [c](Node& self) {
            if (wants(self, 0)) {
                auto& g = self.parents[0]->ensure_grad();
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
            if (wants(self, 1)) {
                auto& g = self.parents[1]->ensure_grad();
                for (std::size_t i = 0; i < self.rows; ++i) K().axpy(1.0, self.grad.data() + i * c, g.data(), c);
            }
        };
    }
    return Tensor(n);
}

Tensor scale_cols(const Tensor& a, const Tensor& v) {
    if (v.rows() != 1 || v.cols() != a.cols()) throw Error("scale_cols: vector shape mismatch");
    const std::size_t c = a.cols();
    auto n = make_result(a.rows(), c, {&a, &v});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = a.data()[i * c + j] * v.data()[j];
    if (n->requires_grad) {
        n->backward_fn = [c](Node& self) {
            Node& pa = *self.parents[0];
            Node& pv = *self.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::size_t i = 0; i < self.rows; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * pv.value[j];
            }
            if (pv.requires_grad) {
                auto& g = pv.ensure_grad();
                for (std::size_t i = 0; i < self.rows; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * pa.value[i * c + j];
            }
        };
    }
    return Tensor(n);
}

Tensor mask_rows(const Tensor& a, std::span<const double> mask) {
    if (mask.size() != a.rows()) throw Error("mask_rows: mask length mismatch");
    const std::size_t c = a.cols();
    auto n = make_result(a.rows(), c, {&a});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = a.data()[i * c + j] * mask[i];
    if (n->requires_grad) {
        std::vector<double> m(mask.begin(), mask.end());
        n->backward_fn = [m = std::move(m), c](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.rows; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * m[i];
        };
    }
    return Tensor(n);
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    // tanh approximation
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
        [](double x, double) {
            const double u = c * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gamma.cols() != c || beta.cols() != c) throw Error("layer_norm: parameter shape mismatch");
    auto n = make_result(r, c, {&x, &gamma, &beta});
    std::vector<double> xhat(r * c), inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mean) * inv_std[i];
            n->value[i * c + j] = xhat[i * c + j] * gamma.data()[j] + beta.data()[j];
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (pg.requires_grad) {
                auto& g = pg.ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
            }
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                const double inv_c = 1.0 / static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = self.grad[i * c + j] * pg.value[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = self.grad[i * c + j] * pg.value[j];
                        g[i * c + j] += inv_std[i] * (dxh - s1 * inv_c - xhat[i * c + j] * s2 * inv_c);
                    }
                }
            }
        };
    }
    return Tensor(n);
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw Error("dropout: probability must be < 1");
    const double keep = 1.0 / (1.0 - p);
    // Each 64-bit draw yields four 16-bit uniforms.
    const auto threshold = static_cast<std::uint32_t>(std::llround(p * 65536.0));
    std::vector<double> mask(x.size());
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (i % 4 == 0) bits = rng.next_u64();
        mask[i] = static_cast<std::uint32_t>(bits & 0xFFFF) < threshold ? 0.0 : keep;
        bits >>= 16;
    }
    auto n = make_result(x.rows(), x.cols(), {&x});
    for (std::size_t i = 0; i < n->size(); ++i) n->value[i] = x.data()[i] * mask[i];
    if (n->requires_grad) {
        n->backward_fn = [mask = std::move(mask)](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * mask[i];
        };
    }
    return Tensor(n);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s,
                 std::span<const std::uint8_t> key_valid) {
    const std::size_t d = q.cols();
    if (k.cols() != d || v.cols() != d) throw Error("attention: width mismatch");
    if (s.heads == 0 || d % s.heads != 0) throw Error("attention: width not divisible by heads");
    if (q.rows() != s.batch * s.q_len || k.rows() != s.batch * s.k_len || v.rows() != k.rows())
        throw Error("attention: row counts do not match the attention shape");
    if (s.causal && s.k_len < s.q_len) throw Error("attention: causal needs k_len >= q_len");
    if (!key_valid.empty() && key_valid.size() != k.rows()) throw Error("attention: key mask length mismatch");

    const std::size_t dh = d / s.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t nq = s.q_len, nk = s.k_len, shift = s.k_len - std::min(s.k_len, s.q_len);
    auto n = make_result(q.rows(), d, {&q, &k, &v});

    // probs[b][h] is nq x nk
    std::vector<double> probs(s.batch * s.heads * nq * nk, 0.0);
    std::vector<double> scores(nq * nk);
    const auto& kt = K();
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t h = 0; h < s.heads; ++h) {
            const double* qb = q.data() + b * nq * d + h * dh;
            const double* kb = k.data() + b * nk * d + h * dh;
            const double* vb = v.data() + b * nk * d + h * dh;
            double* P = probs.data() + (b * s.heads + h) * nq * nk;
            kt.gemm_nt(nq, nk, dh, qb, d, kb, d, scores.data(), nk, false);
            for (std::size_t i = 0; i < nq; ++i) {
                const std::size_t limit = s.causal ? std::min(nk, i + shift + 1) : nk;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < limit; ++j) {
                    if (!key_valid.empty() && !key_valid[b * nk + j]) continue;
                    mx = std::max(mx, scores[i * nk + j] * inv_sqrt);
                }
                if (mx == -std::numeric_limits<double>::infinity()) continue;  // no visible key
                double z = 0.0;
                for (std::size_t j = 0; j < limit; ++j) {
                    if (!key_valid.empty() && !key_valid[b * nk + j]) continue;
                    const double e = std::exp(scores[i * nk + j] * inv_sqrt - mx);
                    P[i * nk + j] = e;
                    z += e;
                }
                for (std::size_t j = 0; j < limit; ++j) P[i * nk + j] /= z;
            }
            kt.gemm_nn(nq, dh, nk, P, nk, vb, d, n->value.data() + b * nq * d + h * dh, d, true);
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [probs = std::move(probs), s, d, dh, nq, nk, inv_sqrt](Node& self) {
            Node& pq = *self.parents[0];
            Node& pk = *self.parents[1];
            Node& pv = *self.parents[2];
            const auto& kt = K();
            double* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
            double* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
            double* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
            std::vector<double> dP(nq * nk);
            for (std::size_t b = 0; b < s.batch; ++b) {
                for (std::size_t h = 0; h < s.heads; ++h) {
                    const double* P = probs.data() + (b * s.heads + h) * nq * nk;
                    const double* dO = self.grad.data() + b * nq * d + h * dh;
                    const std::size_t qoff = b * nq * d + h * dh, koff = b * nk * d + h * dh;
                    if (gv) kt.gemm_tn_acc(nk, dh, nq, P, nk, dO, d, gv + koff, d);
                    if (!gq && !gk) continue;
                    kt.gemm_nt(nq, nk, dh, dO, d, pv.value.data() + koff, d, dP.data(), nk, false);
                    for (std::size_t i = 0; i < nq; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < nk; ++j) dot += dP[i * nk + j] * P[i * nk + j];
                        for (std::size_t j = 0; j < nk; ++j)
                            dP[i * nk + j] = P[i * nk + j] * (dP[i * nk + j] - dot) * inv_sqrt;
                    }
                    if (gq) kt.gemm_nn(nq, dh, nk, dP.data(), nk, pk.value.data() + koff, d, gq + qoff, d, true);
                    if (gk) kt.gemm_tn_acc(nk, dh, nq, dP.data(), nk, pq.value.data() + qoff, d, gk + koff, d);
                }
            }
        };
    }
    return Tensor(n);
}

Tensor unfold_rows(const Tensor& x, std::size_t batch, std::size_t len, std::size_t height) {
    if (x.rows() != batch * len) throw Error("unfold_rows: row count mismatch");
    if (height == 0 || height > len) throw Error("unfold_rows: window height out of range");
    const std::size_t d = x.cols(), win = len - height + 1, w = height * d;
    auto n = make_result(batch * win, w, {&x});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < win; ++t)
            std::copy_n(x.data() + (b * len + t) * d, w, n->value.data() + (b * win + t) * w);
    if (n->requires_grad) {
        n->backward_fn = [batch, len, win, w, d](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t t = 0; t < win; ++t)
                    K().axpy(1.0, self.grad.data() + (b * win + t) * w, g.data() + (b * len + t) * d, w);
        };
    }
    return Tensor(n);
}

Tensor segment_max(const Tensor& x, std::size_t group) {
    if (group == 0 || x.rows() % group != 0) throw Error("segment_max: rows not divisible by group");
    const std::size_t c = x.cols(), groups = x.rows() / group;
    auto n = make_result(groups, c, {&x});
    std::vector<std::size_t> argmax(groups * c);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = g * group;
            for (std::size_t r = g * group + 1; r < (g + 1) * group; ++r)
                if (x.data()[r * c + j] > x.data()[best * c + j]) best = r;
            argmax[g * c + j] = best;
            n->value[g * c + j] = x.data()[best * c + j];
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [argmax = std::move(argmax), c](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) g[argmax[i] * c + i % c] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor vertical_conv(const Tensor& x, const Tensor& w, std::size_t batch, std::size_t len) {
    if (x.rows() != batch * len || w.cols() != len) throw Error("vertical_conv: shape mismatch");
    const std::size_t d = x.cols(), f = w.rows();
    auto n = make_result(batch, f * d, {&x, &w});
    for (std::size_t b = 0; b < batch; ++b)
        K().gemm_nn(f, d, len, w.data(), len, x.data() + b * len * d, d, n->value.data() + b * f * d, d, false);
    if (n->requires_grad) {
        n->backward_fn = [batch, len, d, f](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            for (std::size_t b = 0; b < batch; ++b) {
                const double* dY = self.grad.data() + b * f * d;
                if (px.requires_grad)  // dX_b = W^T dY
                    K().gemm_tn_acc(len, d, f, pw.value.data(), len, dY, d, px.ensure_grad().data() + b * len * d, d);
                if (pw.requires_grad)  // dW = dY X_b^T
                    K().gemm_nt(f, len, d, dY, d, px.value.data() + b * len * d, d, pw.ensure_grad().data(), len, true);
            }
        };
    }
    return Tensor(n);
}

std::vector<double> log_softmax_row(std::span<const double> row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets,
                     std::int64_t ignore_index, bool exclude_col0) {
    if (targets.size() != logits.rows()) throw Error("cross_entropy: target count does not match rows");
    const std::size_t c = logits.cols();
    const std::size_t first = exclude_col0 ? 1 : 0;
    auto n = make_result(1, 1, {&logits});
    std::vector<double> probs(logits.size(), 0.0);
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (static_cast<std::int64_t>(targets[i]) == ignore_index) continue;
        if (targets[i] >= c || targets[i] < first) throw Error("cross_entropy: target out of range");
        const double* row = logits.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = first; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = first; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = first; j < c; ++j) probs[i * c + j] /= z;
        total += -(row[targets[i]] - mx - std::log(z));
        ++count;
    }
    if (count == 0) throw Error("cross_entropy: empty target");
    n->value[0] = total / static_cast<double>(count);
    if (n->requires_grad) {
        std::vector<std::uint32_t> t(targets.begin(), targets.end());
        n->backward_fn = [probs = std::move(probs), t = std::move(t), c, count, ignore_index](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            const double scale = self.grad[0] / static_cast<double>(count);
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (static_cast<std::int64_t>(t[i]) == ignore_index) continue;
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += scale * probs[i * c + j];
                g[i * c + t[i]] -= scale;
            }
        };
    }
    return Tensor(n);
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
    if (terms.size() != weights.size() || terms.empty()) throw Error("weighted_sum: size mismatch");
    auto n = make_result(1, 1, terms);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].size() != 1) throw Error("weighted_sum: terms must be scalars");
        n->value[0] += weights[i] * terms[i].item();
    }
    if (n->requires_grad) {
        std::vector<double> w(weights.begin(), weights.end());
        n->backward_fn = [w = std::move(w)](Node& self) {
            for (std::size_t i = 0; i < w.size(); ++i)
                if (self.parents[i]->requires_grad) self.parents[i]->ensure_grad()[0] += w[i] * self.grad[0];
        };
    }
    return Tensor(n);
}

Tensor mean_of(std::span<const Tensor> terms) {
    std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
    return weighted_sum(terms, w);
}

}  // namespace delrec::nn
