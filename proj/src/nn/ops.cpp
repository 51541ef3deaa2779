#include "icodec/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN
namespace nn {

namespace {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

using detail::Node;

// Gradient buffer of input i, or an empty span when it needs none.
std::span<Real> grad_in(Node& self, std::size_t i) {
    auto& in = self.inputs[i];
    return in->requires_grad ? in->ensure_grad() : std::span<Real>{};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
    }
}

Shape with_cols(const Tensor& x, std::size_t cols) {
    Shape s = x.shape();
    if (s.empty()) s.push_back(1);
    s.back() = cols;
    return s;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight) {
    if (weight.shape().size() != 2 || x.cols() != weight.cols()) {
        throw Error("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
    }
    const auto n = static_cast<Eigen::Index>(x.rows());
    const auto in = static_cast<Eigen::Index>(x.cols());
    const auto out = static_cast<Eigen::Index>(weight.rows());
    std::vector<Real> y(static_cast<std::size_t>(n * out));
    Map(y.data(), n, out).noalias() = MapC(x.values().data(), n, in) * MapC(weight.values().data(), out, in).transpose();
    return detail::make_result(with_cols(x, weight.rows()), std::move(y), {x, weight}, [n, in, out](Node& self) {
        MapC dy(self.grad.data(), n, out);
        if (auto gx = grad_in(self, 0); !gx.empty()) {
            Map(gx.data(), n, in).noalias() += dy * MapC(self.inputs[1]->value.data(), out, in);
        }
        if (auto gw = grad_in(self, 1); !gw.empty()) {
            Map(gw.data(), out, in).noalias() += dy.transpose() * MapC(self.inputs[0]->value.data(), n, in);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Real> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
    return detail::make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (auto g = grad_in(self, k); !g.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Real> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
    return detail::make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (auto g = grad_in(self, 0); !g.empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (auto g = grad_in(self, 1); !g.empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, Real factor) {
    std::vector<Real> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * factor;
    return detail::make_result(a.shape(), std::move(y), {a}, [factor](Node& self) {
        auto g = grad_in(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor silu(const Tensor& x) {
    std::vector<Real> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const Real t = x.values()[i];
        y[i] = t / (Real(1) + std::exp(-t));
    }
    return detail::make_result(x.shape(), std::move(y), {x}, [](Node& self) {
        auto g = grad_in(self, 0);
        const auto& xv = self.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Real s = Real(1) / (Real(1) + std::exp(-xv[i]));
            g[i] += self.grad[i] * s * (Real(1) + xv[i] * (Real(1) - s));
        }
    });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    const std::size_t d = x.cols();
    if (gain.size() != d || d == 0) {
        throw Error("rmsnorm: gain " + shape_string(gain.shape()) + " vs input " + shape_string(x.shape()));
    }
    const std::size_t n = x.rows();
    std::vector<Real> y(x.size());
    std::vector<Real> inv_rms(n);
    const auto xv = x.values();
    const auto gv = gain.values();
    for (std::size_t r = 0; r < n; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < d; ++c) ss += static_cast<double>(xv[r * d + c]) * xv[r * d + c];
        inv_rms[r] = static_cast<Real>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
        for (std::size_t c = 0; c < d; ++c) y[r * d + c] = gv[c] * xv[r * d + c] * inv_rms[r];
    }
    return detail::make_result(x.shape(), std::move(y), {x, gain}, [n, d, inv_rms = std::move(inv_rms)](Node& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& gv = self.inputs[1]->value;
        auto gx = grad_in(self, 0);
        auto gg = grad_in(self, 1);
        for (std::size_t r = 0; r < n; ++r) {
            const Real* xr = xv.data() + r * d;
            const Real* dy = self.grad.data() + r * d;
            const Real s = inv_rms[r];
            if (!gx.empty()) {
                Real dot = 0;
                for (std::size_t c = 0; c < d; ++c) dot += dy[c] * gv[c] * xr[c];
                const Real coef = dot * s * s * s / static_cast<Real>(d);
                for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += dy[c] * gv[c] * s - xr[c] * coef;
            }
            if (!gg.empty()) {
                for (std::size_t c = 0; c < d; ++c) gg[c] += dy[c] * xr[c] * s;
            }
        }
    });
}

namespace {

// cos/sin table [rows x head_dim/2].
std::pair<std::vector<Real>, std::vector<Real>> rope_table(std::span<const int> positions, std::size_t head_dim,
                                                           double base) {
    const std::size_t half = head_dim / 2;
    std::vector<Real> cs(positions.size() * half), sn(positions.size() * half);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        for (std::size_t j = 0; j < half; ++j) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[r]) * freq;
            cs[r * half + j] = static_cast<Real>(std::cos(angle));
            sn[r * half + j] = static_cast<Real>(std::sin(angle));
        }
    }
    return {std::move(cs), std::move(sn)};
}

}  // namespace

Tensor rope(const Tensor& x, std::span<const int> positions, std::size_t head_dim, double base) {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw Error("rope: head_dim must be even, got " + std::to_string(head_dim));
    }
    const std::size_t d = x.cols();
    const std::size_t n = x.rows();
    if (d % head_dim != 0 || positions.size() != n) {
        throw Error("rope: input " + shape_string(x.shape()) + " with " + std::to_string(positions.size()) +
                    " positions, head_dim " + std::to_string(head_dim));
    }
    auto [cs, sn] = rope_table(positions, head_dim, base);
    const std::size_t half = head_dim / 2;
    const std::size_t heads = d / head_dim;
    std::vector<Real> y(x.size());
    const auto xv = x.values();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t j = 0; j < half; ++j) {
                const std::size_t i0 = r * d + h * head_dim + 2 * j;
                const Real c = cs[r * half + j], s = sn[r * half + j];
                y[i0] = xv[i0] * c - xv[i0 + 1] * s;
                y[i0 + 1] = xv[i0] * s + xv[i0 + 1] * c;
            }
        }
    }
    return detail::make_result(x.shape(), std::move(y), {x},
                               [n, d, heads, half, head_dim, cs = std::move(cs), sn = std::move(sn)](Node& self) {
                                   auto g = grad_in(self, 0);
                                   for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t h = 0; h < heads; ++h) {
                                           for (std::size_t j = 0; j < half; ++j) {
                                               const std::size_t i0 = r * d + h * head_dim + 2 * j;
                                               const Real c = cs[r * half + j], s = sn[r * half + j];
                                               const Real g0 = self.grad[i0], g1 = self.grad[i0 + 1];
                                               g[i0] += g0 * c + g1 * s;
                                               g[i0 + 1] += -g0 * s + g1 * c;
                                           }
                                       }
                                   }
                               });
}

std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k, std::span<const int> positions,
                                     std::size_t head_dim, double base) {
    return {rope(q, positions, head_dim, base), rope(k, positions, head_dim, base)};
}

AttentionMask AttentionMask::causal(std::size_t rows, std::size_t cols, std::size_t offset) {
    AttentionMask m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t last = std::min(cols, offset + i + 1);
        for (std::size_t j = 0; j < last; ++j) m.set(i, j, true);
    }
    return m;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const AttentionMask& mask) {
    const std::size_t d = q.cols();
    const std::size_t nq = q.rows();
    const std::size_t nk = k.rows();
    if (heads == 0 || d % heads != 0 || k.cols() != d || v.cols() != d || v.rows() != nk || mask.rows() != nq ||
        mask.cols() != nk) {
        throw Error("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                    shape_string(v.shape()) + ", mask " + std::to_string(mask.rows()) + "x" +
                    std::to_string(mask.cols()));
    }
    const std::size_t hd = d / heads;
    const Real scl = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));
    std::vector<Real> out(nq * d, Real(0));
    std::vector<Real> probs(heads * nq * nk, Real(0));
    const auto qv = q.values(), kv = k.values(), vv = v.values();
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < nq; ++i) {
            Real* p = probs.data() + (h * nq + i) * nk;
            const Real* qi = qv.data() + i * d + h * hd;
            Real best = -std::numeric_limits<Real>::infinity();
            bool any = false;
            for (std::size_t j = 0; j < nk; ++j) {
                if (!mask.allowed(i, j)) continue;
                const Real* kj = kv.data() + j * d + h * hd;
                Real s = 0;
                for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                p[j] = s * scl;
                best = any ? std::max(best, p[j]) : p[j];
                any = true;
            }
            if (!any) continue;
            Real total = 0;
            for (std::size_t j = 0; j < nk; ++j) {
                if (!mask.allowed(i, j)) continue;
                p[j] = std::exp(p[j] - best);
                total += p[j];
            }
            Real* oi = out.data() + i * d + h * hd;
            for (std::size_t j = 0; j < nk; ++j) {
                if (!mask.allowed(i, j)) continue;
                p[j] /= total;
                const Real* vj = vv.data() + j * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
            }
        }
    }
    return detail::make_result(
        with_cols(q, d), std::move(out), {q, k, v}, [=, probs = std::move(probs)](Node& self) {
            const auto& qv = self.inputs[0]->value;
            const auto& kv = self.inputs[1]->value;
            const auto& vv = self.inputs[2]->value;
            auto gq = grad_in(self, 0);
            auto gk = grad_in(self, 1);
            auto gv = grad_in(self, 2);
            std::vector<Real> ds(nk);
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < nq; ++i) {
                    const Real* p = probs.data() + (h * nq + i) * nk;
                    const Real* dout = self.grad.data() + i * d + h * hd;
                    Real weighted = 0;
                    for (std::size_t j = 0; j < nk; ++j) {
                        if (p[j] == Real(0)) {
                            ds[j] = 0;
                            continue;
                        }
                        const Real* vj = vv.data() + j * d + h * hd;
                        Real dp = 0;
                        for (std::size_t c = 0; c < hd; ++c) dp += dout[c] * vj[c];
                        ds[j] = dp;
                        weighted += p[j] * dp;
                        if (!gv.empty()) {
                            Real* gvj = gv.data() + j * d + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gvj[c] += p[j] * dout[c];
                        }
                    }
                    const Real* qi = qv.data() + i * d + h * hd;
                    for (std::size_t j = 0; j < nk; ++j) {
                        if (p[j] == Real(0)) continue;
                        const Real dsj = p[j] * (ds[j] - weighted) * scl;
                        const Real* kj = kv.data() + j * d + h * hd;
                        if (!gq.empty()) {
                            Real* gqi = gq.data() + i * d + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gqi[c] += dsj * kj[c];
                        }
                        if (!gk.empty()) {
                            Real* gkj = gk.data() + j * d + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gkj[c] += dsj * qi[c];
                        }
                    }
                }
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    const std::size_t d = table.cols();
    const std::size_t vocab = table.rows();
    std::vector<Real> y(ids.size() * d, Real(0));
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] == -1) continue;
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
            throw Error("embedding: id " + std::to_string(ids[r]) + " outside vocabulary of " + std::to_string(vocab));
        }
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[r]) * d, d, y.data() + r * d);
    }
    std::vector<int> kept(ids.begin(), ids.end());
    return detail::make_result({ids.size(), d}, std::move(y), {table}, [d, kept = std::move(kept)](Node& self) {
        auto g = grad_in(self, 0);
        for (std::size_t r = 0; r < kept.size(); ++r) {
            if (kept[r] < 0) continue;
            Real* dst = g.data() + static_cast<std::size_t>(kept[r]) * d;
            const Real* src = self.grad.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw Error("concat_rows: no inputs");
    }
    const std::size_t d = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != d) {
            throw Error("concat_rows: column mismatch " + std::to_string(p.cols()) + " vs " + std::to_string(d));
        }
        rows += p.rows();
    }
    std::vector<Real> y;
    y.reserve(rows * d);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(y.size());
        y.insert(y.end(), p.values().begin(), p.values().end());
    }
    return detail::make_result({rows, d}, std::move(y), {parts.begin(), parts.end()},
                               [offsets = std::move(offsets)](Node& self) {
                                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                       auto g = grad_in(self, k);
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                                   }
                               });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    const std::size_t d = x.cols();
    if (begin + count > x.rows()) {
        throw Error("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                    ") of " + shape_string(x.shape()));
    }
    std::vector<Real> y(x.values().begin() + static_cast<std::ptrdiff_t>(begin * d),
                        x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
    return detail::make_result({count, d}, std::move(y), {x}, [begin, d](Node& self) {
        auto g = grad_in(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
    });
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
    const std::size_t d = row.size();
    std::vector<Real> y(count * d);
    for (std::size_t r = 0; r < count; ++r) std::copy_n(row.values().data(), d, y.data() + r * d);
    return detail::make_result({count, d}, std::move(y), {row}, [count, d](Node& self) {
        auto g = grad_in(self, 0);
        for (std::size_t r = 0; r < count; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const Real> weights) {
    const std::size_t n = logits.rows();
    const std::size_t vocab = logits.cols();
    if (targets.size() != n || weights.size() != n) {
        throw Error("cross_entropy: " + std::to_string(n) + " rows, " + std::to_string(targets.size()) +
                    " targets, " + std::to_string(weights.size()) + " weights");
    }
    double total_weight = 0.0;
    for (Real w : weights) total_weight += w;
    if (total_weight <= 0.0) {
        throw Error("cross_entropy: loss mask is all zero");
    }
    std::vector<Real> probs(n * vocab, Real(0));
    double loss = 0.0;
    const auto lv = logits.values();
    for (std::size_t r = 0; r < n; ++r) {
        if (weights[r] == Real(0)) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw Error("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(vocab));
        }
        const Real* row = lv.data() + r * vocab;
        const Real best = *std::max_element(row, row + vocab);
        double z = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) z += std::exp(static_cast<double>(row[c] - best));
        const double log_z = std::log(z) + best;
        for (std::size_t c = 0; c < vocab; ++c) {
            probs[r * vocab + c] = static_cast<Real>(std::exp(static_cast<double>(row[c]) - log_z));
        }
        loss += weights[r] * (log_z - row[targets[r]]);
    }
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<Real> w(weights.begin(), weights.end());
    const Real inv_total = static_cast<Real>(1.0 / total_weight);
    return detail::make_result(
        {1}, {static_cast<Real>(loss / total_weight)}, {logits},
        [n, vocab, inv_total, probs = std::move(probs), tg = std::move(tg), w = std::move(w)](Node& self) {
            auto g = grad_in(self, 0);
            const Real up = self.grad[0];
            for (std::size_t r = 0; r < n; ++r) {
                if (w[r] == Real(0)) continue;
                const Real coef = up * w[r] * inv_total;
                for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] += coef * probs[r * vocab + c];
                g[r * vocab + static_cast<std::size_t>(tg[r])] -= coef;
            }
        });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (Real v : x.values()) s += v;
    return detail::make_result({1}, {static_cast<Real>(s)}, {x}, [](Node& self) {
        auto g = grad_in(self, 0);
        for (auto& gi : g) gi += self.grad[0];
    });
}

Tensor sum_squares(const Tensor& x) {
    double s = 0.0;
    for (Real v : x.values()) s += static_cast<double>(v) * v;
    return detail::make_result({1}, {static_cast<Real>(s)}, {x}, [](Node& self) {
        auto g = grad_in(self, 0);
        const auto& xv = self.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2 * xv[i] * self.grad[0];
    });
}

Tensor lora_apply(const Tensor& base_out, const Tensor& a, const Tensor& b, const Tensor& x) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.rows() != b.cols() || a.rows() == 0) {
        throw Error("lora_apply: rank mismatch, A " + shape_string(a.shape()) + ", B " + shape_string(b.shape()));
    }
    return add(base_out, linear(linear(x, a), b));
}

Tensor swiglu(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down) {
    return linear(mul(silu(linear(x, w_gate)), linear(x, w_up)), w_down);
}

}  // namespace nn
ICODEC_CORE_END
