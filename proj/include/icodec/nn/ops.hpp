#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "icodec/nn/tensor.hpp"

ICODEC_CORE_BEGIN
namespace nn {

inline constexpr double kRmsNormEps = 1e-6;

/// x[n x in] times weight[out x in] transposed -> [n x out].
Tensor linear(const Tensor& x, const Tensor& weight);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor silu(const Tensor& x);
/// gain * x / sqrt(mean(x^2) + eps), per row.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = kRmsNormEps);

/// Rotates each (2j, 2j+1) pair inside every head of x[n x heads*head_dim] by
/// positions[row] * base^(-2j / head_dim).
Tensor rope(const Tensor& x, std::span<const int> positions, std::size_t head_dim, double base);
std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k, std::span<const int> positions,
                                     std::size_t head_dim, double base);

/// Row i may attend to key j iff allowed(i, j).
class AttentionMask {
public:
    AttentionMask(std::size_t rows, std::size_t cols, bool value = false)
        : rows_(rows), cols_(cols), allowed_(rows * cols, value ? 1 : 0) {}
    static AttentionMask full(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }
    /// Query row i sits at absolute position offset + i; keys are positions 0..cols-1.
    static AttentionMask causal(std::size_t rows, std::size_t cols, std::size_t offset = 0);

    bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * cols_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool value) { allowed_[i * cols_ + j] = value ? 1 : 0; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

private:
    std::size_t rows_, cols_;
    std::vector<std::uint8_t> allowed_;
};

/// Multi-head scaled dot-product attention. q[nq x d], k and v [nk x d],
/// d = heads * head_dim. A row with no allowed key yields zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const AttentionMask& mask);

/// Gathers rows of table[V x d]; id -1 gives a zero row.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
/// Stacks `count` copies of a single-row tensor.
Tensor repeat_rows(const Tensor& row, std::size_t count);

/// Weighted mean of per-row cross-entropy: sum_r w_r * CE_r / sum_r w_r.
/// Rows with zero weight contribute neither value nor gradient.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const Real> weights);

Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// base_out + B (A x). A is [r x d_in], B is [d_out x r].
Tensor lora_apply(const Tensor& base_out, const Tensor& a, const Tensor& b, const Tensor& x);

/// W_down (silu(W_gate x) * (W_up x)).
Tensor swiglu(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down);

}  // namespace nn
ICODEC_CORE_END
