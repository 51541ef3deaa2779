#include "icodec/nn/layers.hpp"

#include <cmath>
#include <numeric>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN
namespace nn {

void BlockConfig::validate() const {
    if (heads == 0 || model_dim % heads != 0) {
        throw Error("block config: model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                    std::to_string(heads));
    }
    if (head_dim() % 2 != 0) {
        throw Error("block config: head_dim must be even for RoPE");
    }
    if (layers == 0 || ffn_dim == 0) {
        throw Error("block config: layers and ffn_dim must be positive");
    }
}

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::vector<Real> v(shape_size(shape));
    for (auto& x : v) x = static_cast<Real>(rng.normal() * stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor constant_param(Shape shape, Real value) {
    std::vector<Real> v(shape_size(shape), value);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, double stddev, Rng& rng)
    : weight_(normal_param({out, in}, stddev, rng)) {}

void Linear::enable_lora(std::size_t rank, Rng& rng) {
    if (rank == 0) {
        throw Error("lora: rank must be at least 1");
    }
    const std::size_t in = weight_.cols();
    const std::size_t out = weight_.rows();
    lora_a_ = normal_param({rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    lora_b_ = constant_param({out, rank}, Real(0));
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = linear(x, weight_);
    if (has_lora()) {
        y = lora_apply(y, lora_a_, lora_b_, x);
    }
    return y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    if (has_lora()) {
        out.push_back({prefix + ".lora_a", lora_a_});
        out.push_back({prefix + ".lora_b", lora_b_});
    }
}

TransformerBlock::TransformerBlock(const BlockConfig& cfg, Rng& rng) : cfg_(cfg) {
    constexpr double kStd = 0.02;
    const double out_std = kStd / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    const std::size_t d = cfg.model_dim;
    attn_norm_ = constant_param({d}, Real(1));
    ffn_norm_ = constant_param({d}, Real(1));
    wq_ = Linear(d, d, kStd, rng);
    wk_ = Linear(d, d, kStd, rng);
    wv_ = Linear(d, d, kStd, rng);
    wo_ = Linear(d, d, out_std, rng);
    w_gate_ = Linear(d, cfg.ffn_dim, kStd, rng);
    w_up_ = Linear(d, cfg.ffn_dim, kStd, rng);
    w_down_ = Linear(cfg.ffn_dim, d, out_std, rng);
}

void TransformerBlock::enable_lora(std::size_t rank, Rng& rng) {
    wq_.enable_lora(rank, rng);
    wk_.enable_lora(rank, rng);
    wv_.enable_lora(rank, rng);
    wo_.enable_lora(rank, rng);
    w_gate_.enable_lora(rank, rng);
    w_up_.enable_lora(rank, rng);
    w_down_.enable_lora(rank, rng);
}

Tensor TransformerBlock::forward(const Tensor& x, std::span<const int> positions, bool causal, LayerCache* cache,
                                 std::size_t cached) const {
    const std::size_t hd = cfg_.head_dim();
    const Tensor h = rmsnorm(x, attn_norm_);
    Tensor q = rope(wq_(h), positions, hd, cfg_.rope_base);
    Tensor k = rope(wk_(h), positions, hd, cfg_.rope_base);
    Tensor v = wv_(h);
    if (cache != nullptr) {
        if (cache->keys.defined()) {
            const Tensor ks[] = {cache->keys, k};
            const Tensor vs[] = {cache->values, v};
            k = concat_rows(ks);
            v = concat_rows(vs);
        }
        cache->keys = k;
        cache->values = v;
    }
    const std::size_t rows = x.rows();
    const std::size_t keys = k.rows();
    const AttentionMask mask =
        causal ? AttentionMask::causal(rows, keys, cached) : AttentionMask::full(rows, keys);
    const Tensor attended = wo_(attention(q, k, v, cfg_.heads, mask));
    const Tensor mid = add(x, attended);
    const Tensor g = rmsnorm(mid, ffn_norm_);
    return add(mid, w_down_(mul(silu(w_gate_(g)), w_up_(g))));
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".attn_norm", attn_norm_});
    wq_.collect(out, prefix + ".wq");
    wk_.collect(out, prefix + ".wk");
    wv_.collect(out, prefix + ".wv");
    wo_.collect(out, prefix + ".wo");
    out.push_back({prefix + ".ffn_norm", ffn_norm_});
    w_gate_.collect(out, prefix + ".w_gate");
    w_up_.collect(out, prefix + ".w_up");
    w_down_.collect(out, prefix + ".w_down");
}

Transformer::Transformer(const BlockConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        blocks_.emplace_back(cfg, rng);
    }
    final_norm_ = constant_param({cfg.model_dim}, Real(1));
}

void Transformer::enable_lora(std::size_t rank, Rng& rng) {
    for (auto& b : blocks_) b.enable_lora(rank, rng);
}

Tensor Transformer::forward(const Tensor& x, bool causal, KvCache* cache) const {
    const std::size_t start = cache ? cache->length : 0;
    std::vector<int> positions(x.rows());
    std::iota(positions.begin(), positions.end(), static_cast<int>(start));
    if (cache && cache->layers.size() != blocks_.size()) {
        cache->layers.resize(blocks_.size());
    }
    Tensor h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        h = blocks_[i].forward(h, positions, causal, cache ? &cache->layers[i] : nullptr, start);
    }
    if (cache) {
        cache->length += x.rows();
    }
    return rmsnorm(h, final_norm_);
}

void Transformer::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
    }
    out.push_back({prefix + ".final_norm", final_norm_});
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

}  // namespace nn
ICODEC_CORE_END
