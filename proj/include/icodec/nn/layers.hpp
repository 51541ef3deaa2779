#pragma once

// LLaMA-style building blocks: pre-norm residual blocks with RMSNorm, RoPE
// attention and a SwiGLU feed-forward, optional LoRA adapters on every
// projection, and a plain append-only KV cache for incremental decoding.

#include <string>
#include <vector>

#include "icodec/nn/ops.hpp"
#include "icodec/rng.hpp"

ICODEC_CORE_BEGIN
namespace nn {

struct BlockConfig {
    std::size_t layers = 2;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 176;
    std::size_t heads = 4;
    double rope_base = 10000.0;

    std::size_t head_dim() const { return model_dim / heads; }
    /// Throws unless model_dim is divisible by heads and head_dim is even.
    void validate() const;

    bool operator==(const BlockConfig&) const = default;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

Tensor normal_param(Shape shape, double stddev, Rng& rng);
Tensor constant_param(Shape shape, Real value);

class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, double stddev, Rng& rng);

    /// Adds a rank-r adapter: A ~ N(0, 1/in), B = 0, so the output is unchanged.
    void enable_lora(std::size_t rank, Rng& rng);
    bool has_lora() const { return lora_a_.defined(); }

    Tensor operator()(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    const Tensor& weight() const { return weight_; }
    const Tensor& lora_a() const { return lora_a_; }
    const Tensor& lora_b() const { return lora_b_; }

private:
    Tensor weight_;  // [out x in]
    Tensor lora_a_;  // [r x in]
    Tensor lora_b_;  // [out x r]
};

struct LayerCache {
    Tensor keys;    // rotated keys of every cached position
    Tensor values;
};

struct KvCache {
    std::vector<LayerCache> layers;
    std::size_t length = 0;
};

class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(const BlockConfig& cfg, Rng& rng);

    void enable_lora(std::size_t rank, Rng& rng);

    /// x holds rows at absolute positions start .. start + rows - 1, where
    /// start is the cache length (0 without a cache). With a cache, keys and
    /// values of x are appended to it.
    Tensor forward(const Tensor& x, std::span<const int> positions, bool causal, LayerCache* cache,
                   std::size_t cached) const;
    void collect(ParamList& out, const std::string& prefix) const;

private:
    BlockConfig cfg_;
    Tensor attn_norm_, ffn_norm_;
    Linear wq_, wk_, wv_, wo_, w_gate_, w_up_, w_down_;
};

class Transformer {
public:
    Transformer() = default;
    Transformer(const BlockConfig& cfg, Rng& rng);

    void enable_lora(std::size_t rank, Rng& rng);

    /// Runs every block then the final RMSNorm. `causal` selects a causal or
    /// full attention mask.
    Tensor forward(const Tensor& x, bool causal, KvCache* cache = nullptr) const;
    void collect(ParamList& out, const std::string& prefix) const;
    const BlockConfig& config() const { return cfg_; }

private:
    BlockConfig cfg_;
    std::vector<TransformerBlock> blocks_;
    Tensor final_norm_;
};

std::size_t parameter_count(const ParamList& params);

}  // namespace nn
ICODEC_CORE_END
