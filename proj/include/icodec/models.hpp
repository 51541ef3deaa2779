#pragma once

// The three networks: a bidirectional instruction encoder with LoRA adapters,
// the causal AR decoder over the unified vocabulary, and the non-causal NAR
// model that fills residual layers. AR and NAR each own an encoder so the two
// parameter sets stay disjoint.

#include <span>
#include <vector>

#include "icodec/nn/layers.hpp"
#include "icodec/seqlayout.hpp"
#include "icodec/toyworld.hpp"

ICODEC_CORE_BEGIN

struct InstructionEncoding {
    nn::Tensor vectors;  // [m x model_dim]
    std::size_t m = 0;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const nn::BlockConfig& cfg, std::size_t lora_rank, Rng& rng);

    /// Throws on ids outside the instruction vocabulary or an empty sequence.
    InstructionEncoding encode(std::span<const int> tokens) const;
    void collect(nn::ParamList& out, const std::string& prefix) const;
    /// Freezes (true) or unfreezes the base weights; LoRA factors stay trainable.
    void freeze_base(bool frozen) const;

private:
    nn::Tensor embed_;
    nn::Transformer body_;
};

struct ModelOptions {
    nn::BlockConfig encoder;
    nn::BlockConfig ar;
    nn::BlockConfig nar;
    std::size_t lora_rank = 4;
    std::size_t codec_layers = toyworld::kCodecLayers;
    /// false: the AR skips the semantic segment and the NAR ignores S.
    bool use_semantic = true;
    std::uint64_t seed = 0;

    bool operator==(const ModelOptions&) const = default;
};

class ArModel {
public:
    ArModel() = default;
    ArModel(const ModelOptions& opts, Rng& rng);

    InstructionEncoding encode(std::span<const int> tokens) const { return encoder_.encode(tokens); }

    /// Logits over the unified vocabulary for every prediction row: the last
    /// prefix row (predicting l) and one row after each id, so ids.size() + 1
    /// rows. drop_text swaps every prefix row for the learned MASK_TEXT
    /// vector; drop_st feeds MASK_ST in place of semantic ids.
    nn::Tensor forward(const InstructionEncoding& enc, std::span<const int> ids, bool drop_text, bool drop_st) const;
    nn::Tensor loss(const seqlayout::ArTrainingExample& ex) const;

    /// Incremental decoding under a KV cache (no gradient recording).
    struct State {
        nn::KvCache cache;
        bool drop_text = false;
        bool drop_st = false;
        std::vector<Real> logits;  // latest prediction row
    };
    State start(const InstructionEncoding& enc, bool drop_text, bool drop_st) const;
    void step(State& state, int id) const;

    const TextEncoder& encoder() const { return encoder_; }
    void collect(nn::ParamList& out) const;
    bool use_semantic() const { return use_semantic_; }

private:
    nn::Tensor prefix_rows(const InstructionEncoding& enc, bool drop_text) const;
    nn::Tensor id_rows(std::span<const int> ids, bool drop_st) const;

    bool use_semantic_ = true;
    TextEncoder encoder_;
    nn::Linear prefix_proj_;
    nn::Tensor mask_text_;  // [1 x d]
    nn::Tensor embed_;      // [unified x d]
    nn::Transformer body_;
    nn::Linear head_;
};

class NarModel {
public:
    NarModel() = default;
    NarModel(const ModelOptions& opts, Rng& rng);

    InstructionEncoding encode(std::span<const int> tokens) const { return encoder_.encode(tokens); }

    /// [T x 96] logits for the target layer. `grid` holds layer values with
    /// masked target positions set to the local mask id. Frames before
    /// prompt_len contribute every layer.
    nn::Tensor forward(const InstructionEncoding& enc, int language, std::span<const int> semantic,
                       const toyworld::AcousticGrid& grid, std::size_t prompt_len, std::size_t target_layer) const;
    /// Mean cross-entropy over masked positions; an empty masked set gives a
    /// constant 0 that carries no gradient.
    nn::Tensor loss(const seqlayout::NarTrainingExample& ex) const;

    const TextEncoder& encoder() const { return encoder_; }
    void collect(nn::ParamList& out) const;
    std::size_t codec_layers() const { return layer_embed_.size(); }

private:
    bool use_semantic_ = true;
    TextEncoder encoder_;
    nn::Linear prefix_proj_;
    nn::Tensor cond_embed_;                // [unified x d], for l and S
    std::vector<nn::Tensor> layer_embed_;  // per codec layer, [97 x d]
    nn::Tensor target_embed_;              // [n x d]
    nn::Transformer body_;
    std::vector<nn::Linear> heads_;        // heads_[i - 1] predicts layer i
};

struct ModelBundle {
    ModelOptions options;
    ArModel ar;
    NarModel nar;

    ModelBundle() = default;
    explicit ModelBundle(const ModelOptions& opts);

    nn::ParamList ar_params() const;
    nn::ParamList nar_params() const;
    nn::ParamList all_params() const;
};

/// Input grid for a NAR pass over `grid`: prompt frames keep every layer;
/// later frames keep layers below `layer`, the target layer is masked at
/// `masked` positions, layers above it are cleared to -1.
toyworld::AcousticGrid nar_input_grid(const toyworld::AcousticGrid& grid, std::size_t prompt_len, std::size_t layer,
                                      std::span<const std::size_t> masked);

ICODEC_CORE_END
