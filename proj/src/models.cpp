#include "icodec/models.hpp"

#include <algorithm>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN

using seqlayout::VocabMap;
using toyworld::AcousticGrid;

namespace {

constexpr double kEmbedStd = 0.02;
constexpr int kLayerRows = toyworld::kAcousticVocab + 1;  // codes + local mask

bool is_lora_name(const std::string& name) {
    return name.ends_with(".lora_a") || name.ends_with(".lora_b");
}

std::vector<Real> weights_from_mask(std::span<const std::uint8_t> mask) {
    std::vector<Real> w(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? Real(1) : Real(0);
    return w;
}

}  // namespace

TextEncoder::TextEncoder(const nn::BlockConfig& cfg, std::size_t lora_rank, Rng& rng)
    : embed_(nn::normal_param({static_cast<std::size_t>(toyworld::tok::vocab_size), cfg.model_dim}, kEmbedStd, rng)),
      body_(cfg, rng) {
    if (lora_rank > 0) {
        body_.enable_lora(lora_rank, rng);
    }
}

InstructionEncoding TextEncoder::encode(std::span<const int> tokens) const {
    if (tokens.empty()) {
        throw Error("encode_instruction: empty token sequence");
    }
    for (int id : tokens) {
        if (id < 0 || id >= toyworld::tok::vocab_size) {
            throw Error("encode_instruction: unknown token id " + std::to_string(id));
        }
    }
    InstructionEncoding enc;
    enc.vectors = body_.forward(nn::embedding(embed_, tokens), false);
    enc.m = tokens.size();
    return enc;
}

void TextEncoder::collect(nn::ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".embed", embed_});
    body_.collect(out, prefix + ".body");
}

void TextEncoder::freeze_base(bool frozen) const {
    nn::ParamList params;
    collect(params, "enc");
    for (const auto& p : params) {
        if (!is_lora_name(p.name)) p.tensor.set_requires_grad(!frozen);
    }
}

// ---------------------------------------------------------------------------
// AR

ArModel::ArModel(const ModelOptions& opts, Rng& rng)
    : use_semantic_(opts.use_semantic), encoder_(opts.encoder, opts.lora_rank, rng) {
    const std::size_t d = opts.ar.model_dim;
    prefix_proj_ = nn::Linear(opts.encoder.model_dim, d, kEmbedStd, rng);
    mask_text_ = nn::normal_param({1, d}, kEmbedStd, rng);
    embed_ = nn::normal_param({static_cast<std::size_t>(VocabMap::unified_size), d}, kEmbedStd, rng);
    body_ = nn::Transformer(opts.ar, rng);
    head_ = nn::Linear(d, VocabMap::unified_size, kEmbedStd, rng);
}

nn::Tensor ArModel::prefix_rows(const InstructionEncoding& enc, bool drop_text) const {
    if (enc.m == 0) {
        throw Error("ar_forward: empty instruction encoding");
    }
    if (drop_text) {
        return nn::repeat_rows(mask_text_, enc.m);
    }
    return prefix_proj_(enc.vectors);
}

nn::Tensor ArModel::id_rows(std::span<const int> ids, bool drop_st) const {
    std::vector<int> fed(ids.begin(), ids.end());
    for (int& id : fed) {
        if (id < 0 || id >= VocabMap::unified_size) {
            throw Error("ar_forward: id " + std::to_string(id) + " outside the unified vocabulary");
        }
        if (drop_st && VocabMap::is_semantic(id)) id = VocabMap::mask_st;
    }
    return nn::embedding(embed_, fed);
}

nn::Tensor ArModel::forward(const InstructionEncoding& enc, std::span<const int> ids, bool drop_text,
                            bool drop_st) const {
    seqlayout::prediction_segments(ids, use_semantic_);
    nn::Tensor x = prefix_rows(enc, drop_text);
    if (!ids.empty()) {
        const nn::Tensor parts[] = {x, id_rows(ids, drop_st)};
        x = nn::concat_rows(parts);
    }
    const nn::Tensor h = body_.forward(x, true);
    return head_(nn::slice_rows(h, enc.m - 1, ids.size() + 1));
}

nn::Tensor ArModel::loss(const seqlayout::ArTrainingExample& ex) const {
    if (std::none_of(ex.loss_mask.begin(), ex.loss_mask.end(), [](auto v) { return v != 0; })) {
        throw Error("ar_loss: loss mask is all zero");
    }
    const InstructionEncoding enc = ex.drop_text ? InstructionEncoding{nn::Tensor(), ex.prefix_len}
                                                 : encoder_.encode(ex.instruction_tokens);
    // Inputs already carry MASK_ST where the example dropped semantic ids.
    const nn::Tensor logits = forward(enc, ex.inputs, ex.drop_text, false);
    const auto w = weights_from_mask(ex.loss_mask);
    return nn::cross_entropy(logits, ex.targets, w);
}

ArModel::State ArModel::start(const InstructionEncoding& enc, bool drop_text, bool drop_st) const {
    nn::NoGradGuard guard;
    State state;
    state.drop_text = drop_text;
    state.drop_st = drop_st;
    const nn::Tensor h = body_.forward(prefix_rows(enc, drop_text), true, &state.cache);
    const nn::Tensor logits = head_(nn::slice_rows(h, enc.m - 1, 1));
    state.logits.assign(logits.values().begin(), logits.values().end());
    return state;
}

void ArModel::step(State& state, int id) const {
    nn::NoGradGuard guard;
    const int one[] = {id};
    const nn::Tensor h = body_.forward(id_rows(one, state.drop_st), true, &state.cache);
    const nn::Tensor logits = head_(h);
    state.logits.assign(logits.values().begin(), logits.values().end());
}

void ArModel::collect(nn::ParamList& out) const {
    encoder_.collect(out, "ar.encoder");
    prefix_proj_.collect(out, "ar.prefix_proj");
    out.push_back({"ar.mask_text", mask_text_});
    out.push_back({"ar.embed", embed_});
    body_.collect(out, "ar.body");
    head_.collect(out, "ar.head");
}

// ---------------------------------------------------------------------------
// NAR

NarModel::NarModel(const ModelOptions& opts, Rng& rng)
    : use_semantic_(opts.use_semantic), encoder_(opts.encoder, opts.lora_rank, rng) {
    if (opts.codec_layers < 2) {
        throw Error("nar model: needs at least 2 codec layers");
    }
    const std::size_t d = opts.nar.model_dim;
    prefix_proj_ = nn::Linear(opts.encoder.model_dim, d, kEmbedStd, rng);
    cond_embed_ = nn::normal_param({static_cast<std::size_t>(VocabMap::unified_size), d}, kEmbedStd, rng);
    for (std::size_t l = 0; l < opts.codec_layers; ++l) {
        layer_embed_.push_back(nn::normal_param({static_cast<std::size_t>(kLayerRows), d}, kEmbedStd, rng));
    }
    target_embed_ = nn::normal_param({opts.codec_layers, d}, kEmbedStd, rng);
    body_ = nn::Transformer(opts.nar, rng);
    for (std::size_t l = 1; l < opts.codec_layers; ++l) {
        heads_.emplace_back(d, toyworld::kAcousticVocab, kEmbedStd, rng);
    }
}

nn::Tensor NarModel::forward(const InstructionEncoding& enc, int language, std::span<const int> semantic,
                             const AcousticGrid& grid, std::size_t prompt_len, std::size_t target_layer) const {
    const std::size_t n = layer_embed_.size();
    if (target_layer < 1 || target_layer >= n) {
        throw Error("nar_forward: target layer " + std::to_string(target_layer) + " out of range [1, " +
                    std::to_string(n) + ")");
    }
    if (grid.layers != n) {
        throw Error("nar_forward: grid has " + std::to_string(grid.layers) + " layers, model expects " +
                    std::to_string(n));
    }
    if (grid.frames == 0) {
        throw Error("nar_forward: empty grid");
    }
    if (!VocabMap::is_lang(language)) {
        throw Error("nar_forward: bad language id " + std::to_string(language));
    }
    const std::size_t frames = grid.frames;

    std::vector<nn::Tensor> parts;
    parts.push_back(prefix_proj_(enc.vectors));
    std::vector<int> cond{language};
    if (use_semantic_) {
        for (int s : semantic) {
            if (s < 0 || s >= VocabMap::semantic_count) {
                throw Error("nar_forward: semantic id " + std::to_string(s) + " out of range");
            }
            cond.push_back(VocabMap::semantic(s));
        }
    }
    parts.push_back(nn::embedding(cond_embed_, cond));

    std::vector<int> ids(frames);
    nn::Tensor frame_rows = nn::embedding(target_embed_, std::vector<int>(frames, static_cast<int>(target_layer)));
    for (std::size_t l = 0; l < n; ++l) {
        bool any = false;
        for (std::size_t t = 0; t < frames; ++t) {
            int v = grid.at(t, l);
            if (t >= prompt_len && l > target_layer) v = -1;
            if (v < -1 || v >= kLayerRows) {
                throw Error("nar_forward: code " + std::to_string(v) + " at frame " + std::to_string(t) +
                            ", layer " + std::to_string(l));
            }
            ids[t] = v;
            any = any || v >= 0;
        }
        if (any) frame_rows = nn::add(frame_rows, nn::embedding(layer_embed_[l], ids));
    }
    parts.push_back(frame_rows);

    const nn::Tensor h = body_.forward(nn::concat_rows(parts), false);
    const std::size_t total = h.rows();
    return heads_[target_layer - 1](nn::slice_rows(h, total - frames, frames));
}

nn::Tensor NarModel::loss(const seqlayout::NarTrainingExample& ex) const {
    if (ex.masked.empty()) {
        return nn::Tensor::scalar(Real(0));
    }
    const AcousticGrid input = nar_input_grid(ex.grid, ex.prompt_len, ex.target_layer, ex.masked);
    const InstructionEncoding enc = encoder_.encode(ex.instruction_tokens);
    const nn::Tensor logits = forward(enc, ex.language, ex.semantic, input, ex.prompt_len, ex.target_layer);
    std::vector<int> targets(ex.grid.frames);
    std::vector<Real> weights(ex.grid.frames, Real(0));
    for (std::size_t t = 0; t < ex.grid.frames; ++t) targets[t] = ex.grid.at(t, ex.target_layer);
    for (auto t : ex.masked) weights[t] = Real(1);
    return nn::cross_entropy(logits, targets, weights);
}

void NarModel::collect(nn::ParamList& out) const {
    encoder_.collect(out, "nar.encoder");
    prefix_proj_.collect(out, "nar.prefix_proj");
    out.push_back({"nar.cond_embed", cond_embed_});
    for (std::size_t l = 0; l < layer_embed_.size(); ++l) {
        out.push_back({"nar.layer_embed" + std::to_string(l), layer_embed_[l]});
    }
    out.push_back({"nar.target_embed", target_embed_});
    body_.collect(out, "nar.body");
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        heads_[i].collect(out, "nar.head" + std::to_string(i + 1));
    }
}

AcousticGrid nar_input_grid(const AcousticGrid& grid, std::size_t prompt_len, std::size_t layer,
                            std::span<const std::size_t> masked) {
    AcousticGrid out = grid;
    for (std::size_t t = prompt_len; t < grid.frames; ++t) {
        for (std::size_t l = layer + 1; l < grid.layers; ++l) out.at(t, l) = -1;
    }
    for (auto t : masked) {
        if (t < prompt_len || t >= grid.frames) {
            throw Error("nar_input_grid: masked frame " + std::to_string(t) + " outside the suffix");
        }
        out.at(t, layer) = VocabMap::local_mask_at;
    }
    return out;
}

// ---------------------------------------------------------------------------

ModelBundle::ModelBundle(const ModelOptions& opts) : options(opts) {
    opts.encoder.validate();
    opts.ar.validate();
    opts.nar.validate();
    Rng ar_rng(derive_seed(opts.seed, 1));
    Rng nar_rng(derive_seed(opts.seed, 2));
    ar = ArModel(opts, ar_rng);
    nar = NarModel(opts, nar_rng);
}

nn::ParamList ModelBundle::ar_params() const {
    nn::ParamList out;
    ar.collect(out);
    return out;
}

nn::ParamList ModelBundle::nar_params() const {
    nn::ParamList out;
    nar.collect(out);
    return out;
}

nn::ParamList ModelBundle::all_params() const {
    nn::ParamList out = ar_params();
    nar.collect(out);
    return out;
}

ICODEC_CORE_END
