#include "icodec/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN

using seqlayout::Segment;
using seqlayout::VocabMap;
using toyworld::AcousticGrid;

void GuidanceWeights::validate() const {
    if (!std::isfinite(gamma) || !std::isfinite(alpha) || !std::isfinite(beta)) {
        throw Error("guidance weights must be finite");
    }
}

void DecodePolicy::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw Error("decode policy: temperature must be >= 0");
    if (top_k < 1) throw Error("decode policy: top_k must be at least 1");
    if (nar_iterations < 1) throw Error("decode policy: nar_iterations must be at least 1");
    if (max_frames == 0) throw Error("decode policy: max_frames must be positive");
}

std::vector<double> cfg_semantic(std::span<const double> cond, std::span<const double> uncond, double gamma) {
    if (cond.size() != uncond.size()) {
        throw Error("cfg: logit shapes differ (" + std::to_string(cond.size()) + " vs " +
                    std::to_string(uncond.size()) + ")");
    }
    if (gamma == 1.0) return {cond.begin(), cond.end()};
    if (gamma == 0.0) return {uncond.begin(), uncond.end()};
    std::vector<double> out(cond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + gamma * (cond[i] - uncond[i]);
    return out;
}

std::vector<double> cfg_acoustic(std::span<const double> full, std::span<const double> no_text,
                                 std::span<const double> no_st, std::span<const double> no_both, double alpha,
                                 double beta) {
    if (full.size() != no_text.size() || full.size() != no_st.size() || full.size() != no_both.size()) {
        throw Error("cfg: logit shapes differ across guidance variants");
    }
    const auto a_s = cfg_semantic(full, no_text, alpha);
    const auto a_none = cfg_semantic(no_st, no_both, alpha);
    return cfg_semantic(a_s, a_none, beta);
}

SampledToken sample_token(std::span<const double> logits, std::span<const std::uint8_t> legal, double temperature,
                          int top_k, Rng& rng) {
    if (!legal.empty() && legal.size() != logits.size()) {
        throw Error("sample_token: legality mask size mismatch");
    }
    std::vector<int> ids;
    ids.reserve(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (legal.empty() || legal[j]) ids.push_back(static_cast<int>(j));
    }
    if (ids.empty()) {
        throw Error("sample_token: no legal id");
    }
    const std::size_t k = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(std::max(top_k, 1)));
    auto better = [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
    ids.resize(k);

    const double u = rng.uniform();
    const double t = temperature > 0.0 ? temperature : 1.0;
    std::vector<double> p(k);
    const double top = logits[ids[0]] / t;
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp(logits[ids[i]] / t - top);
        z += p[i];
    }
    for (auto& x : p) x /= z;
    if (temperature == 0.0) {
        return {ids[0], p[0]};
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        acc += p[i];
        if (u < acc) return {ids[i], p[i]};
    }
    return {ids[k - 1], p[k - 1]};
}

std::size_t kept_count(std::size_t n, int k, int iterations) {
    if (iterations < 1) throw Error("kept_count: iterations must be at least 1");
    if (k >= iterations) return n;
    if (k <= 0) return 0;
    const double frac = 1.0 - std::cos(std::numbers::pi * k / (2.0 * iterations));
    const double raw = std::ceil(static_cast<double>(n) * frac);
    return std::min(n, static_cast<std::size_t>(std::max(raw, 0.0)));
}

namespace {

enum Variant { kFull = 0, kNoText = 1, kNoSt = 2, kNoBoth = 3 };

std::vector<double> to_double(std::span<const Real> v) {
    return {v.begin(), v.end()};
}

struct VariantSet {
    const ArModel& model;
    std::array<std::optional<ArModel::State>, 4> states;
    std::size_t passes = 0;

    void feed(int id) {
        for (auto& s : states) {
            if (!s) continue;
            model.step(*s, id);
            ++passes;
        }
    }
    std::vector<double> logits(Variant v) const {
        if (!states[v]) throw Error("ar_generate: guidance variant was not started");
        return to_double(states[v]->logits);
    }
};

}  // namespace

ArResult ar_generate(const ModelBundle& bundle, std::span<const int> instruction_tokens, const GuidanceWeights& gw,
                     const DecodePolicy& policy, Rng& rng, std::optional<int> forced_language,
                     std::span<const int> prompt_coarse) {
    gw.validate();
    policy.validate();
    nn::NoGradGuard guard;
    const ArModel& model = bundle.ar;
    const bool use_semantic = model.use_semantic();
    const bool need_no_text = gw.gamma != 1.0 || gw.alpha != 1.0;
    const bool need_no_st = use_semantic && gw.beta != 1.0;
    const bool need_no_both = need_no_st && gw.alpha != 1.0;

    const InstructionEncoding enc = model.encode(instruction_tokens);
    VariantSet vs{model, {}, 0};
    vs.states[kFull] = model.start(enc, false, false);
    if (need_no_text) vs.states[kNoText] = model.start(enc, true, false);
    if (need_no_st) vs.states[kNoSt] = model.start(enc, false, true);
    if (need_no_both) vs.states[kNoBoth] = model.start(enc, true, true);

    ArResult out;
    auto text_guided = [&]() {
        const auto full = vs.logits(kFull);
        if (gw.gamma == 1.0) return full;
        return cfg_semantic(full, vs.logits(kNoText), gw.gamma);
    };
    auto acoustic_guided = [&]() {
        const auto full = vs.logits(kFull);
        if (gw.alpha == 1.0 && (gw.beta == 1.0 || !use_semantic)) return full;
        const auto a_s = gw.alpha == 1.0 ? full : cfg_semantic(full, vs.logits(kNoText), gw.alpha);
        if (gw.beta == 1.0 || !use_semantic) return a_s;
        const auto no_st = vs.logits(kNoSt);
        const auto a_none = gw.alpha == 1.0 ? no_st : cfg_semantic(no_st, vs.logits(kNoBoth), gw.alpha);
        return cfg_semantic(a_s, a_none, gw.beta);
    };
    auto emit = [&](int id, Segment seg) {
        out.sampled.push_back(id);
        out.sampled_segments.push_back(seg);
        ++out.steps;
        vs.feed(id);
    };

    // Language label.
    if (forced_language) {
        if (!VocabMap::is_lang(*forced_language)) {
            throw Error("ar_generate: forced language id " + std::to_string(*forced_language) + " is not a label");
        }
        out.language = *forced_language;
        vs.feed(out.language);
    } else {
        const auto legal = seqlayout::legality_mask(Segment::lang);
        out.language = sample_token(text_guided(), legal, policy.temperature, policy.top_k, rng).id;
        emit(out.language, Segment::lang);
    }

    if (use_semantic) {
        auto legal = seqlayout::legality_mask(Segment::semantic);
        while (true) {
            if (out.semantic.size() >= policy.max_semantic) {
                out.semantic_truncated = true;
                vs.feed(VocabMap::s_eos);
                break;
            }
            // At least one semantic token before S_eos.
            legal[VocabMap::s_eos] = out.semantic.empty() ? 0 : 1;
            const int id = sample_token(text_guided(), legal, policy.temperature, policy.top_k, rng).id;
            emit(id, Segment::semantic);
            if (id == VocabMap::s_eos) break;
            out.semantic.push_back(id - VocabMap::semantic_base);
        }
    }

    for (int code : prompt_coarse) {
        if (code < 0 || code >= VocabMap::acoustic_count) {
            throw Error("ar_generate: prompt code " + std::to_string(code) + " out of range");
        }
        out.coarse.push_back(code);
        vs.feed(VocabMap::acoustic(code));
    }
    out.prompt_frames = prompt_coarse.size();

    auto legal = seqlayout::legality_mask(Segment::coarse);
    while (true) {
        if (out.coarse.size() >= policy.max_frames) {
            out.coarse_truncated = true;
            break;
        }
        // At least one generated frame before A_eos.
        legal[VocabMap::a_eos] = out.coarse.size() > out.prompt_frames ? 1 : 0;
        const int id = sample_token(acoustic_guided(), legal, policy.temperature, policy.top_k, rng).id;
        out.sampled.push_back(id);
        out.sampled_segments.push_back(Segment::coarse);
        ++out.steps;
        if (id == VocabMap::a_eos) break;
        out.coarse.push_back(id - VocabMap::acoustic_base);
        if (out.coarse.size() < policy.max_frames) vs.feed(id);
    }
    out.forward_passes = vs.passes;
    return out;
}

AcousticGrid nar_generate(const ModelBundle& bundle, std::span<const int> instruction_tokens, int language,
                          std::span<const int> semantic, std::span<const int> coarse, const AcousticGrid* prompt,
                          const DecodePolicy& policy, Rng& rng, NarStats* stats) {
    policy.validate();
    nn::NoGradGuard guard;
    const NarModel& model = bundle.nar;
    const std::size_t n = model.codec_layers();
    const std::size_t frames = coarse.size();
    if (frames == 0) {
        throw Error("nar_generate: empty coarse layer");
    }
    std::size_t u = 0;
    if (prompt != nullptr && !prompt->empty()) {
        if (prompt->layers != n) {
            throw Error("nar_generate: prompt has " + std::to_string(prompt->layers) + " layers, model uses " +
                        std::to_string(n));
        }
        if (prompt->frames > frames) {
            throw Error("nar_generate: prompt longer than the coarse layer");
        }
        u = prompt->frames;
    }

    AcousticGrid grid(frames, n);
    for (std::size_t t = 0; t < frames; ++t) grid.at(t, 0) = coarse[t];
    for (std::size_t t = 0; t < u; ++t) {
        for (std::size_t l = 0; l < n; ++l) grid.at(t, l) = prompt->at(t, l);
    }

    const InstructionEncoding enc = model.encode(instruction_tokens);
    const std::size_t suffix = frames - u;
    NarStats local;
    for (std::size_t layer = 1; layer < n; ++layer) {
        for (std::size_t t = u; t < frames; ++t) grid.at(t, layer) = VocabMap::local_mask_at;
        std::vector<std::size_t> open(suffix);
        std::iota(open.begin(), open.end(), u);
        std::size_t kept = 0;
        for (int k = 1; k <= policy.nar_iterations && !open.empty(); ++k) {
            const nn::Tensor logits = model.forward(enc, language, semantic, grid, u, layer);
            ++local.forward_passes;
            struct Candidate {
                std::size_t frame;
                int id;
                double confidence;
            };
            std::vector<Candidate> cands;
            cands.reserve(open.size());
            const std::size_t vocab = logits.cols();
            for (std::size_t t : open) {
                const auto row = logits.values().subspan(t * vocab, vocab);
                const auto drawn = sample_token(to_double(row), {}, policy.temperature, policy.top_k, rng);
                double conf = drawn.prob;
                if (policy.confidence == ConfidenceRule::prob_gumbel) conf += rng.gumbel();
                cands.push_back({t, drawn.id, conf});
            }
            const std::size_t target = kept_count(suffix, k, policy.nar_iterations);
            const std::size_t take = std::min(cands.size(), target > kept ? target - kept : std::size_t{0});
            std::stable_sort(cands.begin(), cands.end(),
                             [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });
            for (std::size_t i = 0; i < take; ++i) grid.at(cands[i].frame, layer) = cands[i].id;
            kept += take;
            open.clear();
            for (std::size_t i = take; i < cands.size(); ++i) open.push_back(cands[i].frame);
            std::sort(open.begin(), open.end());
        }
        local.positions_decoded += suffix;
        ++local.layers_decoded;
    }
    if (stats) *stats = local;
    return grid;
}

std::string to_json(const GenerationReport& r) {
    nlohmann::json j;
    j["instruction"] = r.instruction;
    j["seed"] = r.seed;
    j["gamma"] = r.weights.gamma;
    j["alpha"] = r.weights.alpha;
    j["beta"] = r.weights.beta;
    j["temperature"] = r.policy.temperature;
    j["top_k"] = r.policy.top_k;
    j["nar_iterations"] = r.policy.nar_iterations;
    j["confidence"] = r.policy.confidence == ConfidenceRule::prob ? "prob" : "prob+gumbel";
    j["language"] = r.language;
    j["semantic_len"] = r.semantic_len;
    j["coarse_len"] = r.coarse_len;
    j["frames"] = r.frames;
    j["prompt_len"] = r.prompt_len;
    j["semantic_truncated"] = r.semantic_truncated;
    j["coarse_truncated"] = r.coarse_truncated;
    j["nar_layers"] = r.nar.layers_decoded;
    j["nar_forward_passes"] = r.nar.forward_passes;
    j["nar_positions"] = r.nar.positions_decoded;
    return j.dump();
}

SynthesisResult synthesize(const ModelBundle& bundle, std::span<const int> instruction_tokens,
                           const GuidanceWeights& gw, const DecodePolicy& policy, const AcousticGrid* prompt,
                           std::optional<int> forced_language) {
    Rng ar_rng(derive_seed(policy.seed, 1));
    Rng nar_rng(derive_seed(policy.seed, 2));
    std::vector<int> prompt_coarse;
    if (prompt != nullptr && !prompt->empty()) {
        if (prompt->layers != bundle.nar.codec_layers()) {
            throw Error("synthesize: prompt has " + std::to_string(prompt->layers) + " layers, model uses " +
                        std::to_string(bundle.nar.codec_layers()));
        }
        prompt_coarse = prompt->column(0);
    }
    const ArResult ar = ar_generate(bundle, instruction_tokens, gw, policy, ar_rng, forced_language, prompt_coarse);

    SynthesisResult out;
    out.semantic = ar.semantic;
    out.grid = nar_generate(bundle, instruction_tokens, ar.language, ar.semantic, ar.coarse, prompt, policy, nar_rng,
                            &out.report.nar);
    auto& r = out.report;
    r.instruction = toyworld::tokens_to_text(instruction_tokens);
    r.seed = policy.seed;
    r.weights = gw;
    r.policy = policy;
    r.language = ar.language;
    r.semantic_len = ar.semantic.size();
    r.coarse_len = ar.coarse.size();
    r.frames = out.grid.frames;
    r.prompt_len = ar.prompt_frames;
    r.semantic_truncated = ar.semantic_truncated;
    r.coarse_truncated = ar.coarse_truncated;
    return out;
}

ICODEC_CORE_END
