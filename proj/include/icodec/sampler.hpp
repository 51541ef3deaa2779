#pragma once

// Inference: guidance arithmetic, AR generation of <l, S, A(:,1)>, iterative
// parallel decoding of the residual layers, and the end-to-end synthesize().

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icodec/models.hpp"

ICODEC_CORE_BEGIN

/// Strength 1 disables a guidance term; 0 keeps only the weaker branch.
struct GuidanceWeights {
    double gamma = 2.0;  // text guidance on the semantic stage
    double alpha = 2.0;  // text guidance on the coarse acoustic stage
    double beta = 2.0;   // semantic guidance on the coarse acoustic stage

    void validate() const;
    bool operator==(const GuidanceWeights&) const = default;
};

enum class ConfidenceRule : std::uint8_t { prob, prob_gumbel };

struct DecodePolicy {
    /// 0 selects greedy decoding.
    double temperature = 1.0;
    int top_k = 16;
    std::size_t max_semantic = 24;
    std::size_t max_frames = 160;
    int nar_iterations = 4;
    ConfidenceRule confidence = ConfidenceRule::prob;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const DecodePolicy&) const = default;
};

/// uncond + gamma * (cond - uncond); exactly cond at gamma 1 and exactly
/// uncond at gamma 0. Throws on a shape mismatch.
std::vector<double> cfg_semantic(std::span<const double> cond, std::span<const double> uncond, double gamma);

/// Nested two-knob guidance over the four conditioning variants:
///   a_s    = cfg(full, no_text, alpha)
///   a_none = cfg(no_st, no_both, alpha)
///   result = cfg(a_s, a_none, beta)
std::vector<double> cfg_acoustic(std::span<const double> full, std::span<const double> no_text,
                                 std::span<const double> no_st, std::span<const double> no_both, double alpha,
                                 double beta);

struct SampledToken {
    int id = -1;
    double prob = 0.0;  // probability of `id` under the sampling distribution
};

/// Temperature plus top-k sampling restricted to ids with legal[id] != 0
/// (every id when `legal` is empty). Ties in the top-k cut go to the lower id.
/// Consumes exactly one uniform draw.
SampledToken sample_token(std::span<const double> logits, std::span<const std::uint8_t> legal, double temperature,
                          int top_k, Rng& rng);

/// Cumulative positions kept after iteration k of K over n masked positions:
/// ceil(n * (1 - cos(pi k / 2K))), and n at k = K.
std::size_t kept_count(std::size_t n, int k, int iterations);

struct ArResult {
    int language = 0;               // unified id
    std::vector<int> semantic;      // semantic ids in [0, 32)
    std::vector<int> coarse;        // codes, prompt coarse first
    std::size_t prompt_frames = 0;
    bool semantic_truncated = false;
    bool coarse_truncated = false;
    std::size_t steps = 0;          // sampled tokens
    std::size_t forward_passes = 0;
    /// Every sampled unified id, in order (for legality auditing).
    std::vector<int> sampled;
    std::vector<seqlayout::Segment> sampled_segments;
};

/// Samples l, then S up to S_eos, then coarse codes up to A_eos. Prompt
/// coarse codes, when given, are fed after S_eos before sampling resumes.
ArResult ar_generate(const ModelBundle& bundle, std::span<const int> instruction_tokens, const GuidanceWeights& gw,
                     const DecodePolicy& policy, Rng& rng, std::optional<int> forced_language = std::nullopt,
                     std::span<const int> prompt_coarse = {});

struct NarStats {
    std::size_t layers_decoded = 0;
    std::size_t forward_passes = 0;
    std::size_t positions_decoded = 0;
};

/// Fills layers 1..n-1 of a T x n grid whose coarse layer is `coarse`. The
/// first prompt->frames frames are copied from `prompt` and never touched.
toyworld::AcousticGrid nar_generate(const ModelBundle& bundle, std::span<const int> instruction_tokens, int language,
                                    std::span<const int> semantic, std::span<const int> coarse,
                                    const toyworld::AcousticGrid* prompt, const DecodePolicy& policy, Rng& rng,
                                    NarStats* stats = nullptr);

struct GenerationReport {
    std::string instruction;
    std::uint64_t seed = 0;
    GuidanceWeights weights;
    DecodePolicy policy;
    int language = 0;
    std::size_t semantic_len = 0;
    std::size_t coarse_len = 0;
    std::size_t frames = 0;
    std::size_t prompt_len = 0;
    bool semantic_truncated = false;
    bool coarse_truncated = false;
    NarStats nar;
};

std::string to_json(const GenerationReport& report);

struct SynthesisResult {
    toyworld::AcousticGrid grid;
    std::vector<int> semantic;
    GenerationReport report;
};

/// AR then NAR. Randomness for the two stages comes from
/// derive_seed(policy.seed, 1) and derive_seed(policy.seed, 2).
SynthesisResult synthesize(const ModelBundle& bundle, std::span<const int> instruction_tokens,
                           const GuidanceWeights& gw, const DecodePolicy& policy,
                           const toyworld::AcousticGrid* prompt = nullptr,
                           std::optional<int> forced_language = std::nullopt);

ICODEC_CORE_END
