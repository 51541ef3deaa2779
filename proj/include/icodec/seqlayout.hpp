#pragma once

// Vocabularies and the exact layout of model inputs: the AR concatenated
// stream <E_ins, l, S, S_eos, A(:,1), A_eos>, the NAR masked-layer example,
// and the per-segment legality masks used at sampling time.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icodec/rng.hpp"
#include "icodec/toyworld.hpp"

namespace icodec::seqlayout {

/// Unified id space shared by the AR input embedding and output softmax.
/// Control ids (MASK_*, PAD) are embeddable but never legal outputs.
struct VocabMap {
    static constexpr int instruction_vocab = toyworld::tok::vocab_size;
    static constexpr int lang_base = 0;
    static constexpr int lang_count = toyworld::kLanguages;
    static constexpr int semantic_base = lang_base + lang_count;  // 2
    static constexpr int semantic_count = toyworld::kContentSymbols;
    static constexpr int s_eos = semantic_base + semantic_count;  // 34
    static constexpr int acoustic_base = s_eos + 1;               // 35
    static constexpr int acoustic_count = toyworld::kAcousticVocab;
    static constexpr int a_eos = acoustic_base + acoustic_count;  // 131
    static constexpr int mask_st = a_eos + 1;
    static constexpr int mask_text = mask_st + 1;
    static constexpr int mask_at = mask_text + 1;
    static constexpr int pad = mask_at + 1;
    static constexpr int unified_size = pad + 1;  // 136
    /// Layer-local acoustic id used for masked NAR positions.
    static constexpr int local_mask_at = acoustic_count;

    static constexpr int lang_id(toyworld::Language l) { return lang_base + static_cast<int>(l); }
    static constexpr int semantic(int st) { return semantic_base + st; }
    static constexpr int acoustic(int code) { return acoustic_base + code; }
    static constexpr bool is_lang(int id) { return id >= lang_base && id < lang_base + lang_count; }
    static constexpr bool is_semantic(int id) { return id >= semantic_base && id < semantic_base + semantic_count; }
    static constexpr bool is_acoustic(int id) { return id >= acoustic_base && id < acoustic_base + acoustic_count; }

    /// Named ranges, for serialization into checkpoint headers.
    static std::vector<std::pair<std::string, int>> table();
};

struct SemanticSequence {
    int language = VocabMap::lang_id(toyworld::Language::L0);  // unified id
    std::vector<int> ids;                                        // semantic ids in [0, 32)
    bool terminated = true;
};

enum class Segment : std::uint8_t { lang, semantic, coarse };

struct ArTrainingExample {
    std::vector<int> instruction_tokens;
    std::size_t prefix_len = 0;   // m
    std::vector<int> targets;     // unified ids
    std::vector<int> inputs;      // unified ids fed after the prefix (targets minus last, MASK_ST applied)
    std::vector<std::uint8_t> loss_mask;
    bool drop_text = false;
    bool drop_st = false;

    bool operator==(const ArTrainingExample&) const = default;
};

struct NarTrainingExample {
    std::vector<int> instruction_tokens;
    int language = 0;              // unified id
    std::vector<int> semantic;     // semantic ids (may be empty for the no-ST variant)
    toyworld::AcousticGrid grid;
    std::size_t target_layer = 1;  // 0-based, in [1, n)
    std::size_t prompt_len = 0;    // u
    double mask_ratio = 0.0;       // rho
    std::vector<std::size_t> masked;  // sorted frame indices, all >= prompt_len

    bool operator==(const NarTrainingExample&) const = default;
};

/// Collapses maximal runs of equal ids.
std::vector<int> dedup(std::span<const int> raw);

SemanticSequence semantic_sequence(const toyworld::Instruction& inst);

/// Builds the AR concatenated example. With `use_semantic` false the S and
/// S_eos segment is omitted entirely (ablation without the semantic stage).
ArTrainingExample build_ar_example(const toyworld::Instruction& inst, const SemanticSequence& sem,
                                   std::span<const int> coarse, bool drop_text, bool drop_st,
                                   bool use_semantic = true);

/// Random quantities of one NAR example.
struct NarDraw {
    std::size_t target_layer = 1;
    std::size_t prompt_len = 0;
    double v = 1.0;  // mask-ratio draw in (0, 1]
};

struct NarLayoutOptions {
    double p_no_prompt = 0.3;
    double prompt_min = 0.2;
    double prompt_max = 0.5;
};

NarDraw draw_nar(Rng& rng, std::size_t frames, std::size_t layers, const NarLayoutOptions& options = {});

/// rho = cos(pi * v / 2), evaluated so that v = 1 gives exactly 0.
double mask_ratio(double v);
/// ceil(rho * suffix_len), clamped to [0, suffix_len].
std::size_t mask_count(double rho, std::size_t suffix_len);

/// Full NAR example from a seed: draw_nar followed by a uniform choice of the
/// masked suffix positions.
NarTrainingExample build_nar_example(const toyworld::Instruction& inst, const SemanticSequence& sem,
                                     const toyworld::AcousticGrid& grid, std::uint64_t rng_seed,
                                     const NarLayoutOptions& options = {});
NarTrainingExample build_nar_example(const toyworld::Instruction& inst, const SemanticSequence& sem,
                                     const toyworld::AcousticGrid& grid, const NarDraw& draw, Rng& rng);

/// Boolean mask over the unified vocabulary admitting exactly the ids that
/// may be emitted while generating `segment`.
std::vector<std::uint8_t> legality_mask(Segment segment);

/// Segment predicted at every output row of an AR pass over `ids` (one row per
/// id plus the row after the last one). Throws on malformed ordering.
std::vector<Segment> prediction_segments(std::span<const int> ids, bool use_semantic = true);

}  // namespace icodec::seqlayout
