#pragma once

// Synthetic speech world: instructions, their ground-truth token streams, and
// oracle decoders that read content, attributes and speaker back out of any
// acoustic grid.
//
// Acoustic layers are 0-based in code. Layer 0 is the coarse layer; layers
// 1..n-1 carry residual detail. The value written into residual layer L >= 2
// uses the 1-based column number L + 1.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace icodec::toyworld {

enum class Pitch : std::uint8_t { low, mid, high };
enum class Speed : std::uint8_t { slow, mid, fast };
enum class Energy : std::uint8_t { low, mid, high };
enum class Emotion : std::uint8_t { neutral, happy, sad, angry };
enum class Language : std::uint8_t { L0, L1 };

/// Curriculum phase; controls how much description an instruction carries.
enum class Phase : std::uint8_t { pretrain, instruct, stress };

inline constexpr int kPitchClasses = 3;
inline constexpr int kSpeedClasses = 3;
inline constexpr int kEnergyClasses = 3;
inline constexpr int kEmotionClasses = 4;
inline constexpr int kLanguages = 2;
inline constexpr int kSymbolsPerLanguage = 16;
inline constexpr int kContentSymbols = kSymbolsPerLanguage * kLanguages;
inline constexpr int kMinContent = 1;
inline constexpr int kMaxContent = 12;
inline constexpr int kAcousticVocab = 96;
inline constexpr int kCodecLayers = 4;
inline constexpr double kStressProbability = 0.25;

/// Frames emitted per content symbol for each speed class.
inline constexpr std::array<int, 3> kFramesPerSymbol = {6, 4, 2};

struct AttributeSet {
    Pitch pitch = Pitch::mid;
    Speed speed = Speed::mid;
    Energy energy = Energy::mid;
    Emotion emotion = Emotion::neutral;
    std::optional<int> stress_index;
    Language language = Language::L0;

    bool operator==(const AttributeSet&) const = default;
};

/// Ordering of the description relative to the quoted content.
enum class Template : std::uint8_t { desc_before, desc_after, interleaved };

/// Instruction token vocabulary.
namespace tok {
inline constexpr int pad = 0;
inline constexpr int open_quote = 1;
inline constexpr int close_quote = 2;
inline constexpr int content_base = 3;
inline constexpr int pitch_base = content_base + kContentSymbols;  // 35
inline constexpr int speed_base = pitch_base + kPitchClasses;      // 38
inline constexpr int energy_base = speed_base + kSpeedClasses;     // 41
inline constexpr int emotion_base = energy_base + kEnergyClasses;  // 44
inline constexpr int stress = emotion_base + kEmotionClasses;      // 48
inline constexpr int index_base = stress + 1;                      // 49
inline constexpr int say = index_base + kMaxContent;               // 61
inline constexpr int with = say + 1;                               // 62
inline constexpr int vocab_size = with + 1;                        // 63
}  // namespace tok

struct Instruction {
    std::vector<int> tokens;
    AttributeSet attributes;
    std::vector<int> content;  // global content-symbol ids in [0, 32)
    std::uint32_t speaker_seed = 0;

    bool operator==(const Instruction&) const = default;
};

/// T x n grid of codec ids in [0, kAcousticVocab), row-major by frame.
struct AcousticGrid {
    std::size_t frames = 0;
    std::size_t layers = 0;
    std::vector<int> values;

    AcousticGrid() = default;
    AcousticGrid(std::size_t t, std::size_t n) : frames(t), layers(n), values(t * n, 0) {}

    int& at(std::size_t t, std::size_t layer) { return values[t * layers + layer]; }
    int at(std::size_t t, std::size_t layer) const { return values[t * layers + layer]; }
    std::vector<int> column(std::size_t layer) const;
    bool empty() const { return frames == 0; }
    /// First `count` frames, all layers.
    AcousticGrid prefix(std::size_t count) const;

    bool operator==(const AcousticGrid&) const = default;
};

/// Normalized histogram over residual-layer codes.
struct SpeakerEmbedding {
    std::vector<double> values;
};

/// Attributes recovered from a grid. Language is not observable acoustically.
struct ClassifiedAttributes {
    Pitch pitch = Pitch::low;
    Speed speed = Speed::slow;
    Energy energy = Energy::low;
    Emotion emotion = Emotion::neutral;
    std::optional<int> stress_index;

    bool operator==(const ClassifiedAttributes&) const = default;
};

int frames_for(Speed speed);
int language_offset(Language language);
Language language_of_symbol(int symbol);
/// Semantic id of a content symbol; equals language offset + index.
int semantic_id(int symbol);

/// Samples a full instruction (all four global attributes described, stress
/// present with probability 0.25). Pure function of (seed, language).
Instruction sample_instruction(std::uint64_t seed, Language language);

/// Same world, shaped for a curriculum phase: pretrain keeps only the quoted
/// content (stress cleared), instruct is sample_instruction as-is, stress
/// forces a stress marker.
Instruction sample_for_phase(std::uint64_t seed, Language language, Phase phase);

/// Lays out instruction tokens. `attribute_order` permutes the description
/// phrases; `split` is the number of phrases placed before the quote in the
/// interleaved template.
std::vector<int> render_tokens(const AttributeSet& attrs, std::span<const int> content, Template layout,
                               std::span<const int> attribute_order, int split);

/// Rebuilds tokens as a content-only instruction (quote, content, quote).
Instruction reduce_to_content(const Instruction& inst);

/// Throws icodec::Error when an invariant of Instruction does not hold.
void validate(const Instruction& inst);

/// Content symbols enclosed by the quote delimiters.
std::vector<int> quoted_content(std::span<const int> tokens);
bool has_attribute_tokens(std::span<const int> tokens);
bool has_stress_tokens(std::span<const int> tokens);

/// st(c) repeated 1 + (hash(c, speaker) mod 3) times per content symbol.
std::vector<int> oracle_semantic_raw(const Instruction& inst);
int semantic_repeat(int symbol, std::uint32_t speaker_seed);

AcousticGrid oracle_acoustic(const Instruction& inst);
std::vector<int> oracle_decode_content(const AcousticGrid& grid);
ClassifiedAttributes oracle_classify(const AcousticGrid& grid);
SpeakerEmbedding oracle_speaker_embed(const AcousticGrid& grid);
double cosine(const SpeakerEmbedding& a, const SpeakerEmbedding& b);

/// Frame-group lengths of layer 0 (maximal runs of equal coarse values).
std::vector<int> coarse_groups(const AcousticGrid& grid);

std::string_view name(Pitch v);
std::string_view name(Speed v);
std::string_view name(Energy v);
std::string_view name(Emotion v);
std::string_view name(Language v);
std::string_view name(Phase v);
Phase parse_phase(std::string_view text);
Language parse_language(std::string_view text);

/// Human-readable token text, e.g. `pitch_high say " a3 a7 "`.
std::string tokens_to_text(std::span<const int> tokens);
std::vector<int> tokens_from_text(std::string_view text);

}  // namespace icodec::toyworld
