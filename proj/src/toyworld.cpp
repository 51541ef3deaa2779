#include "icodec/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "icodec/error.hpp"
#include "icodec/rng.hpp"

namespace icodec::toyworld {

namespace {

// Mode of small non-negative integers restricted to [0, classes); ties go to
// the smallest value, no in-range value yields 0.
int mode_in_range(std::span<const int> values, int classes) {
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (int v : values) {
        if (v >= 0 && v < classes) {
            ++counts[static_cast<std::size_t>(v)];
        }
    }
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

constexpr std::array<std::string_view, 3> kPitchNames = {"low", "mid", "high"};
constexpr std::array<std::string_view, 3> kSpeedNames = {"slow", "mid", "fast"};
constexpr std::array<std::string_view, 3> kEnergyNames = {"low", "mid", "high"};
constexpr std::array<std::string_view, 4> kEmotionNames = {"neutral", "happy", "sad", "angry"};

}  // namespace

std::vector<int> AcousticGrid::column(std::size_t layer) const {
    std::vector<int> out(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        out[t] = at(t, layer);
    }
    return out;
}

AcousticGrid AcousticGrid::prefix(std::size_t count) const {
    count = std::min(count, frames);
    AcousticGrid out(count, layers);
    std::copy_n(values.begin(), static_cast<std::ptrdiff_t>(count * layers), out.values.begin());
    return out;
}

int frames_for(Speed speed) {
    return kFramesPerSymbol[static_cast<std::size_t>(speed)];
}

int language_offset(Language language) {
    return static_cast<int>(language) * kSymbolsPerLanguage;
}

Language language_of_symbol(int symbol) {
    return symbol < kSymbolsPerLanguage ? Language::L0 : Language::L1;
}

int semantic_id(int symbol) {
    return symbol;
}

std::vector<int> render_tokens(const AttributeSet& attrs, std::span<const int> content, Template layout,
                               std::span<const int> attribute_order, int split) {
    std::vector<std::vector<int>> phrases;
    for (int which : attribute_order) {
        switch (which) {
            case 0: phrases.push_back({tok::pitch_base + static_cast<int>(attrs.pitch)}); break;
            case 1: phrases.push_back({tok::speed_base + static_cast<int>(attrs.speed)}); break;
            case 2: phrases.push_back({tok::energy_base + static_cast<int>(attrs.energy)}); break;
            case 3: phrases.push_back({tok::emotion_base + static_cast<int>(attrs.emotion)}); break;
            case 4:
                if (attrs.stress_index) {
                    phrases.push_back({tok::stress, tok::index_base + *attrs.stress_index});
                }
                break;
            default: throw Error("render_tokens: unknown attribute phrase " + std::to_string(which));
        }
    }

    std::vector<int> quoted;
    quoted.push_back(tok::open_quote);
    for (int c : content) {
        quoted.push_back(tok::content_base + c);
    }
    quoted.push_back(tok::close_quote);

    std::vector<int> out;
    auto append_phrases = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            out.insert(out.end(), phrases[i].begin(), phrases[i].end());
        }
    };
    if (phrases.empty()) {
        return quoted;
    }
    switch (layout) {
        case Template::desc_before:
            append_phrases(0, phrases.size());
            out.push_back(tok::say);
            out.insert(out.end(), quoted.begin(), quoted.end());
            break;
        case Template::desc_after:
            out.insert(out.end(), quoted.begin(), quoted.end());
            out.push_back(tok::with);
            append_phrases(0, phrases.size());
            break;
        case Template::interleaved: {
            const auto cut = static_cast<std::size_t>(std::clamp(split, 0, static_cast<int>(phrases.size())));
            append_phrases(0, cut);
            out.push_back(tok::say);
            out.insert(out.end(), quoted.begin(), quoted.end());
            out.push_back(tok::with);
            append_phrases(cut, phrases.size());
            break;
        }
    }
    return out;
}

Instruction sample_instruction(std::uint64_t seed, Language language) {
    Rng rng(derive_seed(seed, 0x1257ULL, static_cast<std::uint64_t>(language)));
    Instruction inst;
    AttributeSet& a = inst.attributes;
    a.language = language;
    a.pitch = static_cast<Pitch>(rng.below(kPitchClasses));
    a.speed = static_cast<Speed>(rng.below(kSpeedClasses));
    a.energy = static_cast<Energy>(rng.below(kEnergyClasses));
    a.emotion = static_cast<Emotion>(rng.below(kEmotionClasses));

    const int length = rng.between(kMinContent, kMaxContent);
    const int offset = language_offset(language);
    int previous = -1;
    for (int k = 0; k < length; ++k) {
        // No immediate repetition: adjacent equal symbols would merge in dedup.
        int index = static_cast<int>(rng.below(previous < 0 ? kSymbolsPerLanguage : kSymbolsPerLanguage - 1));
        if (previous >= 0 && index >= previous) {
            ++index;
        }
        previous = index;
        inst.content.push_back(offset + index);
    }
    if (rng.bernoulli(kStressProbability)) {
        a.stress_index = static_cast<int>(rng.below(static_cast<std::size_t>(length)));
    }

    const auto layout = static_cast<Template>(rng.below(3));
    std::vector<int> order = {0, 1, 2, 3};
    if (a.stress_index) {
        order.push_back(4);
    }
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    const int split = rng.between(1, static_cast<int>(order.size()) - 1);
    inst.speaker_seed = static_cast<std::uint32_t>(rng.next() >> 32);
    inst.tokens = render_tokens(a, inst.content, layout, order, split);
    return inst;
}

Instruction reduce_to_content(const Instruction& inst) {
    Instruction out = inst;
    out.attributes.stress_index.reset();
    out.tokens = render_tokens(out.attributes, out.content, Template::desc_before, {}, 0);
    return out;
}

Instruction sample_for_phase(std::uint64_t seed, Language language, Phase phase) {
    Instruction inst = sample_instruction(seed, language);
    switch (phase) {
        case Phase::pretrain:
            return reduce_to_content(inst);
        case Phase::instruct:
            return inst;
        case Phase::stress: {
            if (inst.attributes.stress_index) {
                return inst;
            }
            Rng rng(derive_seed(seed, 0x57e55ULL, static_cast<std::uint64_t>(language)));
            inst.attributes.stress_index = static_cast<int>(rng.below(inst.content.size()));
            const auto layout = static_cast<Template>(rng.below(3));
            std::vector<int> order = {0, 1, 2, 3, 4};
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::swap(order[i], order[rng.below(i + 1)]);
            }
            inst.tokens = render_tokens(inst.attributes, inst.content, layout, order, rng.between(1, 4));
            return inst;
        }
    }
    return inst;
}

std::vector<int> quoted_content(std::span<const int> tokens) {
    std::vector<int> out;
    bool inside = false;
    for (int t : tokens) {
        if (t == tok::open_quote) {
            inside = true;
        } else if (t == tok::close_quote) {
            break;
        } else if (inside && t >= tok::content_base && t < tok::content_base + kContentSymbols) {
            out.push_back(t - tok::content_base);
        }
    }
    return out;
}

bool has_attribute_tokens(std::span<const int> tokens) {
    return std::any_of(tokens.begin(), tokens.end(), [](int t) { return t >= tok::pitch_base && t < tok::stress; });
}

bool has_stress_tokens(std::span<const int> tokens) {
    return std::find(tokens.begin(), tokens.end(), tok::stress) != tokens.end();
}

void validate(const Instruction& inst) {
    const auto& c = inst.content;
    if (c.size() < static_cast<std::size_t>(kMinContent) || c.size() > static_cast<std::size_t>(kMaxContent)) {
        throw Error("instruction: content length " + std::to_string(c.size()) + " outside [1, 12]");
    }
    const int offset = language_offset(inst.attributes.language);
    for (std::size_t k = 0; k < c.size(); ++k) {
        if (c[k] < offset || c[k] >= offset + kSymbolsPerLanguage) {
            throw Error("instruction: content symbol " + std::to_string(c[k]) + " not in language alphabet");
        }
        if (k > 0 && c[k] == c[k - 1]) {
            throw Error("instruction: immediate repetition of content symbol at " + std::to_string(k));
        }
    }
    if (inst.attributes.stress_index &&
        (*inst.attributes.stress_index < 0 || *inst.attributes.stress_index >= static_cast<int>(c.size()))) {
        throw Error("instruction: stress index out of range");
    }
    const auto open = std::count(inst.tokens.begin(), inst.tokens.end(), tok::open_quote);
    const auto close = std::count(inst.tokens.begin(), inst.tokens.end(), tok::close_quote);
    if (open != 1 || close != 1) {
        throw Error("instruction: expected exactly one quote pair");
    }
    const auto open_at = std::find(inst.tokens.begin(), inst.tokens.end(), tok::open_quote);
    const auto close_at = std::find(inst.tokens.begin(), inst.tokens.end(), tok::close_quote);
    if (close_at < open_at) {
        throw Error("instruction: quotes out of order");
    }
    if (static_cast<std::size_t>(close_at - open_at - 1) != c.size() || quoted_content(inst.tokens) != c) {
        throw Error("instruction: quoted span does not enclose exactly the content");
    }
    for (int t : inst.tokens) {
        if (t < 0 || t >= tok::vocab_size || t == tok::pad) {
            throw Error("instruction: token id " + std::to_string(t) + " out of vocabulary");
        }
    }
}

int semantic_repeat(int symbol, std::uint32_t speaker_seed) {
    return 1 + static_cast<int>(derive_seed(speaker_seed, static_cast<std::uint64_t>(symbol)) % 3);
}

std::vector<int> oracle_semantic_raw(const Instruction& inst) {
    std::vector<int> out;
    for (int c : inst.content) {
        out.insert(out.end(), static_cast<std::size_t>(semantic_repeat(c, inst.speaker_seed)), semantic_id(c));
    }
    return out;
}

AcousticGrid oracle_acoustic(const Instruction& inst) {
    const auto& a = inst.attributes;
    const int d = frames_for(a.speed);
    AcousticGrid grid(inst.content.size() * static_cast<std::size_t>(d), kCodecLayers);
    std::size_t t = 0;
    for (std::size_t k = 0; k < inst.content.size(); ++k) {
        const int stressed = (a.stress_index && *a.stress_index == static_cast<int>(k)) ? 1 : 0;
        for (int j = 0; j < d; ++j, ++t) {
            grid.at(t, 0) = semantic_id(inst.content[k]) * 3 + static_cast<int>(a.pitch);
            grid.at(t, 1) = static_cast<int>(a.energy) * 8 + static_cast<int>(a.emotion) * 2 + stressed;
            for (std::size_t layer = 2; layer < grid.layers; ++layer) {
                // Speaker code advances with the frame's position inside its symbol.
                const std::uint64_t column = layer + 1;
                grid.at(t, layer) = static_cast<int>(
                    (static_cast<std::uint64_t>(inst.speaker_seed) + column * static_cast<std::uint64_t>(j)) %
                    kAcousticVocab);
            }
        }
    }
    return grid;
}

std::vector<int> coarse_groups(const AcousticGrid& grid) {
    std::vector<int> groups;
    for (std::size_t t = 0; t < grid.frames; ++t) {
        if (t == 0 || grid.at(t, 0) != grid.at(t - 1, 0)) {
            groups.push_back(1);
        } else {
            ++groups.back();
        }
    }
    return groups;
}

std::vector<int> oracle_decode_content(const AcousticGrid& grid) {
    std::vector<int> out;
    for (std::size_t t = 0; t < grid.frames; ++t) {
        if (t == 0 || grid.at(t, 0) != grid.at(t - 1, 0)) {
            out.push_back(grid.at(t, 0) / 3);
        }
    }
    return out;
}

ClassifiedAttributes oracle_classify(const AcousticGrid& grid) {
    if (grid.empty()) {
        throw Error("oracle_classify: empty grid");
    }
    ClassifiedAttributes out;
    std::vector<int> pitch(grid.frames), energy(grid.frames), emotion(grid.frames);
    for (std::size_t t = 0; t < grid.frames; ++t) {
        pitch[t] = grid.at(t, 0) % 3;
        if (grid.layers > 1) {
            energy[t] = grid.at(t, 1) / 8;
            emotion[t] = (grid.at(t, 1) % 8) / 2;
        }
    }
    out.pitch = static_cast<Pitch>(mode_in_range(pitch, kPitchClasses));
    out.energy = static_cast<Energy>(mode_in_range(energy, kEnergyClasses));
    out.emotion = static_cast<Emotion>(mode_in_range(emotion, kEmotionClasses));

    const auto groups = coarse_groups(grid);
    const double mean_length = static_cast<double>(grid.frames) / static_cast<double>(groups.size());
    std::size_t best = 0;
    for (std::size_t s = 1; s < kFramesPerSymbol.size(); ++s) {
        if (std::abs(mean_length - kFramesPerSymbol[s]) < std::abs(mean_length - kFramesPerSymbol[best])) {
            best = s;
        }
    }
    out.speed = static_cast<Speed>(best);

    if (grid.layers > 1) {
        std::size_t t = 0;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            int odd = 0;
            for (int j = 0; j < groups[g]; ++j, ++t) {
                odd += grid.at(t, 1) & 1;
            }
            if (!out.stress_index && 2 * odd > groups[g]) {
                out.stress_index = static_cast<int>(g);
            }
        }
    }
    return out;
}

SpeakerEmbedding oracle_speaker_embed(const AcousticGrid& grid) {
    if (grid.layers < 3) {
        throw Error("oracle_speaker_embed: no residual layers");
    }
    SpeakerEmbedding emb;
    emb.values.assign(kAcousticVocab, 0.0);
    std::size_t total = 0;
    for (std::size_t t = 0; t < grid.frames; ++t) {
        for (std::size_t layer = 2; layer < grid.layers; ++layer) {
            const int v = grid.at(t, layer);
            if (v < 0 || v >= kAcousticVocab) {
                throw Error("oracle_speaker_embed: code " + std::to_string(v) + " out of range");
            }
            emb.values[static_cast<std::size_t>(v)] += 1.0;
            ++total;
        }
    }
    if (total > 0) {
        for (double& v : emb.values) {
            v /= static_cast<double>(total);
        }
    }
    return emb;
}

double cosine(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
    if (a.values.size() != b.values.size()) {
        throw Error("cosine: dimension mismatch");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    if (a.values == b.values) {
        return 1.0;
    }
    return dot / std::sqrt(na * nb);
}

std::string_view name(Pitch v) { return kPitchNames[static_cast<std::size_t>(v)]; }
std::string_view name(Speed v) { return kSpeedNames[static_cast<std::size_t>(v)]; }
std::string_view name(Energy v) { return kEnergyNames[static_cast<std::size_t>(v)]; }
std::string_view name(Emotion v) { return kEmotionNames[static_cast<std::size_t>(v)]; }
std::string_view name(Language v) { return v == Language::L0 ? "L0" : "L1"; }

std::string_view name(Phase v) {
    switch (v) {
        case Phase::pretrain: return "pretrain";
        case Phase::instruct: return "instruct";
        case Phase::stress: return "stress";
    }
    return "?";
}

Phase parse_phase(std::string_view text) {
    if (text == "pretrain") return Phase::pretrain;
    if (text == "instruct") return Phase::instruct;
    if (text == "stress") return Phase::stress;
    throw Error("unknown phase '" + std::string(text) + "'");
}

Language parse_language(std::string_view text) {
    if (text == "L0") return Language::L0;
    if (text == "L1") return Language::L1;
    throw Error("unknown language '" + std::string(text) + "'");
}

namespace {

std::string token_name(int t) {
    if (t == tok::pad) return "<pad>";
    if (t == tok::open_quote || t == tok::close_quote) return "\"";
    if (t >= tok::content_base && t < tok::pitch_base) {
        const int c = t - tok::content_base;
        return std::string(1, c < kSymbolsPerLanguage ? 'a' : 'b') + std::to_string(c % kSymbolsPerLanguage);
    }
    if (t >= tok::pitch_base && t < tok::speed_base) return "pitch_" + std::string(kPitchNames[t - tok::pitch_base]);
    if (t >= tok::speed_base && t < tok::energy_base) return "speed_" + std::string(kSpeedNames[t - tok::speed_base]);
    if (t >= tok::energy_base && t < tok::emotion_base) return "energy_" + std::string(kEnergyNames[t - tok::energy_base]);
    if (t >= tok::emotion_base && t < tok::stress) return "emotion_" + std::string(kEmotionNames[t - tok::emotion_base]);
    if (t == tok::stress) return "stress";
    if (t >= tok::index_base && t < tok::say) return "@" + std::to_string(t - tok::index_base);
    if (t == tok::say) return "say";
    if (t == tok::with) return "with";
    throw Error("tokens_to_text: id " + std::to_string(t) + " out of vocabulary");
}

}  // namespace

std::string tokens_to_text(std::span<const int> tokens) {
    std::string out;
    for (int t : tokens) {
        if (!out.empty()) out += ' ';
        out += token_name(t);
    }
    return out;
}

std::vector<int> tokens_from_text(std::string_view text) {
    std::vector<int> out;
    std::istringstream in{std::string(text)};
    std::string word;
    int quotes = 0;
    while (in >> word) {
        int id = -1;
        if (word == "\"") {
            id = quotes++ == 0 ? tok::open_quote : tok::close_quote;
        } else {
            for (int t = 0; t < tok::vocab_size; ++t) {
                if (t != tok::open_quote && t != tok::close_quote && token_name(t) == word) {
                    id = t;
                    break;
                }
            }
        }
        if (id < 0 || id == tok::pad) {
            throw Error("tokens_from_text: unknown token '" + word + "'");
        }
        out.push_back(id);
    }
    return out;
}

}  // namespace icodec::toyworld
