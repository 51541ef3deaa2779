#include "icodec/seqlayout.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "icodec/error.hpp"

namespace icodec::seqlayout {

using toyworld::AcousticGrid;
using toyworld::Instruction;

std::vector<std::pair<std::string, int>> VocabMap::table() {
    return {
        {"instruction_vocab", instruction_vocab},
        {"lang_base", lang_base},
        {"lang_count", lang_count},
        {"semantic_base", semantic_base},
        {"semantic_count", semantic_count},
        {"s_eos", s_eos},
        {"acoustic_base", acoustic_base},
        {"acoustic_count", acoustic_count},
        {"a_eos", a_eos},
        {"mask_st", mask_st},
        {"mask_text", mask_text},
        {"mask_at", mask_at},
        {"pad", pad},
        {"unified_size", unified_size},
    };
}

std::vector<int> dedup(std::span<const int> raw) {
    std::vector<int> out;
    for (int id : raw) {
        if (out.empty() || out.back() != id) {
            out.push_back(id);
        }
    }
    return out;
}

SemanticSequence semantic_sequence(const Instruction& inst) {
    SemanticSequence sem;
    sem.language = VocabMap::lang_id(inst.attributes.language);
    sem.ids = dedup(toyworld::oracle_semantic_raw(inst));
    sem.terminated = true;
    return sem;
}

ArTrainingExample build_ar_example(const Instruction& inst, const SemanticSequence& sem, std::span<const int> coarse,
                                   bool drop_text, bool drop_st, bool use_semantic) {
    if (coarse.empty()) {
        throw Error("build_ar_example: empty coarse column");
    }
    ArTrainingExample ex;
    ex.instruction_tokens = inst.tokens;
    ex.prefix_len = inst.tokens.size();
    ex.drop_text = drop_text;
    ex.drop_st = use_semantic && drop_st;

    ex.targets.push_back(sem.language);
    ex.loss_mask.push_back(1);
    if (use_semantic) {
        for (int id : sem.ids) {
            ex.targets.push_back(VocabMap::semantic(id));
            ex.loss_mask.push_back(ex.drop_st ? 0 : 1);
        }
        ex.targets.push_back(VocabMap::s_eos);
        ex.loss_mask.push_back(ex.drop_st ? 0 : 1);
    }
    for (int code : coarse) {
        if (code < 0 || code >= VocabMap::acoustic_count) {
            throw Error("build_ar_example: coarse code " + std::to_string(code) + " out of range");
        }
        ex.targets.push_back(VocabMap::acoustic(code));
        ex.loss_mask.push_back(1);
    }
    ex.targets.push_back(VocabMap::a_eos);
    ex.loss_mask.push_back(1);

    ex.inputs.assign(ex.targets.begin(), ex.targets.end() - 1);
    if (ex.drop_st) {
        for (int& id : ex.inputs) {
            if (VocabMap::is_semantic(id)) {
                id = VocabMap::mask_st;
            }
        }
    }
    return ex;
}

double mask_ratio(double v) {
    // cos(pi v / 2) == sin(pi (1 - v) / 2); the sine form is exactly 0 at v = 1.
    return std::sin(std::numbers::pi * (1.0 - v) / 2.0);
}

std::size_t mask_count(double rho, std::size_t suffix_len) {
    const double raw = std::ceil(rho * static_cast<double>(suffix_len));
    return static_cast<std::size_t>(std::clamp(raw, 0.0, static_cast<double>(suffix_len)));
}

NarDraw draw_nar(Rng& rng, std::size_t frames, std::size_t layers, const NarLayoutOptions& options) {
    if (layers < 2) {
        throw Error("build_nar_example: grid needs at least 2 layers");
    }
    NarDraw d;
    d.target_layer = 1 + rng.below(layers - 1);
    if (!rng.bernoulli(options.p_no_prompt)) {
        const double f = options.prompt_min + (options.prompt_max - options.prompt_min) * rng.uniform();
        d.prompt_len = static_cast<std::size_t>(std::lround(f * static_cast<double>(frames)));
        if (frames > 0) {
            d.prompt_len = std::min(d.prompt_len, frames - 1);
        }
    }
    d.v = rng.uniform_open_zero();
    return d;
}

NarTrainingExample build_nar_example(const Instruction& inst, const SemanticSequence& sem, const AcousticGrid& grid,
                                     const NarDraw& draw, Rng& rng) {
    if (grid.layers < 2) {
        throw Error("build_nar_example: grid needs at least 2 layers");
    }
    if (draw.target_layer < 1 || draw.target_layer >= grid.layers) {
        throw Error("build_nar_example: target layer out of range");
    }
    if (grid.frames > 0 && draw.prompt_len >= grid.frames) {
        throw Error("build_nar_example: prompt covers the whole grid");
    }
    NarTrainingExample ex;
    ex.instruction_tokens = inst.tokens;
    ex.language = sem.language;
    ex.semantic = sem.ids;
    ex.grid = grid;
    ex.target_layer = draw.target_layer;
    ex.prompt_len = draw.prompt_len;
    ex.mask_ratio = mask_ratio(draw.v);

    const std::size_t suffix = grid.frames - draw.prompt_len;
    const std::size_t count = mask_count(ex.mask_ratio, suffix);
    std::vector<std::size_t> pool(suffix);
    for (std::size_t i = 0; i < suffix; ++i) {
        pool[i] = draw.prompt_len + i;
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(pool[i], pool[i + rng.below(suffix - i)]);
    }
    ex.masked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(ex.masked.begin(), ex.masked.end());
    return ex;
}

NarTrainingExample build_nar_example(const Instruction& inst, const SemanticSequence& sem, const AcousticGrid& grid,
                                     std::uint64_t rng_seed, const NarLayoutOptions& options) {
    Rng rng(rng_seed);
    const NarDraw draw = draw_nar(rng, grid.frames, grid.layers, options);
    return build_nar_example(inst, sem, grid, draw, rng);
}

std::vector<std::uint8_t> legality_mask(Segment segment) {
    std::vector<std::uint8_t> mask(VocabMap::unified_size, 0);
    auto admit = [&](int begin, int count) {
        std::fill_n(mask.begin() + begin, count, std::uint8_t{1});
    };
    switch (segment) {
        case Segment::lang:
            admit(VocabMap::lang_base, VocabMap::lang_count);
            break;
        case Segment::semantic:
            admit(VocabMap::semantic_base, VocabMap::semantic_count);
            mask[VocabMap::s_eos] = 1;
            break;
        case Segment::coarse:
            admit(VocabMap::acoustic_base, VocabMap::acoustic_count);
            mask[VocabMap::a_eos] = 1;
            break;
    }
    return mask;
}

std::vector<Segment> prediction_segments(std::span<const int> ids, bool use_semantic) {
    std::vector<Segment> rows;
    rows.reserve(ids.size() + 1);
    Segment current = Segment::lang;
    rows.push_back(current);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const int id = ids[t];
        auto fail = [&](const char* what) {
            throw Error("ar sequence: " + std::string(what) + " at position " + std::to_string(t) + " (id " +
                        std::to_string(id) + ")");
        };
        switch (current) {
            case Segment::lang:
                if (!VocabMap::is_lang(id)) fail("expected language label");
                current = use_semantic ? Segment::semantic : Segment::coarse;
                break;
            case Segment::semantic:
                if (id == VocabMap::s_eos) {
                    current = Segment::coarse;
                } else if (!VocabMap::is_semantic(id) && id != VocabMap::mask_st) {
                    fail("expected semantic id");
                }
                break;
            case Segment::coarse:
                if (id == VocabMap::a_eos) {
                    if (t + 1 != ids.size()) fail("A_eos before end of sequence");
                } else if (!VocabMap::is_acoustic(id)) {
                    fail("expected acoustic id");
                }
                break;
        }
        rows.push_back(current);
    }
    return rows;
}

}  // namespace icodec::seqlayout
