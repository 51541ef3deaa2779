#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "icodec/error.hpp"
#include "icodec/rng.hpp"
#include "icodec/seqlayout.hpp"

using namespace icodec;
using namespace icodec::seqlayout;
using toyworld::Instruction;

namespace {

struct Parts {
    Instruction inst;
    SemanticSequence sem;
    toyworld::AcousticGrid grid;
};

Parts parts(std::uint64_t seed) {
    Parts p;
    p.inst = toyworld::sample_instruction(seed, seed % 2 ? toyworld::Language::L1 : toyworld::Language::L0);
    p.sem = semantic_sequence(p.inst);
    p.grid = toyworld::oracle_acoustic(p.inst);
    return p;
}

}  // namespace

TEST_CASE("vocabulary ranges are disjoint and complete") {
    CHECK(VocabMap::unified_size == 136);
    std::vector<int> owner(VocabMap::unified_size, 0);
    for (auto seg : {Segment::lang, Segment::semantic, Segment::coarse}) {
        const auto m = legality_mask(seg);
        REQUIRE(m.size() == static_cast<std::size_t>(VocabMap::unified_size));
        for (std::size_t i = 0; i < m.size(); ++i) owner[i] += m[i];
    }
    const auto lm = legality_mask(Segment::lang);
    CHECK(std::count(lm.begin(), lm.end(), 1) == 2);
    const auto sm = legality_mask(Segment::semantic);
    CHECK(std::count(sm.begin(), sm.end(), 1) == 33);
    const auto cm = legality_mask(Segment::coarse);
    CHECK(std::count(cm.begin(), cm.end(), 1) == 97);
    for (int id = 0; id < VocabMap::unified_size; ++id) {
        const bool control = id >= VocabMap::mask_st;
        CHECK(owner[static_cast<std::size_t>(id)] == (control ? 0 : 1));
    }
}

TEST_CASE("dedup collapses runs") {
    CHECK(dedup(std::vector<int>{7, 7, 3, 3, 3, 7}) == std::vector<int>{7, 3, 7});
    CHECK(dedup(std::vector<int>{}).empty());
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        std::vector<int> x(rng.below(20));
        for (int& v : x) v = static_cast<int>(rng.below(4));
        const auto d = dedup(x);
        CHECK(dedup(d) == d);
        for (std::size_t k = 1; k < d.size(); ++k) CHECK(d[k] != d[k - 1]);
        std::size_t j = 0;
        for (int v : x) {
            if (j < d.size() && v == d[j]) ++j;
        }
        CHECK(j == d.size());
    }
}

TEST_CASE("semantic sequence length equals content length") {
    for (std::uint64_t s = 0; s < 500; ++s) {
        const Parts p = parts(s);
        CHECK(p.sem.ids.size() == p.inst.content.size());
        CHECK(p.sem.language == VocabMap::lang_id(p.inst.attributes.language));
    }
}

TEST_CASE("ar example layout and loss mask") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Parts p = parts(s);
        const auto coarse = p.grid.column(0);
        const auto ex = build_ar_example(p.inst, p.sem, coarse, false, false);
        const std::size_t n = 1 + p.sem.ids.size() + 1 + coarse.size() + 1;
        CHECK(ex.targets.size() == n);
        CHECK(std::accumulate(ex.loss_mask.begin(), ex.loss_mask.end(), 0) == static_cast<int>(n));
        CHECK(ex.prefix_len == p.inst.tokens.size());
        CHECK(ex.inputs == std::vector<int>(ex.targets.begin(), ex.targets.end() - 1));
        CHECK(ex.targets.front() == p.sem.language);
        CHECK(ex.targets[1 + p.sem.ids.size()] == VocabMap::s_eos);
        CHECK(ex.targets.back() == VocabMap::a_eos);

        const auto st = build_ar_example(p.inst, p.sem, coarse, false, true);
        for (std::size_t k = 0; k < n; ++k) {
            const bool semantic = k >= 1 && k <= p.sem.ids.size() + 1;
            CHECK(st.loss_mask[k] == (semantic ? 0 : 1));
        }
        for (int id : st.inputs) CHECK_FALSE(VocabMap::is_semantic(id));
        CHECK(build_ar_example(p.inst, p.sem, coarse, true, true) == build_ar_example(p.inst, p.sem, coarse, true, true));

        const auto nost = build_ar_example(p.inst, p.sem, coarse, false, false, false);
        CHECK(nost.targets.size() == 1 + coarse.size() + 1);
    }
    const Parts p = parts(1);
    CHECK_THROWS_AS(build_ar_example(p.inst, p.sem, std::vector<int>{}, false, false), Error);
}

TEST_CASE("prediction segments follow the stream order") {
    const Parts p = parts(4);
    const auto ex = build_ar_example(p.inst, p.sem, p.grid.column(0), false, false);
    const auto seg = prediction_segments(ex.inputs);
    REQUIRE(seg.size() == ex.inputs.size() + 1);
    for (std::size_t k = 0; k < ex.targets.size(); ++k) {
        const auto m = legality_mask(seg[k]);
        CHECK(m[static_cast<std::size_t>(ex.targets[k])] == 1);
    }
    std::vector<int> bad = {VocabMap::lang_id(toyworld::Language::L0), VocabMap::acoustic(3)};
    CHECK_THROWS_AS(prediction_segments(bad), Error);
}

TEST_CASE("mask ratio schedule") {
    CHECK(mask_ratio(1.0) == 0.0);
    CHECK(mask_count(mask_ratio(1.0), 10) == 0);
    CHECK(mask_count(mask_ratio(1e-12), 10) == 10);
    CHECK(mask_count(1.0, 7) == 7);
    CHECK(mask_count(0.5, 7) == 4);
}

TEST_CASE("nar examples respect the prompt and mask counts") {
    int no_prompt = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const Parts p = parts(s % 200);
        Rng rng(derive_seed(77, s));
        const NarDraw d = draw_nar(rng, p.grid.frames, p.grid.layers);
        no_prompt += d.prompt_len == 0;
        if (s >= 500) continue;
        const auto ex = build_nar_example(p.inst, p.sem, p.grid, derive_seed(5, s));
        CHECK(ex.target_layer >= 1);
        CHECK(ex.target_layer < p.grid.layers);
        CHECK(ex.prompt_len < p.grid.frames);
        CHECK(ex.masked.size() == mask_count(ex.mask_ratio, p.grid.frames - ex.prompt_len));
        CHECK(std::is_sorted(ex.masked.begin(), ex.masked.end()));
        for (std::size_t t : ex.masked) CHECK(t >= ex.prompt_len);
        CHECK(build_nar_example(p.inst, p.sem, p.grid, derive_seed(5, s)) == ex);
        if (ex.prompt_len > 0) {
            const double f = static_cast<double>(ex.prompt_len) / static_cast<double>(p.grid.frames);
            CHECK(f <= 0.5 + 0.5 / static_cast<double>(p.grid.frames) + 1e-12);
        }
    }
    const double rate = no_prompt / 10000.0;
    CHECK((rate >= 0.28 && rate <= 0.32));
    toyworld::AcousticGrid thin(4, 1);
    Rng rng(0);
    CHECK_THROWS_AS(draw_nar(rng, 4, 1), Error);
}
