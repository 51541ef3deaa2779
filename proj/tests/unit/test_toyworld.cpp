#include <doctest.h>

#include <set>
#include <zlib.h>

#include "../frozen_values.hpp"
#include "icodec/error.hpp"
#include "icodec/metrics.hpp"
#include "icodec/rng.hpp"
#include "icodec/toyworld.hpp"

using namespace icodec;
using namespace icodec::toyworld;

namespace {

std::uint32_t grid_crc(const AcousticGrid& g) {
    std::vector<unsigned char> bytes;
    for (int v : g.values) {
        const auto u = static_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>(u >> (8 * b)));
    }
    return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

Instruction random_instruction(std::uint64_t i) {
    return sample_instruction(i, i % 2 == 0 ? Language::L0 : Language::L1);
}

}  // namespace

TEST_CASE("rng matches the reference engine and seed derivation") {
    Rng rng(5489);
    for (int i = 0; i < 9999; ++i) rng.next();
    CHECK(rng.next() == frozen::kMt64Seed5489At10000);
    CHECK(mix64(0) == frozen::kMix64Of0);
    CHECK(derive_seed(7, 3) == frozen::kDeriveSeed_7_3);
    CHECK(derive_seed(7, 3, 5) == frozen::kDeriveSeed_7_3_5);
}

TEST_CASE("rng draws stay in range") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        const double z = rng.uniform_open_zero();
        CHECK((z > 0.0 && z <= 1.0));
        CHECK(rng.below(7) < 7);
        const int b = rng.between(-2, 2);
        CHECK((b >= -2 && b <= 2));
    }
}

TEST_CASE("sample_instruction matches the reference generator") {
    for (const auto& ref : frozen::kInstructions) {
        CAPTURE(ref.seed);
        CAPTURE(ref.language);
        const Instruction inst = sample_instruction(ref.seed, static_cast<Language>(ref.language));
        CHECK(inst.speaker_seed == ref.speaker);
        CHECK(static_cast<int>(inst.attributes.pitch) == ref.pitch);
        CHECK(static_cast<int>(inst.attributes.speed) == ref.speed);
        CHECK(static_cast<int>(inst.attributes.energy) == ref.energy);
        CHECK(static_cast<int>(inst.attributes.emotion) == ref.emotion);
        CHECK(inst.attributes.stress_index.value_or(-1) == ref.stress);
        REQUIRE(inst.content.size() == static_cast<std::size_t>(ref.content_len));
        for (int k = 0; k < ref.content_len; ++k) CHECK(inst.content[k] == ref.content[k]);
        REQUIRE(inst.tokens.size() == static_cast<std::size_t>(ref.token_len));
        for (int k = 0; k < ref.token_len; ++k) CHECK(inst.tokens[k] == ref.tokens[k]);
        const AcousticGrid g = oracle_acoustic(inst);
        CHECK(g.frames == static_cast<std::size_t>(ref.frames));
        CHECK(grid_crc(g) == ref.grid_crc);
    }
}

TEST_CASE("sample_instruction is deterministic and diverse") {
    CHECK(sample_instruction(0, Language::L0) == sample_instruction(0, Language::L0));
    std::set<std::vector<int>> distinct;
    for (std::uint64_t s = 0; s < 100; ++s) distinct.insert(sample_instruction(s, Language::L0).tokens);
    CHECK(distinct.size() >= 95);
}

TEST_CASE("pitch classes are near uniform over 10000 samples") {
    std::array<int, 3> counts{};
    for (std::uint64_t s = 0; s < 10000; ++s) ++counts[static_cast<std::size_t>(sample_instruction(s, Language::L0).attributes.pitch)];
    for (int c = 0; c < 3; ++c) {
        CHECK(counts[c] == frozen::kPitchCounts10k[c]);
        const double f = counts[c] / 10000.0;
        CHECK((f >= 0.30 && f <= 0.37));
    }
}

TEST_CASE("generated instructions satisfy every invariant") {
    for (std::uint64_t i = 0; i < 2000; ++i) {
        const Instruction inst = random_instruction(i);
        CHECK_NOTHROW(validate(inst));
        CHECK(quoted_content(inst.tokens) == inst.content);
        CHECK(has_attribute_tokens(inst.tokens));
        CHECK(has_stress_tokens(inst.tokens) == inst.attributes.stress_index.has_value());
    }
}

TEST_CASE("validate rejects broken instructions") {
    Instruction inst = sample_instruction(3, Language::L0);
    Instruction bad = inst;
    bad.content.push_back(bad.content.back());
    CHECK_THROWS_AS(validate(bad), Error);
    bad = inst;
    bad.content[0] = 20;  // L1 symbol in an L0 instruction
    CHECK_THROWS_AS(validate(bad), Error);
    bad = inst;
    bad.tokens.push_back(tok::open_quote);
    CHECK_THROWS_AS(validate(bad), Error);
    bad = inst;
    bad.attributes.stress_index = static_cast<int>(inst.content.size());
    CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("curriculum phases shape the instruction") {
    for (std::uint64_t s = 0; s < 300; ++s) {
        const Instruction pre = sample_for_phase(s, Language::L1, Phase::pretrain);
        CHECK_FALSE(has_attribute_tokens(pre.tokens));
        CHECK_FALSE(has_stress_tokens(pre.tokens));
        CHECK(pre.tokens.size() == pre.content.size() + 2);
        const Instruction st = sample_for_phase(s, Language::L1, Phase::stress);
        CHECK(has_stress_tokens(st.tokens));
        CHECK_NOTHROW(validate(st));
        CHECK(sample_for_phase(s, Language::L1, Phase::instruct) == sample_instruction(s, Language::L1));
    }
}

TEST_CASE("semantic repeats follow the reference hash") {
    for (const auto& r : frozen::kRepeats) CHECK(semantic_repeat(r.symbol, r.speaker) == r.repeat);
    Instruction inst = sample_instruction(5, Language::L0);
    inst.content = {3};
    inst.tokens = render_tokens(inst.attributes, inst.content, Template::desc_before, {}, 0);
    const int r = semantic_repeat(3, inst.speaker_seed);
    CHECK(oracle_semantic_raw(inst) == std::vector<int>(static_cast<std::size_t>(r), 3));
}

TEST_CASE("raw semantic output ignores prosody") {
    Instruction a = sample_instruction(9, Language::L0);
    Instruction b = a;
    b.attributes.speed = a.attributes.speed == Speed::fast ? Speed::slow : Speed::fast;
    b.attributes.pitch = Pitch::high;
    b.attributes.emotion = Emotion::sad;
    b.attributes.stress_index = 0;
    CHECK(oracle_semantic_raw(a) == oracle_semantic_raw(b));
}

TEST_CASE("oracle acoustic duration and pitch laws") {
    Instruction inst = sample_instruction(11, Language::L0);
    inst.content = {1, 2, 3};
    inst.attributes.speed = Speed::fast;
    CHECK(oracle_acoustic(inst).frames == 6);
    Instruction low = inst, high = inst;
    low.attributes.pitch = Pitch::low;
    high.attributes.pitch = Pitch::high;
    const AcousticGrid gl = oracle_acoustic(low), gh = oracle_acoustic(high);
    for (std::size_t t = 0; t < gl.frames; ++t) CHECK(gh.at(t, 0) - gl.at(t, 0) == 2);
    for (std::uint64_t i = 0; i < 200; ++i) {
        const Instruction x = random_instruction(i);
        CHECK(oracle_acoustic(x).frames == x.content.size() * static_cast<std::size_t>(frames_for(x.attributes.speed)));
    }
}

TEST_CASE("oracle round trip over 1000 instructions") {
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const Instruction inst = random_instruction(i);
        const AcousticGrid g = oracle_acoustic(inst);
        CHECK(oracle_decode_content(g) == inst.content);
        const ClassifiedAttributes c = oracle_classify(g);
        CHECK(c.pitch == inst.attributes.pitch);
        CHECK(c.speed == inst.attributes.speed);
        CHECK(c.energy == inst.attributes.energy);
        CHECK(c.emotion == inst.attributes.emotion);
        CHECK(c.stress_index == inst.attributes.stress_index);
    }
}

TEST_CASE("decoder edge cases") {
    CHECK(oracle_decode_content(AcousticGrid{}).empty());
    AcousticGrid one(1, 4);
    one.at(0, 0) = 10;
    CHECK(oracle_decode_content(one) == std::vector<int>{3});
    CHECK_THROWS_AS(oracle_classify(AcousticGrid{}), Error);
    const ClassifiedAttributes zero = oracle_classify(AcousticGrid(5, 4));
    CHECK(zero.pitch == Pitch::low);
    CHECK(zero.energy == Energy::low);
    CHECK(zero.emotion == Emotion::neutral);
    CHECK_FALSE(zero.stress_index.has_value());
    CHECK_THROWS_AS(oracle_speaker_embed(AcousticGrid(3, 2)), Error);
}

TEST_CASE("speed is the nearest duration to the mean group length") {
    // 51 frames in 10 groups: mean 5.1, nearest to 6.
    AcousticGrid g(51, 4);
    for (std::size_t t = 0; t < 51; ++t) g.at(t, 0) = static_cast<int>(std::min<std::size_t>(t / 5, 9)) * 3;
    CHECK(coarse_groups(g).size() == 10);
    CHECK(oracle_classify(g).speed == Speed::slow);
}

TEST_CASE("one corrupted frame costs at most one split") {
    for (std::uint64_t i = 0; i < 200; ++i) {
        Instruction inst = random_instruction(i);
        inst.attributes.speed = Speed::slow;
        AcousticGrid g = oracle_acoustic(inst);
        const std::size_t k = inst.content.size() / 2;
        g.at(k * 6 + 2, 0) = 95;  // mid-group, not a content value
        const double wer = evalkit::toy_wer(inst.content, oracle_decode_content(g));
        CHECK(wer <= 2.0 / static_cast<double>(inst.content.size()) + 1e-12);
    }
}

TEST_CASE("speaker embedding clusters speakers across content") {
    double same = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        Instruction a = random_instruction(i);
        Instruction b = random_instruction(i + 5000);
        b.speaker_seed = a.speaker_seed;
        b.attributes.speed = a.attributes.speed;
        const auto ea = oracle_speaker_embed(oracle_acoustic(a));
        const auto eb = oracle_speaker_embed(oracle_acoustic(b));
        double sum = 0.0;
        for (double v : ea.values) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        same += cosine(ea, eb);
    }
    same /= 100.0;
    CHECK(same >= 0.9);

    std::vector<SpeakerEmbedding> embs;
    for (std::uint64_t i = 0; i < 100; ++i) embs.push_back(oracle_speaker_embed(oracle_acoustic(random_instruction(i))));
    double cross = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < embs.size(); ++i) {
        for (std::size_t j = i + 1; j < embs.size(); ++j, ++pairs) cross += cosine(embs[i], embs[j]);
    }
    CHECK(cross / pairs < same);
    const AcousticGrid g = oracle_acoustic(random_instruction(1));
    CHECK(cosine(oracle_speaker_embed(g), oracle_speaker_embed(g)) == 1.0);
}

TEST_CASE("instruction text round trip") {
    for (std::uint64_t i = 0; i < 200; ++i) {
        const Instruction inst = random_instruction(i);
        CHECK(tokens_from_text(tokens_to_text(inst.tokens)) == inst.tokens);
    }
    CHECK_THROWS_AS(tokens_from_text("say \" a3 zz \""), Error);
    CHECK(parse_phase("stress") == Phase::stress);
    CHECK_THROWS_AS(parse_phase("finetune"), Error);
}
