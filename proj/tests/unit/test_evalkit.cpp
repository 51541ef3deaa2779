#include <doctest.h>

#include "../test_support.hpp"
#include "icodec/error.hpp"
#include "icodec/evalkit.hpp"

using namespace icodec;

namespace {

const ModelBundle& bundle() {
    static const ModelBundle b{test_support::tiny_options(31)};
    return b;
}

toyworld::AcousticGrid prefix(const toyworld::AcousticGrid& g, std::size_t frames) {
    toyworld::AcousticGrid out(frames, g.layers);
    std::copy(g.values.begin(), g.values.begin() + static_cast<std::ptrdiff_t>(frames * g.layers), out.values.begin());
    return out;
}

DecodePolicy policy() {
    DecodePolicy p;
    p.max_frames = 30;
    p.seed = 5;
    return p;
}

}  // namespace

TEST_CASE("eval is deterministic and independent of the thread count") {
    const auto set = io::generate_dataset(6, 0.5, toyworld::Phase::instruct, 3);
    EvalOptions one;
    EvalOptions three;
    three.threads = 3;
    std::vector<EvalSample> s1, s3;
    const auto r1 = run_eval(bundle(), set, {}, policy(), one, &s1);
    const auto r1b = run_eval(bundle(), set, {}, policy(), one);
    const auto r3 = run_eval(bundle(), set, {}, policy(), three, &s3);
    CHECK(evalkit::to_json(r1) == evalkit::to_json(r1b));
    CHECK(r1 == r3);
    REQUIRE(s1.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(s1[i].grid == s3[i].grid);
    CHECK(r1.samples == 6);
    CHECK(r1.failures == 0);
    CHECK_FALSE(r1.toy_secs.has_value());
    CHECK(r1.config.gamma == 2.0);
    CHECK(r1.config.seed == 5);
}

TEST_CASE("sample i matches a standalone synthesis with its derived seed") {
    const auto set = io::generate_dataset(3, 0.5, toyworld::Phase::instruct, 4);
    std::vector<EvalSample> samples;
    run_eval(bundle(), set, {}, policy(), {}, &samples);
    for (std::size_t i = 0; i < set.size(); ++i) {
        DecodePolicy p = policy();
        p.seed = derive_seed(policy().seed, i);
        const auto r = synthesize(bundle(), set[i].instruction.tokens, {}, p);
        CHECK(samples[i].grid == r.grid);
        CHECK(samples[i].decoded == toyworld::oracle_decode_content(r.grid));
    }
}

TEST_CASE("metrics equal the hand computation over samples") {
    const auto set = io::generate_dataset(5, 0.5, toyworld::Phase::instruct, 5);
    std::vector<EvalSample> samples;
    const auto report = run_eval(bundle(), set, {}, policy(), {}, &samples);
    std::size_t edits = 0, len = 0;
    std::vector<toyworld::Instruction> insts;
    std::vector<toyworld::AcousticGrid> grids;
    for (std::size_t i = 0; i < set.size(); ++i) {
        edits += evalkit::levenshtein(set[i].instruction.content, samples[i].decoded);
        len += set[i].instruction.content.size();
        insts.push_back(set[i].instruction);
        grids.push_back(samples[i].generated);
    }
    CHECK(report.toy_wer == static_cast<double>(edits) / static_cast<double>(len));
    CHECK(report.accuracy == evalkit::attr_accuracy(insts, grids));
}

TEST_CASE("a failing sample is logged and excluded") {
    const auto set = io::generate_dataset(4, 0.5, toyworld::Phase::instruct, 6);
    EvalOptions opts;
    for (const auto& r : set) opts.prompts.push_back(toyworld::AcousticGrid());
    opts.prompts[0] = prefix(set[3].grid, 4);
    opts.prompts[2] = toyworld::AcousticGrid(2, 1);
    std::vector<EvalSample> samples;
    const auto report = run_eval(bundle(), set, {}, policy(), opts, &samples);
    CHECK(report.samples == 3);
    CHECK(report.failures == 1);
    REQUIRE(report.failure_log.size() == 1);
    CHECK(report.failure_log[0].rfind("sample 2: ", 0) == 0);
    CHECK_FALSE(samples[2].ok);
    REQUIRE(report.toy_secs.has_value());
    CHECK(*report.toy_secs == evalkit::toy_secs(samples[0].generated, opts.prompts[0]));
    CHECK(samples[0].generated.frames + 4 == samples[0].grid.frames);
}

TEST_CASE("eval input errors") {
    auto set = io::generate_dataset(2, 0.5, toyworld::Phase::instruct, 7);
    EvalOptions opts;
    opts.prompts.resize(1);
    CHECK_THROWS_AS(run_eval(bundle(), set, {}, policy(), opts), Error);
    set[1].labeled = false;
    CHECK_THROWS_AS(run_eval(bundle(), set, {}, policy()), Error);
}
