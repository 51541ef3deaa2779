#include "icodec/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "icodec/error.hpp"

namespace icodec::evalkit {

using nlohmann::json;

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double toy_wer(std::span<const int> reference, std::span<const int> hypothesis) {
    if (reference.empty()) {
        throw Error("toy_wer: empty reference");
    }
    return static_cast<double>(levenshtein(reference, hypothesis)) / static_cast<double>(reference.size());
}

AttributeAccuracy attr_accuracy(std::span<const toyworld::Instruction> instructions,
                                std::span<const toyworld::AcousticGrid> grids) {
    if (instructions.size() != grids.size()) {
        throw Error("attr_accuracy: " + std::to_string(instructions.size()) + " instructions vs " +
                    std::to_string(grids.size()) + " grids");
    }
    AttributeAccuracy acc;
    acc.count = instructions.size();
    if (acc.count == 0) {
        return acc;
    }
    std::size_t pitch = 0, speed = 0, energy = 0, emotion = 0, sentence = 0, words = 0, word_hits = 0;
    for (std::size_t i = 0; i < instructions.size(); ++i) {
        const auto& ref = instructions[i].attributes;
        const auto got = toyworld::oracle_classify(grids[i]);
        pitch += got.pitch == ref.pitch;
        speed += got.speed == ref.speed;
        energy += got.energy == ref.energy;
        emotion += got.emotion == ref.emotion;
        sentence += got.stress_index == ref.stress_index;
        const int length = static_cast<int>(instructions[i].content.size());
        for (int k = 0; k < length; ++k) {
            const bool want = ref.stress_index && *ref.stress_index == k;
            const bool have = got.stress_index && *got.stress_index == k;
            word_hits += want == have;
        }
        words += static_cast<std::size_t>(length);
    }
    const auto n = static_cast<double>(acc.count);
    acc.pitch = static_cast<double>(pitch) / n;
    acc.speed = static_cast<double>(speed) / n;
    acc.energy = static_cast<double>(energy) / n;
    acc.emotion = static_cast<double>(emotion) / n;
    acc.mean = (acc.pitch + acc.speed + acc.energy + acc.emotion) / 4.0;
    acc.stress_sentence = static_cast<double>(sentence) / n;
    acc.stress_word = words == 0 ? 0.0 : static_cast<double>(word_hits) / static_cast<double>(words);
    return acc;
}

double toy_secs(const toyworld::AcousticGrid& a, const toyworld::AcousticGrid& b) {
    return toyworld::cosine(toyworld::oracle_speaker_embed(a), toyworld::oracle_speaker_embed(b));
}

std::string to_json(const EvalReport& r) {
    json j;
    j["samples"] = r.samples;
    j["failures"] = r.failures;
    j["toy_wer"] = r.toy_wer;
    j["accuracy"] = {
        {"pitch", r.accuracy.pitch},
        {"speed", r.accuracy.speed},
        {"energy", r.accuracy.energy},
        {"emotion", r.accuracy.emotion},
        {"mean", r.accuracy.mean},
        {"stress_word", r.accuracy.stress_word},
        {"stress_sentence", r.accuracy.stress_sentence},
        {"count", r.accuracy.count},
    };
    j["toy_secs"] = r.toy_secs ? json(*r.toy_secs) : json(nullptr);
    j["config"] = {
        {"gamma", r.config.gamma},
        {"alpha", r.config.alpha},
        {"beta", r.config.beta},
        {"temperature", r.config.temperature},
        {"top_k", r.config.top_k},
        {"nar_iterations", r.config.nar_iterations},
        {"seed", r.config.seed},
        {"checkpoint", r.config.checkpoint},
    };
    j["failure_log"] = r.failure_log;
    return j.dump();
}

EvalReport report_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        EvalReport r;
        r.samples = j.at("samples").get<std::size_t>();
        r.failures = j.at("failures").get<std::size_t>();
        r.toy_wer = j.at("toy_wer").get<double>();
        const auto& a = j.at("accuracy");
        r.accuracy.pitch = a.at("pitch").get<double>();
        r.accuracy.speed = a.at("speed").get<double>();
        r.accuracy.energy = a.at("energy").get<double>();
        r.accuracy.emotion = a.at("emotion").get<double>();
        r.accuracy.mean = a.at("mean").get<double>();
        r.accuracy.stress_word = a.at("stress_word").get<double>();
        r.accuracy.stress_sentence = a.at("stress_sentence").get<double>();
        r.accuracy.count = a.at("count").get<std::size_t>();
        if (!j.at("toy_secs").is_null()) {
            r.toy_secs = j.at("toy_secs").get<double>();
        }
        const auto& c = j.at("config");
        r.config.gamma = c.at("gamma").get<double>();
        r.config.alpha = c.at("alpha").get<double>();
        r.config.beta = c.at("beta").get<double>();
        r.config.temperature = c.at("temperature").get<double>();
        r.config.top_k = c.at("top_k").get<int>();
        r.config.nar_iterations = c.at("nar_iterations").get<int>();
        r.config.seed = c.at("seed").get<std::uint64_t>();
        r.config.checkpoint = c.at("checkpoint").get<std::string>();
        r.failure_log = j.at("failure_log").get<std::vector<std::string>>();
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("eval report: ") + e.what());
    }
}

std::string table_header() {
    return "gamma\talpha\tbeta\tsamples\ttoy_wer\tpitch\tspeed\tenergy\temotion\tmean\tstress_word\tstress_sentence\ttoy_secs";
}

std::string table_row(const EvalReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f\t%.2f\t%zu\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t", r.config.gamma,
                  r.config.alpha, r.config.beta, r.samples, r.toy_wer, r.accuracy.pitch, r.accuracy.speed,
                  r.accuracy.energy, r.accuracy.emotion, r.accuracy.mean, r.accuracy.stress_word,
                  r.accuracy.stress_sentence);
    std::string out = buf;
    if (r.toy_secs) {
        std::snprintf(buf, sizeof buf, "%.4f", *r.toy_secs);
        out += buf;
    } else {
        out += "-";
    }
    return out;
}

}  // namespace icodec::evalkit
