#include "icodec/dataset_io.hpp"

#include <fstream>

#include <json.hpp>

#include "icodec/error.hpp"
#include "icodec/rng.hpp"

namespace icodec::io {

using nlohmann::json;
using namespace toyworld;

Record make_record(std::uint64_t seed, Language language, Phase phase) {
    Record r;
    r.seed = seed;
    r.phase = phase;
    r.instruction = sample_for_phase(seed, language, phase);
    r.labeled = true;
    r.semantic_raw = oracle_semantic_raw(r.instruction);
    r.grid = oracle_acoustic(r.instruction);
    return r;
}

std::vector<Record> generate_dataset(std::size_t count, double l1_fraction, Phase phase, std::uint64_t seed) {
    std::vector<Record> out;
    out.reserve(count);
    Rng lang_rng(derive_seed(seed, 0x1a4eULL));
    for (std::size_t i = 0; i < count; ++i) {
        const Language language = lang_rng.bernoulli(l1_fraction) ? Language::L1 : Language::L0;
        out.push_back(make_record(derive_seed(seed, i), language, phase));
    }
    return out;
}

std::string to_line(const Record& r) {
    json j;
    j["v"] = kRecordVersion;
    if (r.seed) j["seed"] = *r.seed;
    if (r.phase) j["phase"] = std::string(name(*r.phase));
    j["tokens"] = r.instruction.tokens;
    if (r.labeled) {
        const auto& a = r.instruction.attributes;
        j["lang"] = std::string(name(a.language));
        j["pitch"] = static_cast<int>(a.pitch);
        j["speed"] = static_cast<int>(a.speed);
        j["energy"] = static_cast<int>(a.energy);
        j["emotion"] = static_cast<int>(a.emotion);
        j["stress"] = a.stress_index.value_or(-1);
        j["speaker"] = r.instruction.speaker_seed;
        j["content"] = r.instruction.content;
        j["semantic"] = r.semantic_raw;
    }
    j["frames"] = r.grid.frames;
    j["layers"] = r.grid.layers;
    j["grid"] = r.grid.values;
    return j.dump();
}

namespace {

template <typename E>
E enum_field(const json& j, const char* key, int classes) {
    const int v = j.at(key).get<int>();
    if (v < 0 || v >= classes) {
        throw Error(std::string("record: field '") + key + "' out of range");
    }
    return static_cast<E>(v);
}

}  // namespace

Record from_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(std::string("record: ") + e.what());
    }
    try {
        if (j.at("v").get<int>() != kRecordVersion) {
            throw Error("record: unsupported version " + j.at("v").dump());
        }
        Record r;
        if (j.contains("seed")) r.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("phase")) r.phase = parse_phase(j["phase"].get<std::string>());
        r.instruction.tokens = j.at("tokens").get<std::vector<int>>();
        if (j.contains("pitch")) {
            r.labeled = true;
            auto& a = r.instruction.attributes;
            a.language = parse_language(j.at("lang").get<std::string>());
            a.pitch = enum_field<Pitch>(j, "pitch", kPitchClasses);
            a.speed = enum_field<Speed>(j, "speed", kSpeedClasses);
            a.energy = enum_field<Energy>(j, "energy", kEnergyClasses);
            a.emotion = enum_field<Emotion>(j, "emotion", kEmotionClasses);
            const int stress = j.at("stress").get<int>();
            if (stress >= 0) a.stress_index = stress;
            r.instruction.speaker_seed = j.at("speaker").get<std::uint32_t>();
            r.instruction.content = j.at("content").get<std::vector<int>>();
            r.semantic_raw = j.at("semantic").get<std::vector<int>>();
        }
        r.grid.frames = j.at("frames").get<std::size_t>();
        r.grid.layers = j.at("layers").get<std::size_t>();
        r.grid.values = j.at("grid").get<std::vector<int>>();
        if (r.grid.values.size() != r.grid.frames * r.grid.layers) {
            throw Error("record: grid has " + std::to_string(r.grid.values.size()) + " values, expected " +
                        std::to_string(r.grid.frames * r.grid.layers));
        }
        for (int v : r.grid.values) {
            if (v < 0 || v >= kAcousticVocab) {
                throw Error("record: grid value " + std::to_string(v) + " out of range");
            }
        }
        if (r.labeled) {
            validate(r.instruction);
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("record: ") + e.what());
    }
}

void write_records(const std::filesystem::path& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("write_records: cannot open " + path.string());
    }
    for (const auto& r : records) {
        out << to_line(r) << '\n';
    }
    if (!out) {
        throw Error("write_records: write failed for " + path.string());
    }
}

std::vector<Record> read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("read_records: cannot open " + path.string());
    }
    std::vector<Record> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            out.push_back(from_line(line));
        } catch (const Error& e) {
            throw Error(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace icodec::io
