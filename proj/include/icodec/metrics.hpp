#pragma once

// Objective metrics over the synthetic world: toy word error rate, attribute
// accuracy and speaker similarity, plus the report they are collected into.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icodec/toyworld.hpp"

namespace icodec::evalkit {

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

/// Levenshtein(ref, hyp) / |ref|. May exceed 1. Throws on an empty reference.
double toy_wer(std::span<const int> reference, std::span<const int> hypothesis);

struct AttributeAccuracy {
    double pitch = 0.0;
    double speed = 0.0;
    double energy = 0.0;
    double emotion = 0.0;
    /// Arithmetic mean of the four global attributes above.
    double mean = 0.0;
    /// Per-word stressed/unstressed agreement over all content words.
    double stress_word = 0.0;
    /// Exact agreement of the stress position (or its absence) per utterance.
    double stress_sentence = 0.0;
    std::size_t count = 0;

    bool operator==(const AttributeAccuracy&) const = default;
};

/// Exact-match counts via oracle_classify. Throws on length mismatch.
AttributeAccuracy attr_accuracy(std::span<const toyworld::Instruction> instructions,
                                std::span<const toyworld::AcousticGrid> grids);

/// Cosine of the two speaker histograms; in [0, 1].
double toy_secs(const toyworld::AcousticGrid& a, const toyworld::AcousticGrid& b);

struct ConfigEcho {
    double gamma = 1.0;
    double alpha = 1.0;
    double beta = 1.0;
    double temperature = 1.0;
    int top_k = 0;
    int nar_iterations = 0;
    std::uint64_t seed = 0;
    std::string checkpoint;

    bool operator==(const ConfigEcho&) const = default;
};

struct EvalReport {
    std::size_t samples = 0;
    std::size_t failures = 0;
    /// Corpus-level: total edits over total reference symbols.
    double toy_wer = 0.0;
    AttributeAccuracy accuracy;
    std::optional<double> toy_secs;
    ConfigEcho config;
    std::vector<std::string> failure_log;

    bool operator==(const EvalReport&) const = default;
};

std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
/// Tab-separated row mirroring the results-table columns; see table_header().
std::string table_row(const EvalReport& report);
std::string table_header();

}  // namespace icodec::evalkit
