#pragma once

// Checkpoint directory: header.json (human-readable: format version, model
// options, vocabulary table, training progress, tensor offset table) and
// tensors.bin (little-endian payloads, each with a CRC-32).

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "icodec/models.hpp"
#include "icodec/trainer.hpp"

ICODEC_CORE_BEGIN

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    std::string phase;  // last phase trained, empty for a fresh model
    std::size_t ar_step = 0;
    std::size_t nar_step = 0;
    std::uint64_t train_seed = 0;
    std::map<std::string, double> metrics;

    bool operator==(const CheckpointInfo&) const = default;
};

struct Checkpoint {
    ModelBundle bundle;
    std::optional<AdamState> ar_optimizer;
    std::optional<AdamState> nar_optimizer;
    CheckpointInfo info;
};

/// Writes `dir`/header.json and `dir`/tensors.bin, creating `dir` if needed.
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& bundle, const CheckpointInfo& info,
                     const AdamState* ar_optimizer = nullptr, const AdamState* nar_optimizer = nullptr);

/// Throws on a missing file, version or precision mismatch, truncation,
/// checksum failure, or a tensor table that does not fit the model options.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

ICODEC_CORE_END
