#pragma once

// Line-delimited dataset records. One JSON object per line; field names are
// documented in docs/formats.md. Generated grids reuse the same record shape
// with the label fields left out.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icodec/toyworld.hpp"

namespace icodec::io {

inline constexpr int kRecordVersion = 1;

struct Record {
    std::optional<std::uint64_t> seed;
    std::optional<toyworld::Phase> phase;
    /// Tokens are always present. Attributes, content and speaker are
    /// meaningful only when `labeled`.
    toyworld::Instruction instruction;
    bool labeled = false;
    std::vector<int> semantic_raw;
    toyworld::AcousticGrid grid;

    bool operator==(const Record&) const = default;
};

/// Samples an instruction for `phase` and fills every oracle field.
Record make_record(std::uint64_t seed, toyworld::Language language, toyworld::Phase phase);

/// `count` records; language L1 with probability `l1_fraction`; record i uses
/// seed derive_seed(seed, i).
std::vector<Record> generate_dataset(std::size_t count, double l1_fraction, toyworld::Phase phase,
                                     std::uint64_t seed);

std::string to_line(const Record& record);
Record from_line(const std::string& line);

void write_records(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_records(const std::filesystem::path& path);

}  // namespace icodec::io
