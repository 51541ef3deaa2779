#pragma once

// Plain-text run configuration:
//
//   # comment
//   key = value
//   [ar]
//   key = value
//
// Keys before the first section header are global. Errors carry
// "<source>:<line>:" so a bad file is easy to fix.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace icodec::config {

struct Entry {
    std::string value;
    int line = 0;
};

class ConfigFile {
public:
    static ConfigFile parse(const std::string& text, const std::string& source);
    static ConfigFile load(const std::filesystem::path& path);

    const std::string& source() const { return source_; }
    std::vector<std::string> sections() const;
    bool has(const std::string& section, const std::string& key) const;
    const Entry* find(const std::string& section, const std::string& key) const;

    /// Typed lookups; a value that does not parse throws with its line.
    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::uint64_t get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    /// Throws on the first key of `section` outside `allowed`.
    void reject_unknown(const std::string& section, const std::set<std::string>& allowed) const;
    /// Throws on any section header outside `allowed` ("" is always allowed).
    void reject_unknown_sections(const std::set<std::string>& allowed) const;

    /// "<source>:<line>: <message>"
    std::string where(const Entry& e, const std::string& message) const;

private:
    std::string source_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::map<std::string, int> section_lines_;
};

}  // namespace icodec::config
