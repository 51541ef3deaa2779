#include "icodec/run_config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "icodec/error.hpp"

namespace icodec::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    }
    return true;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& source) {
    ConfigFile cfg;
    cfg.source_ = source;
    cfg.sections_[""];
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    auto fail = [&](const std::string& msg) { throw Error(source + ":" + std::to_string(line) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') fail("unterminated section header");
            section = trim(body.substr(1, body.size() - 2));
            if (!valid_name(section)) fail("bad section name '" + section + "'");
            if (cfg.section_lines_.count(section)) fail("duplicate section [" + section + "]");
            cfg.section_lines_[section] = line;
            cfg.sections_[section];
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (!valid_name(key)) fail("bad key '" + key + "'");
        if (value.empty()) fail("empty value for '" + key + "'");
        auto& sec = cfg.sections_[section];
        if (sec.count(key)) fail("duplicate key '" + key + "'");
        sec[key] = Entry{value, line};
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::vector<std::string> ConfigFile::sections() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : sections_) out.push_back(name);
    return out;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

const Entry* ConfigFile::find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

std::string ConfigFile::where(const Entry& e, const std::string& message) const {
    return source_ + ":" + std::to_string(e.line) + ": " + message;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    const Entry* e = find(section, key);
    return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    double v = 0.0;
    const char* end = e->value.data() + e->value.size();
    const auto [ptr, ec] = std::from_chars(e->value.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw Error(where(*e, "'" + key + "' expects a number, got '" + e->value + "'"));
    }
    return v;
}

std::uint64_t ConfigFile::get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    std::uint64_t v = 0;
    const char* end = e->value.data() + e->value.size();
    const auto [ptr, ec] = std::from_chars(e->value.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw Error(where(*e, "'" + key + "' expects a non-negative integer, got '" + e->value + "'"));
    }
    return v;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw Error(where(*e, "'" + key + "' expects true or false, got '" + e->value + "'"));
}

void ConfigFile::reject_unknown(const std::string& section, const std::set<std::string>& allowed) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return;
    for (const auto& [key, entry] : s->second) {
        if (!allowed.count(key)) {
            const std::string where_sec = section.empty() ? "" : " in [" + section + "]";
            throw Error(where(entry, "unknown key '" + key + "'" + where_sec));
        }
    }
}

void ConfigFile::reject_unknown_sections(const std::set<std::string>& allowed) const {
    for (const auto& [name, line] : section_lines_) {
        if (!allowed.count(name)) {
            throw Error(source_ + ":" + std::to_string(line) + ": unknown section [" + name + "]");
        }
    }
}

}  // namespace icodec::config
