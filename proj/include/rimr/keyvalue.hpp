#pragma once

// UTF-8 `key=value` line blocks used for configs, sidecars and reports.
// Blank lines and lines starting with '#' are ignored; keys are unique.

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rimr/error.hpp"

namespace rimr::kv {

using Map = std::map<std::string, std::string>;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline Map parse(std::string_view text, std::string_view what = "key=value block") {
    Map out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || eq == 0) {
            throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": expected key=value, got '" +
                              std::string(line) + "'");
        }
        std::string key(trim(line.substr(0, eq)));
        if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
            throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

// Shortest text that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double to_double(const std::string& key, const std::string& value) {
    double v = 0;
    auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
        throw FormatError("key '" + key + "': '" + value + "' is not a number");
    }
    return v;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
        throw FormatError("key '" + key + "': '" + value + "' is not a non-negative integer");
    }
    return v;
}

inline const std::string& require(const Map& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("missing key '" + key + "'");
    return it->second;
}

inline double get_double(const Map& m, const std::string& key) { return to_double(key, require(m, key)); }
inline std::uint64_t get_uint(const Map& m, const std::string& key) { return to_uint(key, require(m, key)); }

inline double get_double(const Map& m, const std::string& key, double fallback) {
    auto it = m.find(key);
    return it == m.end() ? fallback : to_double(key, it->second);
}
inline std::uint64_t get_uint(const Map& m, const std::string& key, std::uint64_t fallback) {
    auto it = m.find(key);
    return it == m.end() ? fallback : to_uint(key, it->second);
}

// Comma-separated unsigned integers, e.g. "8,16,32".
inline std::string format_list(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<std::size_t> to_uint_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        const auto comma = value.find(',', start);
        const auto end = comma == std::string::npos ? value.size() : comma;
        out.push_back(to_uint(key, std::string(trim(std::string_view(value).substr(start, end - start)))));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<std::size_t> get_uint_list(const Map& m, const std::string& key, std::vector<std::size_t> fallback) {
    auto it = m.find(key);
    return it == m.end() ? fallback : to_uint_list(key, it->second);
}

}  // namespace rimr::kv
