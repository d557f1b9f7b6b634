#pragma once

// Key tracking for config parsers that reject unknown keys.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rimr/error.hpp"
#include "rimr/keyvalue.hpp"

namespace rimr::pipeline::detail {

class KeyReader {
public:
    KeyReader(const kv::Map& map, std::string what) : map_(map), what_(std::move(what)) {}

    bool has(const std::string& key) {
        used_.insert(key);
        return map_.count(key) != 0;
    }
    double get_double(const std::string& key, double fallback) {
        used_.insert(key);
        return kv::get_double(map_, key, fallback);
    }
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
        used_.insert(key);
        return kv::get_uint(map_, key, fallback);
    }
    bool get_bool(const std::string& key, bool fallback) {
        used_.insert(key);
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        if (it->second == "1" || it->second == "true") return true;
        if (it->second == "0" || it->second == "false") return false;
        throw FormatError(what_ + ": key '" + key + "' expects true/false, got '" + it->second + "'");
    }
    std::string get_string(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        auto it = map_.find(key);
        return it == map_.end() ? fallback : it->second;
    }
    std::vector<std::size_t> get_list(const std::string& key, std::vector<std::size_t> fallback) {
        used_.insert(key);
        return kv::get_uint_list(map_, key, std::move(fallback));
    }

    // The keys starting with `prefix` (prefix stripped) as key=value text.
    std::string section(const std::string& prefix) {
        std::string out;
        for (const auto& [k, v] : map_) {
            if (k.rfind(prefix, 0) == 0) {
                used_.insert(k);
                out += k.substr(prefix.size()) + "=" + v + "\n";
            }
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [k, v] : map_)
            if (!used_.count(k)) throw ConfigError(what_ + ": unknown key '" + k + "'");
    }

private:
    const kv::Map& map_;
    std::string what_;
    std::set<std::string> used_;
};

inline std::string join(const kv::Map& m) {
    std::string s;
    for (const auto& [k, v] : m) s += k + "=" + v + "\n";
    return s;
}

// Adds every line of a key=value block under `prefix`.
inline void merge_prefixed(kv::Map& into, const std::string& prefix, const std::string& text) {
    for (const auto& [k, v] : kv::parse(text)) into[prefix + k] = v;
}

}  // namespace rimr::pipeline::detail
