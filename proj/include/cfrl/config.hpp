#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfrl/common.hpp"

namespace cfrl {

// Flat key=value configuration with optional [section] headers (section.key),
// '#' / ';' comments, and layered overrides: later sources win.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text, const std::string& origin = "<string>");

    // Merges another layer on top of this one.
    void layer(const KeyValueConfig& over);
    // Applies a "key=value" override (CLI --set).
    void set_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throwing variants for required keys.
    std::string require_str(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    // Canonical "key = value" text, sorted by key. Stable input for digests.
    std::string canonical_text() const;
    uint64_t digest() const { return fnv1a64(canonical_text()); }

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

}  // namespace cfrl
