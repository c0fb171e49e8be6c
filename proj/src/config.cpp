#include "cfrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace cfrl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value, got: " + t);
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!val.empty() && val.front() == '"' && val.back() == '"' && val.size() >= 2)
            val = val.substr(1, val.size() - 2);
        if (!section.empty()) key = section + "." + key;
        cfg.values_[key] = val;
    }
    return cfg;
}

void KeyValueConfig::layer(const KeyValueConfig& over) {
    for (const auto& [k, v] : over.values_) values_[k] = v;
}

void KeyValueConfig::set_override(const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must be key=value, got: " + assignment);
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = lower(it->second);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + it->second);
}

std::string KeyValueConfig::require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key: " + key);
    return it->second;
}

std::string KeyValueConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

}  // namespace cfrl
