#pragma once

#include "vslot/common.hpp"

#include "json.hpp"

#include <set>
#include <string>

namespace vslot::detail {

// Reads an optional key, recording it as known.
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, std::set<std::string>& used) {
    used.insert(key);
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& used) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!used.count(k)) throw ConfigError("unknown config key '" + k + "'");
}

}  // namespace vslot::detail
