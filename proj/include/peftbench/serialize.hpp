#pragma once

#include <string>
#include <string_view>

#include "json.hpp"
#include "peftbench/error.hpp"
#include "peftbench/models.hpp"

namespace peftbench {

using Json = nlohmann::json;

Json arch_config_to_json(const ArchConfig& cfg);
// {"arch": "mini-vit", "dim": 32, ...}; omitted fields keep their defaults.
ArchConfig arch_config_from_json(const Json& j);

// Typed field access that reports the offending key in a ConfigError.
template <class T>
T json_get(const Json& j, std::string_view key, const T& fallback)
{
    if (!j.is_object()) throw ConfigError("expected a JSON object while reading '" + std::string(key) + "'");
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer() || it->get<long long>() < 0)
            throw ConfigError("field '" + std::string(key) + "' must be a non-negative integer, got " + it->dump());
    }
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("field '" + std::string(key) + "' has the wrong type: " + it->dump());
    }
}

template <class T>
T json_require(const Json& j, std::string_view key)
{
    if (!j.is_object() || !j.contains(key)) throw ConfigError("missing required field '" + std::string(key) + "'");
    return json_get<T>(j, key, T{});
}

Json parse_json(const std::string& text, std::string_view what);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace peftbench
