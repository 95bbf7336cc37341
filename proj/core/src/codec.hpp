#pragma once

// Internal JSON helpers. nlohmann/json stays out of the public headers.

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "sement/error.hpp"

namespace sement {
struct GenerationConfig;
}

namespace sement::detail {

using json = nlohmann::json;

json encode_generation_config(const GenerationConfig& c);
/// Fields missing from `j` keep their value from `base`.
GenerationConfig decode_generation_config(const json& j, const GenerationConfig& base);

/// Parses one record; ValidationError naming `what` on failure.
inline json parse_json(std::string_view text, std::string_view what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string(what) + ": invalid JSON: " + e.what());
    }
}

/// Compact single-line dump; UTF-8 errors are replaced rather than thrown.
inline std::string dump_line(const json& j) {
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

template <class T>
T require(const json& j, const char* field, std::string_view what) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
        throw ValidationError(std::string(what) + ": missing field '" + field + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string(what) + ": field '" + field + "' has the wrong type");
    }
}

template <class T>
std::optional<T> optional_field(const json& j, const char* field, std::string_view what) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) return std::nullopt;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string(what) + ": field '" + field + "' has the wrong type");
    }
}

inline json optional_number(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace sement::detail
