#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

namespace lflow {

// Canonical serialization used for config hashing: keys in sorted order
// (plain nlohmann::json already is), floating point via %.17g.
inline std::string canonical_dump(const nlohmann::json& j) {
    using nlohmann::json;
    switch (j.type()) {
        case json::value_t::null:
            return "null";
        case json::value_t::boolean:
            return j.get<bool>() ? "true" : "false";
        case json::value_t::number_float: {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", j.get<double>());
            return buf;
        }
        case json::value_t::array: {
            std::string out = "[";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out += ",";
                out += canonical_dump(j[i]);
            }
            return out + "]";
        }
        case json::value_t::object: {
            std::string out = "{";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ",";
                first = false;
                out += nlohmann::json(it.key()).dump() + ":" + canonical_dump(it.value());
            }
            return out + "}";
        }
        default:
            return j.dump();
    }
}

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string config_hash_of(const nlohmann::json& j) {
    return fnv1a_hex(canonical_dump(j));
}

}  // namespace lflow
