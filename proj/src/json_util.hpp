// SPDX-License-Identifier: Apache-2.0
// Internal helpers for whole-file JSON round trips with IoError reporting.
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "gsdyn/common.hpp"

namespace gsdyn {

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return j;
}

inline void dump_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace gsdyn
