#pragma once

// nlohmann::json conversions shared by the file formats, the dataset and the service.

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "coverage_pilot/gridworld.hpp"

namespace cpilot {

using Json = nlohmann::ordered_json;

Json cell_to_json(Cell c);
Json trajectory_to_json(const Trajectory& t);
Json map_to_json(const GridMap& map);
Json coverage_to_json(const CoverageMap& coverage);  // sparse [[r, c, count], ...]

/// Throws MapFormatError naming the offending field (prefixed by `where`).
Cell cell_from_json(const Json& j, const std::string& where);
Trajectory trajectory_from_json(const Json& j, const std::string& where);
GridMap map_from_json(const Json& j, const std::string& where = "");

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t value);

}  // namespace cpilot
