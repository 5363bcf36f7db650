#include "coverage_pilot/json_io.hpp"

#include <cstdio>

namespace cpilot {

Json cell_to_json(Cell c) { return Json::array({c.row, c.col}); }

Json trajectory_to_json(const Trajectory& t) {
  Json out = Json::array();
  for (const Cell& c : t) out.push_back(cell_to_json(c));
  return out;
}

Json map_to_json(const GridMap& map) {
  Json obstacles = Json::array();
  for (const Cell& c : map.obstacles()) obstacles.push_back(cell_to_json(c));
  return Json{{"width", map.width()},
              {"height", map.height()},
              {"start", cell_to_json(map.start())},
              {"obstacles", std::move(obstacles)}};
}

Json coverage_to_json(const CoverageMap& coverage) {
  Json out = Json::array();
  for (int r = 0; r < coverage.height(); ++r) {
    for (int c = 0; c < coverage.width(); ++c) {
      if (int n = coverage.count({r, c}); n > 0) out.push_back(Json::array({r, c, n}));
    }
  }
  return out;
}

Cell cell_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw MapFormatError(where, "expected [row, col] integer pair");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

Trajectory trajectory_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw MapFormatError(where, "expected an array of [row, col] pairs");
  Trajectory out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.waypoints.push_back(cell_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

namespace {

std::string join(const std::string& where, const std::string& field) {
  return where.empty() ? field : where + "." + field;
}

int positive_int(const Json& j, const std::string& field, const std::string& where) {
  if (!j.contains(field)) throw MapFormatError(join(where, field), "missing");
  const Json& v = j.at(field);
  if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > 4096) {
    throw MapFormatError(join(where, field), "expected an integer in [1, 4096]");
  }
  return v.get<int>();
}

}  // namespace

GridMap map_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw MapFormatError(where, "expected an object");
  const int width = positive_int(j, "width", where);
  const int height = positive_int(j, "height", where);
  if (!j.contains("start")) throw MapFormatError(join(where, "start"), "missing");
  const Cell start = cell_from_json(j.at("start"), join(where, "start"));
  if (start.row < 0 || start.col < 0 || start.row >= height || start.col >= width) {
    throw MapFormatError(join(where, "start"), "outside the map");
  }
  std::vector<Cell> obstacles;
  if (j.contains("obstacles")) {
    const Json& obs = j.at("obstacles");
    const std::string field = join(where, "obstacles");
    if (!obs.is_array()) throw MapFormatError(field, "expected an array of [row, col] pairs");
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const std::string item = field + "[" + std::to_string(i) + "]";
      Cell c = cell_from_json(obs[i], item);
      if (c.row < 0 || c.col < 0 || c.row >= height || c.col >= width) {
        throw MapFormatError(item, "outside the map");
      }
      if (c == start) throw MapFormatError(item, "coincides with the start cell");
      obstacles.push_back(c);
    }
  }
  return GridMap(width, height, obstacles, start);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace cpilot
