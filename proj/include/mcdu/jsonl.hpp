#pragma once

// Shared helpers for the line-delimited JSON record files (samples, ground
// truth, calibration records). Every record has a fixed field order and
// unknown fields are rejected.

#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcdu/core.hpp"
#include "mcdu/error.hpp"

namespace mcdu::jsonl {

using Json = nlohmann::ordered_json;

struct Line {
  std::size_t number = 0;
  Json record;
};

// Reads every non-blank line as one JSON object.
inline std::vector<Line> read_records(std::istream& in) {
  std::vector<Line> out;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(number, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(number, "record must be a JSON object");
    out.push_back({number, std::move(j)});
  }
  return out;
}

// Checks that the record carries exactly `required` followed by any subset of
// `optional`, in that order.
inline void expect_fields(const Line& line, std::initializer_list<std::string_view> required,
                          std::initializer_list<std::string_view> optional = {}) {
  auto it = line.record.begin();
  for (std::string_view key : required) {
    if (it == line.record.end()) throw ParseError(line.number, "missing field '" + std::string(key) + "'");
    if (it.key() != key) {
      throw ParseError(line.number, "expected field '" + std::string(key) + "', found '" + it.key() + "'");
    }
    ++it;
  }
  for (std::string_view key : optional) {
    if (it == line.record.end()) break;
    if (it.key() == key) ++it;
  }
  if (it != line.record.end()) throw ParseError(line.number, "unknown or misplaced field '" + it.key() + "'");
}

inline const Json& field(const Line& line, const char* key) { return line.record.at(key); }

inline double get_real(const Line& line, const Json& v, const char* what) {
  if (!v.is_number()) throw ParseError(line.number, std::string(what) + " must be a number");
  return v.get<double>();
}

inline long long get_int(const Line& line, const Json& v, const char* what) {
  if (!v.is_number_integer()) throw ParseError(line.number, std::string(what) + " must be an integer");
  return v.get<long long>();
}

inline std::string get_string(const Line& line, const Json& v, const char* what) {
  if (!v.is_string()) throw ParseError(line.number, std::string(what) + " must be a string");
  return v.get<std::string>();
}

inline std::vector<double> get_reals(const Line& line, const Json& v, const char* what) {
  if (!v.is_array()) throw ParseError(line.number, std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(get_real(line, e, what));
  return out;
}

inline std::vector<std::uint32_t> get_runs(const Line& line, const Json& v) {
  if (!v.is_array()) throw ParseError(line.number, "mask_runs must be an array");
  std::vector<std::uint32_t> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    const long long r = get_int(line, e, "mask run");
    if (r < 0 || r > std::numeric_limits<std::uint32_t>::max()) {
      throw ParseError(line.number, "mask run out of range");
    }
    out.push_back(static_cast<std::uint32_t>(r));
  }
  return out;
}

inline BBox get_bbox(const Line& line, const Json& v) {
  const auto c = get_reals(line, v, "bbox");
  if (c.size() != 4) throw ParseError(line.number, "bbox must have 4 coordinates");
  try {
    return BBox(c[0], c[1], c[2], c[3]);
  } catch (const DataError& e) {
    throw ParseError(line.number, e.what());
  }
}

inline Json bbox_json(const BBox& b) { return Json::array({b.x1(), b.y1(), b.x2(), b.y2()}); }

inline void write_record(std::ostream& out, const Json& j) { out << j.dump() << '\n'; }

}  // namespace mcdu::jsonl
