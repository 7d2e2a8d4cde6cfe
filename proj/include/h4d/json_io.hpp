#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "h4d/errors.hpp"

namespace h4d {

using Json = nlohmann::json;

namespace detail {

inline void dump_number(double v, std::string& out) {
  if (!std::isfinite(v)) throw NumericalFailure("refusing to serialize a non-finite number");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void dump_value(const Json& j, std::string& out) {
  switch (j.type()) {
    case Json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += Json(it.key()).dump();
        out += ':';
        dump_value(it.value(), out);
      }
      out += '}';
      break;
    }
    case Json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        dump_value(j[i], out);
      }
      out += ']';
      break;
    }
    case Json::value_t::number_float:
      dump_number(j.get<double>(), out);
      break;
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// Compact JSON with every floating-point value printed at 17 significant
/// digits, so a parse of the output reproduces each double bit for bit.
/// Object keys keep insertion order only if the caller uses ordered_json;
/// nlohmann::json sorts keys, which keeps output deterministic.
inline std::string dump_json(const Json& j) {
  std::string out;
  detail::dump_value(j, out);
  return out;
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what, e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path + "'");
}

inline Json read_json_file(const std::string& path) {
  return parse_json(read_text_file(path), path);
}

/// One JSON document per non-empty line.
inline std::vector<Json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_json(line, path + ":" + std::to_string(lineno)));
  }
  return out;
}

inline std::string to_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const Json& r : records) {
    out += dump_json(r);
    out += '\n';
  }
  return out;
}

// Typed field access that reports the offending field on failure.
template <typename T>
T get_field(const Json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(key, "missing field");
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(key, e.what());
  }
}

inline std::vector<double> get_numbers(const Json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(key, "missing field");
  const Json& a = obj.at(key);
  if (!a.is_array()) throw ParseError(key, "expected an array");
  std::vector<double> v;
  v.reserve(a.size());
  for (const Json& x : a) {
    if (!x.is_number()) throw ParseError(key, "expected numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline bool has_value(const Json& obj, const char* key) {
  return obj.is_object() && obj.contains(key) && !obj.at(key).is_null();
}

}  // namespace h4d
