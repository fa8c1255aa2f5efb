#pragma once

#include "mrcbf/types.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mrcbf {

/// Shortest round-trip decimal form; infinities print as "inf" / "-inf".
/// NaN is rejected so it can never reach an output file.
inline std::string format_number(double v) {
  if (std::isnan(v)) throw std::runtime_error("format_number: NaN in output");
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Parses a number written by format_number (accepts "inf" / "-inf").
inline double parse_number(const std::string& text) {
  if (text == "inf") return kInf;
  if (text == "-inf") return -kInf;
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw std::invalid_argument("parse_number: trailing characters in '" + text + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Values sampled on a rectangular 2-D grid, value(i, j) at (xs[i], ys[j]).
struct FieldGrid {
  std::string x_name = "x";
  std::string y_name = "y";
  std::string value_name = "value";
  std::vector<double> xs;
  std::vector<double> ys;
  Matrix values;
};

/// Long-format CSV: one row per grid point with columns (x, y, value).
inline void write_field_csv(std::ostream& os, const FieldGrid& field) {
  os << field.x_name << "," << field.y_name << "," << field.value_name << "\n";
  for (std::size_t i = 0; i < field.xs.size(); ++i) {
    for (std::size_t j = 0; j < field.ys.size(); ++j) {
      os << format_number(field.xs[i]) << "," << format_number(field.ys[j]) << ","
         << format_number(field.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))
         << "\n";
    }
  }
}

}  // namespace mrcbf
