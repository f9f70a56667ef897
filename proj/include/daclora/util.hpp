#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "daclora/rng.hpp"

namespace dac {

// Shortest decimal form that round-trips a double exactly. Used for every
// number written to a delimited file so reruns are byte-identical.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    std::sscanf(shorter, "%lf", &back);
    if (back == v) return std::string(shorter);
  }
  return std::string(buf);
}

inline std::uint64_t hash_doubles(const std::vector<double>& values,
                                  std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(values.data(), values.size() * sizeof(double), h);
}

}  // namespace dac
