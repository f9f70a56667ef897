#pragma once

// Shared helpers for the test binaries: finite-difference gradient
// checking, rank correlation, and small file/string utilities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "daclora/rng.hpp"
#include "daclora/tensor.hpp"

namespace testsupport {

// Relative error with an absolute floor so near-zero pairs compare sanely.
inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

// Central finite differences against one backward() pass.
//
// build_loss must construct the loss graph afresh from the current values
// of `params` on every call (the graph is a tape, not a symbolic function).
// Returns the worst relative error across all coordinates of all params.
inline double fd_worst_rel_err(const std::function<dac::Tensor()>& build_loss,
                               std::vector<dac::Tensor>& params, double h = 1e-5) {
  dac::Tensor loss = build_loss();
  backward(loss, params);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (dac::Tensor& p : params) {
    analytic.push_back(p.grad());
    p.clear_grad();
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    dac::Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double keep = p.values()[i];
      p.mutable_values()[i] = keep + h;
      const double up = build_loss().value();
      p.mutable_values()[i] = keep - h;
      const double down = build_loss().value();
      p.mutable_values()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[pi][i], fd));
    }
  }
  return worst;
}

// Pushes every entry at least `margin` away from the listed kink points, so
// finite differences never step across a relu/clamp corner.
inline void avoid_kinks(std::vector<double>& v, const std::vector<double>& kinks,
                        double margin) {
  for (double& x : v) {
    for (double k : kinks) {
      if (std::abs(x - k) < margin) x = k + (x >= k ? margin : -margin);
    }
  }
}

// Spearman rank correlation with average ranks on ties.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  return cells;
}

// Random matrix leaf with entries kept away from the given kinks.
inline dac::Tensor random_tensor(dac::Rng& rng, dac::Shape shape, double lo, double hi,
                                 const std::vector<double>& kinks = {},
                                 double margin = 1e-2) {
  std::vector<double> v(dac::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  if (!kinks.empty()) avoid_kinks(v, kinks, margin);
  return dac::Tensor(std::move(shape), std::move(v));
}

}  // namespace testsupport
