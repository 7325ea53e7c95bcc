#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "icar/error.hpp"

namespace icar {

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double median = 0.0;
  double q975 = 0.0;
};

inline double sample_mean(std::span<const double> v) {
  require(!v.empty(), "mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = sample_mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Linear interpolation between order statistics (R type 7).
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  require(!sorted.empty(), "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ParameterSummary summarize(std::string name, std::span<const double> draws) {
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  return {std::move(name), sample_mean(draws), sample_sd(draws), quantile_sorted(sorted, 0.025),
          quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.975)};
}

// Monte Carlo standard error of the mean by non-overlapping batch means.
inline double batch_means_se(std::span<const double> draws, std::size_t batches = 50) {
  const std::size_t len = draws.size() / batches;
  require(len >= 2, "batch_means_se: too few draws");
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) means[b] = sample_mean(draws.subspan(b * len, len));
  return sample_sd(means) / std::sqrt(static_cast<double>(batches));
}

// Potential scale reduction factor over equal-length chains.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  require(chains.size() >= 2, "gelman_rubin needs at least two chains");
  const std::size_t n = chains.front().size();
  require(n >= 2, "gelman_rubin: chains too short");
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    require(c.size() == n, "gelman_rubin: chains differ in length");
    means.push_back(sample_mean(c));
    const double s = sample_sd(c);
    vars.push_back(s * s);
  }
  const double w = sample_mean(vars);
  const double sb = sample_sd(means);
  const double b = static_cast<double>(n) * sb * sb;
  if (w <= 0.0) return 1.0;
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b / static_cast<double>(n);
  return std::sqrt(var_plus / w);
}

}  // namespace icar
