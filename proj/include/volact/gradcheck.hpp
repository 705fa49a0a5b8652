#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "volact/param_store.hpp"

namespace volact {

struct GradCheckReport {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> indices;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> errors;
};

/// Compares ParamStore::grads() (filled by the caller's backward pass) with
/// central differences of `f` at step `h`. The error per coordinate is
/// |g_ad - g_fd| / max(1, |g_fd|). `indices` restricts the probed parameters;
/// empty means all of them. Parameter values are restored exactly.
template <class F>
GradCheckReport finite_diff_check(ParamStore& params, F&& f, double h, std::span<const std::size_t> indices = {}) {
  GradCheckReport report;
  if (indices.empty()) {
    report.indices.resize(params.size());
    std::iota(report.indices.begin(), report.indices.end(), std::size_t{0});
  } else {
    report.indices.assign(indices.begin(), indices.end());
  }
  auto values = params.values();
  const auto grads = params.grads();
  for (std::size_t idx : report.indices) {
    const double saved = values[idx];
    values[idx] = saved + h;
    const double up = f(static_cast<const ParamStore&>(params));
    values[idx] = saved - h;
    const double down = f(static_cast<const ParamStore&>(params));
    values[idx] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double ad = grads[idx];
    const double err = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
    report.analytic.push_back(ad);
    report.numeric.push_back(fd);
    report.errors.push_back(err);
    if (err > report.max_error || !std::isfinite(err)) {
      report.max_error = std::isfinite(err) ? err : INFINITY;
      report.worst_index = idx;
    }
  }
  return report;
}

}  // namespace volact
