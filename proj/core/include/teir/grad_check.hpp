#pragma once

#include <cstdint>
#include <string>

#include "teir/objectives.hpp"

namespace teir {

struct GradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 8;
  std::size_t out_dim = 8;
  std::size_t batch = 4;
  std::size_t max_len = 5;
  std::size_t vocab = 24;
  double step = 1e-3;
  double tolerance = 1e-4;
  LossConfig loss;
  // Test hook: adds this to one analytic gradient entry before comparing.
  double corrupt = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::uint32_t worst_row = 0;
  std::size_t worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

// Compares the analytic gradient of the total loss w.r.t. the embedding rows
// of a random instance with central differences, all in double precision.
// Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const GradCheckConfig& cfg);

std::string describe(const GradCheckResult& r);

}  // namespace teir
