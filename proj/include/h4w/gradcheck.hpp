#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "h4w/autodiff.hpp"

namespace h4w::ad {

// Builds a scalar on `tape` from one leaf per input block.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckOptions {
  // Step of the fourth-order central difference.
  double h = 1e-6;
  double tol = 1e-4;
  // Entries probed per block; 0 probes every entry. Probed entries are spread
  // evenly across the block.
  std::size_t max_entries_per_block = 0;
  // Relative errors use max(max|analytic|, max|numeric|, floor) as the
  // denominator with floor = noise_factor * eps * max(1, |f|) / h, the
  // resolution limit of the central difference. Zero disables the floor.
  double noise_factor = 1e4;
};

struct BlockReport {
  // max |analytic - numeric| / max(max|analytic|, max|numeric|, floor) over probed entries
  double rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t probed = 0;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opts = {});

std::string describe(const GradCheckReport& report);

}  // namespace h4w::ad
