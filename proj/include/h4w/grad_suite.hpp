#pragma once

// Finite-difference check of every differentiable building block and of the
// full training loss.

#include <string>
#include <vector>

#include "h4w/body_model.hpp"
#include "h4w/pipeline.hpp"

namespace h4w {

struct GradSuiteCase {
  std::string name;
  double max_rel_error = 0;
  double tol = 0;
  bool passed = false;
  double seconds = 0;
  std::string worst_block;  // input block with the largest error
};

// Pipeline-level cases use `cfg`; operator cases use fixed small inputs drawn
// from `seed`.
std::vector<GradSuiteCase> run_gradient_suite(const BodyModel& model, const PipelineConfig& cfg, std::uint64_t seed);
std::string gradient_suite_to_json(const std::vector<GradSuiteCase>& cases);

}  // namespace h4w
