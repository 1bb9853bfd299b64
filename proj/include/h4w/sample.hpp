#pragma once

#include <array>
#include <cstdint>

#include "h4w/body_model.hpp"
#include "h4w/grid_ops.hpp"

namespace h4w {

// One training/evaluation example with full ground truth.
struct Sample {
  std::uint64_t seed = 0;
  Tensor image;         // [3, H, W] in [0, 1]
  ModelParams params;
  Tensor joints_3d;     // [K, 3] regressed joints of the GT mesh without trans (m)
  Tensor joints_2d;     // [K, 2] projection of joints_3d + trans into I (px)
  std::array<Box, 3> boxes;  // left hand, right hand, face in I pixels

  bool operator==(const Sample&) const = default;
};

}  // namespace h4w
