#pragma once

// Evaluation metrics in millimeters.

#include <array>
#include <string>

#include "h4w/body_model.hpp"

namespace h4w {

// Mean Euclidean distance after subtracting each set's `root` row, x1000.
double mpjpe(const Tensor& pred, const Tensor& gt, int root);
// Same with explicit root positions (used for vertices rooted at a joint).
double rooted_error(const Tensor& pred, const Tensor& gt, const double pred_root[3], const double gt_root[3]);
// Similarity (rotation, uniform scale, translation) minimizing the squared
// error of pred onto gt, applied to pred. Reflections are excluded.
// Degenerate when N < 3 or the cross-covariance has rank < 2.
Tensor pa_align(const Tensor& pred, const Tensor& gt);
// Mean distance of pa_align(pred, gt) to gt, x1000.
double pa_mpjpe(const Tensor& pred, const Tensor& gt);

enum class HandRoot { Wrist, Pelvis };

struct PartMetrics {
  double mpjpe = 0, pa_mpjpe = 0, mpvpe = 0, pa_mpvpe = 0;
};

inline constexpr std::array<const char*, 6> kMetricParts = {"all", "body", "lhand", "rhand", "hands_avg", "face"};

struct MetricReport {
  std::array<PartMetrics, 6> parts{};  // order of kMetricParts
  int samples = 0;

  const PartMetrics& part(std::string_view name) const;
  std::string to_json() const;
};

// Metrics of one prediction. Joints are [K,3] regressed joints, vertices [V,3].
MetricReport evaluate(const BodyModel& model, const Tensor& pred_vertices, const Tensor& pred_joints,
                      const Tensor& gt_vertices, const Tensor& gt_joints, HandRoot hand_root = HandRoot::Wrist);

// Running mean over samples.
void accumulate(MetricReport& acc, const MetricReport& one);

}  // namespace h4w
