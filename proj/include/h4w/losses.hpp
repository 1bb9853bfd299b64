#pragma once

// Training objective: total = w_param L_param + w_coord L_coord + w_box L_box.
// Every L1 term uses mean reduction.

#include "h4w/pipeline.hpp"
#include "h4w/sample.hpp"

namespace h4w {

struct LossConfig {
  double w_param = 1.0, w_coord = 1.0, w_box = 1.0;
  // Individual L_coord terms can be switched off.
  bool coord_heatmap = true;   // Pose2Pose outputs vs GT in input pixels / depth bins
  bool coord_joints3d = true;  // pelvis-relative regressed joints (m)
  bool coord_joints2d = true;  // projected regressed joints in I_b pixels

  bool operator==(const LossConfig&) const = default;
};

// Weighted terms; total is their plain sum.
struct LossBreakdown {
  double l_param = 0, l_coord = 0, l_box = 0, total = 0;
};

struct LossVars {
  ad::Var l_param, l_coord, l_box, total;
  LossBreakdown values() const;
};

// Mean |pred - gt| over body, right hand, left hand, jaw, beta and psi
// entries (axis-angle rotations). Throws ShapeMismatch.
ad::Var loss_param(const body::ParamVars& pred, const ModelParams& gt);
// 12 entries: centers and sizes divided by I's width (x, w) and height (y, h).
ad::Var loss_box(ad::Var boxes, const std::array<Box, 3>& gt, int image_w, int image_h);

// Depth bin coordinate of a root-relative depth spanning [-range, range].
double depth_to_bin(double z_rel, double range, int depth_bins);
double bin_to_depth(double bin, double range, int depth_bins);

// GT Pose2Pose targets in network pixel / bin units, with a validity mask
// (0 where the target lies outside what the soft-argmax can express).
struct HeatmapTargets {
  Tensor body, rhand, lhand;              // [22,3], [15,3], [15,3]
  Tensor body_mask, rhand_mask, lhand_mask;  // same shapes
};
// `crop_boxes` are the boxes the hand crops were taken with; the left hand
// target lives in the flipped crop.
HeatmapTargets heatmap_targets(const PipelineConfig& cfg, const Sample& gt, const std::array<Box, 3>& crop_boxes);

// Sum of the enabled coordinate terms; MissingGT when an enabled term lacks
// its ground truth.
ad::Var loss_coord(const PipelineConfig& cfg, const LossConfig& lc, const PipelineOutput& out, const Sample& gt);

LossVars total_loss(const PipelineConfig& cfg, const LossConfig& lc, const PipelineOutput& out, const Sample& gt);

}  // namespace h4w
