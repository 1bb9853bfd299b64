#pragma once

// Feature map -> 3D heatmaps -> soft-argmax joints -> pose-guided pooling ->
// regressor input, plus the rotation regressor and its input variants.

#include <optional>
#include <string>
#include <string_view>

#include "h4w/nn.hpp"

namespace h4w {

struct Pose2PoseConfig {
  int joints = 22;
  int depth_bins = 8;
  int c_in = 32;
  int c_joint = 16;

  void validate() const;
};

struct Pose2PoseOutput {
  ad::Var H;        // [J, Dz, h, w] heatmap logits
  ad::Var P;        // [J, 3] (x, y, z) grid units
  ad::Var F_joint;  // [J, C_joint]
  ad::Var v;        // [(C_joint + 3) J] = flatten(concat(F_joint, P))
};

enum class RegressorInput { Gap, JointFeat, Coord2d, Coord3d, Coord3dPlusFeat };

std::string_view to_string(RegressorInput m);
// Throws UnknownMode.
RegressorInput regressor_input_from_string(std::string_view s);
// Length of variant_inputs() for a config.
int regressor_input_size(RegressorInput mode, const Pose2PoseConfig& cfg);

// Parameters `<prefix>.heat` (1x1, C_in -> Dz J) and `<prefix>.feat` (1x1, C_in -> C_joint).
void add_pose2pose(nn::Params& params, Rng& rng, const std::string& prefix, const Pose2PoseConfig& cfg);
Pose2PoseOutput pose2pose_forward(nn::Bound& p, const std::string& prefix, ad::Var F, const Pose2PoseConfig& cfg);

// Regressor input for one ablation mode: GAP(F), flatten(F_joint),
// flatten(P.xy), flatten(P), or flatten(concat(F_joint, P)).
ad::Var variant_inputs(RegressorInput mode, const Pose2PoseOutput& out, ad::Var F);

// One fully-connected layer `<prefix>` producing 6 values per output joint.
// `extra` is concatenated after `v`. Returns [n_out, 6].
ad::Var regress_rotations(nn::Bound& p, const std::string& prefix, ad::Var v, std::optional<ad::Var> extra, int n_out);

// Parameters for regress_rotations with the bias at the identity rotation.
void add_rotation_regressor(nn::Params& params, Rng& rng, const std::string& prefix, int in, int n_out, double gain = 0.1);

}  // namespace h4w
