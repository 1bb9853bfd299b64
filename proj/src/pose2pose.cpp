#include "h4w/pose2pose.hpp"

#include "h4w/error.hpp"
#include "h4w/grid_ops.hpp"

namespace h4w {

void Pose2PoseConfig::validate() const {
  if (joints < 1 || depth_bins < 1 || c_in < 1 || c_joint < 1)
    throw Error(ErrorKind::ConfigError, "pose2pose dimensions must be >= 1");
}

std::string_view to_string(RegressorInput m) {
  switch (m) {
    case RegressorInput::Gap: return "gap";
    case RegressorInput::JointFeat: return "joint_feat";
    case RegressorInput::Coord2d: return "coord2d";
    case RegressorInput::Coord3d: return "coord3d";
    case RegressorInput::Coord3dPlusFeat: return "coord3d_plus_feat";
  }
  return "?";
}

RegressorInput regressor_input_from_string(std::string_view s) {
  for (RegressorInput m : {RegressorInput::Gap, RegressorInput::JointFeat, RegressorInput::Coord2d, RegressorInput::Coord3d,
                           RegressorInput::Coord3dPlusFeat})
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::UnknownMode, "unknown regressor input mode '" + std::string(s) + "'");
}

int regressor_input_size(RegressorInput mode, const Pose2PoseConfig& cfg) {
  switch (mode) {
    case RegressorInput::Gap: return cfg.c_in;
    case RegressorInput::JointFeat: return cfg.c_joint * cfg.joints;
    case RegressorInput::Coord2d: return 2 * cfg.joints;
    case RegressorInput::Coord3d: return 3 * cfg.joints;
    case RegressorInput::Coord3dPlusFeat: return (cfg.c_joint + 3) * cfg.joints;
  }
  throw Error(ErrorKind::UnknownMode, "unknown regressor input mode");
}

void add_pose2pose(nn::Params& params, Rng& rng, const std::string& prefix, const Pose2PoseConfig& cfg) {
  cfg.validate();
  nn::add_conv(params, rng, prefix + ".heat", cfg.c_in, cfg.depth_bins * cfg.joints, 1);
  nn::add_conv(params, rng, prefix + ".feat", cfg.c_in, cfg.c_joint, 1);
}

Pose2PoseOutput pose2pose_forward(nn::Bound& p, const std::string& prefix, ad::Var F, const Pose2PoseConfig& cfg) {
  const Tensor& f = F.value();
  if (f.rank() != 3 || f.dim(0) != cfg.c_in)
    throw Error(ErrorKind::ShapeMismatch, "pose2pose expects [" + std::to_string(cfg.c_in) + ",H,W] features, got " +
                                              shape_str(f.shape));
  Pose2PoseOutput out;
  out.H = grid::reshape_to_volume(nn::conv(p, prefix + ".heat", F), cfg.depth_bins);
  out.P = grid::soft_argmax_3d(out.H);
  const ad::Var feat = nn::conv(p, prefix + ".feat", F);
  out.F_joint = grid::bilinear_sample(feat, ad::slice(out.P, 1, 0, 2));
  out.v = ad::flatten(ad::concat({out.F_joint, out.P}, 1));
  return out;
}

ad::Var variant_inputs(RegressorInput mode, const Pose2PoseOutput& out, ad::Var F) {
  switch (mode) {
    case RegressorInput::Gap: return ad::mean_pool_spatial(F);
    case RegressorInput::JointFeat: return ad::flatten(out.F_joint);
    case RegressorInput::Coord2d: return ad::flatten(ad::slice(out.P, 1, 0, 2));
    case RegressorInput::Coord3d: return ad::flatten(out.P);
    case RegressorInput::Coord3dPlusFeat: return out.v;
  }
  throw Error(ErrorKind::UnknownMode, "unknown regressor input mode");
}

ad::Var regress_rotations(nn::Bound& p, const std::string& prefix, ad::Var v, std::optional<ad::Var> extra, int n_out) {
  ad::Var in = extra ? ad::concat({ad::flatten(v), ad::flatten(*extra)}, 0) : ad::flatten(v);
  const Tensor& w = p(prefix + ".w").value();
  if (w.dim(0) != 6 * n_out || w.dim(1) != static_cast<int>(in.size()))
    throw Error(ErrorKind::ShapeMismatch, "rotation regressor " + prefix + " is " + shape_str(w.shape) + " but input has " +
                                              std::to_string(in.size()) + " values and " + std::to_string(n_out) +
                                              " joints are requested");
  return ad::reshape(nn::dense(p, prefix, in), {n_out, 6});
}

void add_rotation_regressor(nn::Params& params, Rng& rng, const std::string& prefix, int in, int n_out, double gain) {
  nn::add_dense(params, rng, prefix, in, 6 * n_out, gain);
  Tensor& b = params.get(prefix + ".b");
  for (int j = 0; j < n_out; ++j) b[static_cast<std::size_t>(6 * j)] = 1.0, b[static_cast<std::size_t>(6 * j + 4)] = 1.0;
}

}  // namespace h4w
