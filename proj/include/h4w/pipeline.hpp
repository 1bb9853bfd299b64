#pragma once

// Whole-body network: BodyNet (phase 1: joints + part boxes), HandNet on
// box crops, BodyNet phase 2 (rotations from body joints plus hand
// features), FaceNet on the face crop, then the body model.
//
// Images: human image I [3, H, W]; BodyNet sees I_b = downsample2(I).
// Pixel coordinates are pixel-index based (pixel i is centered at i).
// Box order: left hand, right hand, face.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "h4w/body_model.hpp"
#include "h4w/grid_ops.hpp"
#include "h4w/nn.hpp"
#include "h4w/pose2pose.hpp"

namespace h4w {

enum class WristMode { BodyOnly, BodyPlusHandGap, BodyPlusAllJoints, BodyPlusMcp };
std::string_view to_string(WristMode m);
// Throws UnknownMode.
WristMode wrist_mode_from_string(std::string_view s);

struct ConvLayer {
  int channels = 32;
  int stride = 1;
  bool operator==(const ConvLayer&) const = default;
};

inline constexpr int kLeftHandBox = 0, kRightHandBox = 1, kFaceBox = 2;

struct PipelineConfig {
  std::string profile = "toy";
  int image_h = 128, image_w = 96;  // I; I_b is half of each
  int hand_size = 64;               // square hand crop
  int face_size = 48;               // square face crop
  // 3x3 conv + ReLU stack shared by the body, hand and face backbones. The
  // first layer's output is the "first block" used for body-feature injection.
  std::vector<ConvLayer> backbone = {{16, 2}, {32, 2}, {64, 2}, {128, 1}};
  int depth_bins = 8;
  int c_joint = 16;
  std::array<int, 4> mcp_local = joints::kMcpLocal;  // hand-local MCP joints
  WristMode wrist_mode = WristMode::BodyPlusMcp;
  bool finger_body_feature = false;
  RegressorInput regressor_input = RegressorInput::Coord3dPlusFeat;
  bool detach_vm = false;
  int box_hidden = 16;   // width of the box-center conv
  int size_hidden = 32;  // width of the box-size hidden layer
  double focal = 5000.0;           // pixels at I_b resolution
  double body_depth_range = 0.4;   // meters; depth bins span [-r, r] around the pelvis
  double hand_depth_range = 0.1;   // meters around the wrist
  double nominal_depth = 180.0;    // initial camera-space depth of the subject (m)
  double nominal_box_size = 0.12;  // initial box size as a fraction of I's width/height
  double gt_box_prob = 0.5;        // probability of cropping hands with GT boxes in training
  double head_gain = 0.1;          // init scale of the regression heads
  double input_mean = 0.05;        // images enter the backbones as (I - mean) / std
  double input_std = 0.15;

  static PipelineConfig toy();
  static PipelineConfig reference();
  // Throws ConfigError on inconsistent sizes.
  void validate() const;

  int body_h() const { return image_h / 2; }
  int body_w() const { return image_w / 2; }
  int c_in() const { return backbone.back().channels; }
  int total_stride() const;
  // Output size of the backbone (and of block 1) for an input side length.
  int grid_size(int input) const;
  int block1_size(int input) const;
  Pose2PoseConfig body_p2p() const { return {joints::kNumBody, depth_bins, c_in(), c_joint}; }
  Pose2PoseConfig hand_p2p() const { return {joints::kNumHand, depth_bins, c_in(), c_joint}; }
  int wrist_extra_size() const;
  Intrinsics body_intrinsics() const;  // I_b camera
  Intrinsics image_intrinsics() const; // I camera

  bool operator==(const PipelineConfig&) const = default;
};

// Maps between grid and pixel coordinates of a backbone applied to an input of
// side `input`: pixel = stride * grid + offset. The offset keeps the map
// consistent under horizontal flips for any input size.
struct GridMap {
  double stride = 1.0, offset = 0.0;
  double to_pixel(double g) const { return stride * g + offset; }
  double to_grid(double px) const { return (px - offset) / stride; }
};
GridMap grid_map(const PipelineConfig& cfg, int input);

// I <-> I_b pixel coordinates.
inline double image_to_body_px(double x) { return 0.5 * (x - 0.5); }
inline double body_to_image_px(double x) { return 2.0 * x + 0.5; }

nn::Params init_pipeline(const PipelineConfig& cfg, std::uint64_t seed);

struct BackboneOut {
  ad::Var block1;
  ad::Var out;
};
BackboneOut backbone_forward(nn::Bound& p, const std::string& prefix, const PipelineConfig& cfg, ad::Var image,
                             std::optional<ad::Var> block1_add = std::nullopt);

struct Phase1Out {
  BackboneOut backbone;  // F_b = backbone.out
  Pose2PoseOutput p2p;
  ad::Var box_centers_grid;  // [3, 2]
  ad::Var box_features;      // [3, C_in] F_b sampled at the centers
  ad::Var boxes;             // [3, 4] (cx, cy, w, h) in I pixels
};
Phase1Out bodynet_phase1(nn::Bound& p, const PipelineConfig& cfg, const Tensor& body_image);

struct HandOut {
  Pose2PoseOutput right, left;  // left in its flipped (right-hand) frame
  ad::Var right_features, left_features;  // hand backbone outputs
  ad::Var theta_rhand, theta_lhand;       // [15, 3]; left flipped back
  ad::Var rot6d_rhand, rot6d_lhand_raw;   // [15, 6]
  ad::Var v_m;       // [8 (C_joint + 3)]: right MCPs then left MCPs
  ad::Var hand_gap;  // [2 C_in]: right then left
  ad::Var all_joints;  // [30 (C_joint + 3)]: right then left
};
// `boxes` are used as constants. `body_block1` enables body-feature injection.
HandOut handnet_forward(nn::Bound& p, const PipelineConfig& cfg, const Tensor& image, const std::array<Box, 3>& boxes,
                        std::optional<ad::Var> body_block1 = std::nullopt);

struct Phase2Out {
  ad::Var regressor_input;
  ad::Var rot6d_body;  // [22, 6]
  ad::Var theta_body;  // [22, 3]
  ad::Var beta;        // [10]
  ad::Var trans;       // [3]
};
Phase2Out bodynet_phase2(nn::Bound& p, const PipelineConfig& cfg, const Phase1Out& ph1, const HandOut& hands);

struct FaceOut {
  ad::Var rot6d_jaw;  // [1, 6]
  ad::Var theta_jaw;  // [1, 3]
  ad::Var psi;        // [10]
};
FaceOut facenet_forward(nn::Bound& p, const PipelineConfig& cfg, const Tensor& image, const Box& face_box);

struct PipelineOutput {
  Phase1Out phase1;
  HandOut hands;
  Phase2Out phase2;
  FaceOut face;
  std::array<Box, 3> crop_boxes;  // boxes actually used for cropping
  body::ParamVars params;
  body::MeshVars mesh;
  ad::Var regressed_joints;  // [K, 3] camera space

  ModelParams model_params() const;
  std::array<Box, 3> predicted_boxes() const;
};

struct ForwardOptions {
  // Crop with these boxes instead of the predicted ones (teacher forcing).
  std::optional<std::array<Box, 3>> crop_boxes;
};

// (I - input_mean) / input_std.
Tensor normalize_image(const PipelineConfig& cfg, const Tensor& image);

// Runs on the raw image; normalization happens inside.
PipelineOutput full_forward(nn::Bound& p, const PipelineConfig& cfg, const BodyModel& model, const Tensor& image,
                            const ForwardOptions& opts = {});

// Config file (JSON); unknown keys are rejected with ConfigError.
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const std::string& text);

// Checkpoint: named float64 tensors in a versioned binary file.
void save_checkpoint(const nn::Params& params, const std::filesystem::path& path);
nn::Params load_checkpoint(const std::filesystem::path& path);

// Makes the weights exactly equivariant to a horizontal flip of the input
// image (outputs mirror, left/right swap). Requires odd widths at every
// backbone stage; see flip_symmetric_config().
void flip_symmetrize(nn::Params& params, const PipelineConfig& cfg, const BodyModel& model);
PipelineConfig flip_symmetric_config();

}  // namespace h4w
