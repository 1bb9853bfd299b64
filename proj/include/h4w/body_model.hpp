#pragma once

// Simplified SMPL-X-style whole-body model.
//
// Joint layout (53): 0..21 body (pelvis root, SMPL ordering), 22 jaw,
// 23..37 left fingers, 38..52 right fingers. Each hand block lists
// index, middle, pinky, ring, thumb, three joints each, proximal first.
// Coordinates are camera-aligned meters: x toward the subject's left,
// y down, z away from the camera.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "h4w/autodiff.hpp"

namespace h4w {

namespace joints {
inline constexpr int kPelvis = 0;
inline constexpr int kLeftHip = 1, kRightHip = 2;
inline constexpr int kNeck = 12;
inline constexpr int kLeftCollar = 13, kRightCollar = 14;
inline constexpr int kHead = 15;
inline constexpr int kLeftShoulder = 16, kRightShoulder = 17;
inline constexpr int kLeftElbow = 18, kRightElbow = 19;
inline constexpr int kLeftWrist = 20, kRightWrist = 21;
inline constexpr int kJaw = 22;
inline constexpr int kLeftHandBegin = 23;
inline constexpr int kRightHandBegin = 38;
inline constexpr int kNumBody = 22;
inline constexpr int kNumHand = 15;
inline constexpr int kNumJoints = 53;
// Hand-local indices (0..14) of the index, middle, ring, pinky MCP joints.
inline constexpr std::array<int, 4> kMcpLocal = {0, 3, 9, 6};
}  // namespace joints

enum class Part : std::uint8_t { Body = 0, LeftHand = 1, RightHand = 2, Face = 3 };

struct BodyModel {
  Tensor template_vertices;  // [V,3]
  std::vector<int> parents;  // [K], -1 for the root
  Tensor rest_joints;        // [K,3]
  Tensor skin_weights;       // [V,K], rows sum to 1
  Tensor shape_dirs;         // [V,3,10]
  Tensor expr_dirs;          // [V,3,10]
  Tensor joint_regressor;    // [K,V], rows sum to 1
  std::vector<int> left_right_pairs;  // [K] sagittal mirror partner of each joint
  std::array<std::array<int, 4>, 2> mcp_indices{};  // [left, right] global joint ids
  std::vector<Part> vertex_part;      // [V]

  int num_vertices() const { return template_vertices.dim(0); }
  int num_joints() const { return static_cast<int>(parents.size()); }

  // Throws InvalidTree / ShapeMismatch / Degenerate on any broken invariant.
  void validate() const;
  // Parents before children; throws InvalidTree on cycles or multiple roots.
  std::vector<int> topological_order() const;
  std::vector<int> vertices_of(Part part) const;
};

struct ModelParams {
  Tensor theta_body{{joints::kNumBody, 3}};   // axis-angle, includes the root
  Tensor theta_rhand{{joints::kNumHand, 3}};
  Tensor theta_lhand{{joints::kNumHand, 3}};
  Tensor theta_jaw{{1, 3}};
  Tensor beta{{10}};
  Tensor psi{{10}};
  Tensor trans{{3}};  // meters

  void validate() const;
  // [53,3] in model joint order.
  Tensor full_pose() const;
  // Flat concatenation body, rhand, lhand, jaw, beta, psi (trans excluded).
  std::vector<double> flat_without_trans() const;
  bool operator==(const ModelParams&) const = default;
};

// Sagittal mirror: joints swapped through left_right_pairs, rotations
// mirrored, trans x negated.
ModelParams mirror_params(const ModelParams& p);

struct MeshOutput {
  Tensor vertices;  // [V,3]
  Tensor joints;    // [K,3] posed
};

MeshOutput forward_model(const BodyModel& model, const ModelParams& params);
Tensor regress_joints(const BodyModel& model, const Tensor& vertices);

struct Intrinsics {
  double fx = 5000.0, fy = 5000.0;
  double cx = 0.0, cy = 0.0;
};

// u = fx x / z + cx, v = fy y / z + cy. BehindCamera if any z <= 1e-6.
Tensor perspective_project(const Tensor& points, const Intrinsics& k);

struct ToyModelConfig {
  int vertex_budget = 600;
  std::uint64_t seed = 7;
};

BodyModel build_toy_model(const ToyModelConfig& cfg = {});

// Vertex permutation p with mirror(template[i]) == template[p[i]].
std::vector<int> mirror_vertex_permutation(const BodyModel& model, double tol = 1e-9);

void save_body_model(const BodyModel& model, const std::filesystem::path& path);
BodyModel load_body_model(const std::filesystem::path& path);

}  // namespace h4w

namespace h4w::body {

struct ParamVars {
  ad::Var theta_body, theta_rhand, theta_lhand, theta_jaw, beta, psi, trans;
};

struct MeshVars {
  ad::Var vertices;  // [V,3]
  ad::Var joints;    // [K,3]
};

ParamVars to_vars(ad::Tape& tape, const ModelParams& p, bool requires_grad);

// Pose [53,3] assembled from the per-part blocks.
ad::Var full_pose(const ParamVars& p);

MeshVars forward_model(const BodyModel& model, const ParamVars& params);
// Same, with the pose already assembled as [K,3].
MeshVars forward_model(const BodyModel& model, ad::Var pose, ad::Var beta, ad::Var psi, ad::Var trans);

ad::Var regress_joints(const BodyModel& model, ad::Var vertices);
ad::Var perspective_project(ad::Var points, const Intrinsics& k);

}  // namespace h4w::body
