#pragma once

// Synthetic scenes: random model parameters rendered as colored Gaussian
// blobs at the projected joints of the posed model.
//
// Dataset container (little-endian):
//   "H4WDSET\0" | u32 version | u64 count | u64 offsets[count] | records
// Each record is a u64 byte length followed by the payload: u64 seed, the
// image tensor, the seven parameter tensors (body, rhand, lhand, jaw, beta,
// psi, trans), joints_3d, joints_2d, and 12 f64 box values. A tensor is
// u32 rank, i32 dims[rank], f64 data.

#include <filesystem>
#include <span>
#include <vector>

#include "h4w/pipeline.hpp"
#include "h4w/sample.hpp"

namespace h4w {

struct SynthConfig {
  // Half-widths of the uniform parameter ranges (radians / coefficients).
  double body_range = 0.6, wrist_range = 1.2, finger_range = 1.0, jaw_range = 0.3;
  double shape_range = 1.5, expr_range = 1.5;
  // Camera-space placement of the root (m).
  double depth_min = 170.0, depth_max = 190.0;
  double lateral_range = 0.15;
  double vertical_offset = -0.12;  // centers the toy body vertically
  double sigma = 2.0;              // blob radius in I pixels
  // Blob peak = clamp(shade_base - shade_slope * depth relative to the
  // pelvis (m), 0.2, 1): nearer joints are brighter.
  double shade_base = 0.65, shade_slope = 1.0;
  double noise = 0.01;             // std of additive Gaussian pixel noise
  double blob_dropout = 0.0;       // probability of dropping each hand-joint blob
  double box_margin = 1.3;         // box side relative to the part's joint extent
  double hand_min_size = 0.12;     // minimum physical box side (m)
  double face_min_size = 0.25;
  double frame_margin = 2.0;       // joints must project this far inside I (px)
  int max_attempts = 100;

  bool operator==(const SynthConfig&) const = default;
};

// Joint colors; left/right partners share a color so that flipping an image
// equals rendering the mirrored pose.
std::array<double, 3> joint_color(const BodyModel& model, int joint);

// Blob image without noise for the given I-pixel joint positions: each pixel
// takes the color of its strongest blob times that blob's value. Per-joint
// peak `amplitude` and `keep` mask default to 1 / all joints when empty.
Tensor render_blobs(const BodyModel& model, const Tensor& joints_2d, int height, int width, double sigma,
                    std::span<const double> amplitude = {}, std::span<const char> keep = {});
std::vector<double> depth_amplitudes(const SynthConfig& scfg, const Tensor& joints_3d);

// Square part boxes around the projected joints.
std::array<Box, 3> part_boxes(const PipelineConfig& pcfg, const SynthConfig& scfg, const Sample& s);

// Fills joints_3d, joints_2d and boxes from params. Throws BehindCamera.
void annotate(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, Sample& s);

// Deterministic per seed. Resamples up to max_attempts times when the
// subject leaves the frame or the camera, then throws BehindCamera.
Sample sample_scene(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, std::uint64_t seed);

// Horizontally flipped sample: image mirrored, left/right swapped.
Sample flip_sample(const BodyModel& model, const Sample& s);

// n samples with seeds derived from `seed` by index; result does not depend
// on `workers`. Throws ConfigError when n < 1.
std::vector<Sample> make_split(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, int n,
                               std::uint64_t seed, int workers = 1);

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> load_dataset(const std::filesystem::path& path);

// FNV-1a hash of a sample's serialized record.
std::uint64_t sample_hash(const Sample& s);

}  // namespace h4w
