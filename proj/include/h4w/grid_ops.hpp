#pragma once

// Heatmap and sampling primitives.
//
// Coordinates are (x = column, y = row, z = depth bin) in grid units of the
// tensor they index; integer coordinates address stored samples. Feature maps
// are [C,H,W], heatmap volumes [J,Dz,H,W], joint coordinates [J,3].

#include <span>

#include "h4w/autodiff.hpp"

namespace h4w {

// Axis-aligned box: center and size in pixels of the image it lives on.
// Centers use pixel-index coordinates (pixel i is centered at i); edges sit at
// center -/+ size/2, so ((W-1)/2, (H-1)/2, W, H) covers an entire W x H image.
struct Box {
  double cx = 0.0, cy = 0.0, w = 1.0, h = 1.0;
  bool operator==(const Box&) const = default;
};

}  // namespace h4w

namespace h4w::grid {

// Channel c = joint * depth_bins + depth.
constexpr int volume_channel(int joint, int depth, int depth_bins) { return joint * depth_bins + depth; }

// [J*Dz, H, W] -> [J, Dz, H, W]; ShapeMismatch when C is not a multiple of Dz.
ad::Var reshape_to_volume(ad::Var features, int depth_bins);
// Inverse relabeling [J, Dz, H, W] -> [J*Dz, H, W].
Tensor volume_to_channels(const Tensor& volume);

// Per joint: softmax over all Dz*H*W voxels, then expected (x, y, z) index.
ad::Var soft_argmax_3d(ad::Var volume);
// [K, H, W] -> [K, 2] expected (x, y).
ad::Var soft_argmax_2d(ad::Var maps);

// Bilinear samples of every channel at each (x, y) row of `points` [N,2].
// Coordinates are clamped to [0, W-1] x [0, H-1]. Returns [N, C].
ad::Var bilinear_sample(ad::Var features, ad::Var points);
Tensor bilinear_sample(const Tensor& features, double x, double y);

// One bilinear sample per output bin; box is [4] = (cx, cy, w, h) in the
// source's pixel grid. DegenerateBox when w or h <= 0.
ad::Var roi_align(ad::Var image, ad::Var box, int out_h, int out_w);
Tensor roi_align(const Tensor& image, const Box& box, int out_h, int out_w);

// Source location sampled for output pixel (row, col).
inline double roi_source_x(const Box& b, int col, int out_w) { return b.cx + ((col + 0.5) / out_w - 0.5) * b.w; }
inline double roi_source_y(const Box& b, int row, int out_h) { return b.cy + ((row + 0.5) / out_h - 0.5) * b.h; }
// Inverse of roi_source_x / roi_source_y: output coordinate of a source location.
inline double roi_target_x(const Box& b, double x, int out_w) { return ((x - b.cx) / b.w + 0.5) * out_w - 0.5; }
inline double roi_target_y(const Box& b, double y, int out_h) { return ((y - b.cy) / b.h + 0.5) * out_h - 0.5; }

// Column c -> W-1-c.
ad::Var hflip_image(ad::Var image);
Tensor hflip_image(const Tensor& image);

// x -> W-1-x and row j <- row pairs[j]. Pass an empty span for no relabeling.
Tensor hflip_coords(const Tensor& coords, int width, std::span<const int> pairs);
ad::Var hflip_coords(ad::Var coords, int width, std::span<const int> pairs);

// 2x2 average pooling (resolution halving), [C,H,W] -> [C,H/2,W/2].
Tensor downsample2(const Tensor& image);

}  // namespace h4w::grid
