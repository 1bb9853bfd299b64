#include "h4w/losses.hpp"

#include "h4w/error.hpp"

namespace h4w {
namespace {

ad::Var zero(ad::Tape& t) { return t.constant(Tensor::scalar(0.0)); }

// Mean |pred - target| over entries with mask 1; 0 when nothing is valid.
ad::Var masked_l1(ad::Var pred, const Tensor& target, const Tensor& mask) {
  double count = 0;
  for (double m : mask.data) count += m;
  if (count == 0) return zero(*pred.tape);
  Tensor t = target;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= mask[i];
  const ad::Var l = ad::l1_loss(ad::mul_const(pred, mask), pred.tape->constant(std::move(t)));
  return ad::scale(l, static_cast<double>(mask.size()) / count);
}

// Per-column affine map of an [N,3] coordinate tensor.
ad::Var affine_cols(ad::Var p, const GridMap& mx, const GridMap& my) {
  const int n = p.value().dim(0);
  Tensor a({n, 3}), c({n, 3});
  for (int i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(3 * i);
    a[r] = mx.stride, a[r + 1] = my.stride, a[r + 2] = 1.0;
    c[r] = mx.offset, c[r + 1] = my.offset, c[r + 2] = 0.0;
  }
  return ad::add_const(ad::mul_const(p, a), c);
}

bool inside(double v, double lo, double hi) { return v >= lo && v <= hi; }

void require_gt(const Tensor& t, const Shape& shape, const char* what) {
  if (t.size() == 0) throw Error(ErrorKind::MissingGT, std::string("sample lacks ") + what);
  require_shape(t, shape, what);
}

}  // namespace

LossBreakdown LossVars::values() const {
  return {l_param.item(), l_coord.item(), l_box.item(), total.item()};
}

ad::Var loss_param(const body::ParamVars& pred, const ModelParams& gt) {
  gt.validate();
  const std::vector<ad::Var> parts = {ad::flatten(pred.theta_body), ad::flatten(pred.theta_rhand),
                                      ad::flatten(pred.theta_lhand), ad::flatten(pred.theta_jaw),
                                      ad::flatten(pred.beta),        ad::flatten(pred.psi)};
  const ad::Var p = ad::concat(parts, 0);
  const std::vector<double> g = gt.flat_without_trans();
  if (p.size() != g.size())
    throw Error(ErrorKind::ShapeMismatch, "predicted parameters have " + std::to_string(p.size()) + " entries, GT " +
                                              std::to_string(g.size()));
  return ad::l1_loss(p, p.tape->constant(Tensor({static_cast<int>(g.size())}, g)));
}

ad::Var loss_box(ad::Var boxes, const std::array<Box, 3>& gt, int image_w, int image_h) {
  if (boxes.shape() != Shape{3, 4})
    throw Error(ErrorKind::ShapeMismatch, "boxes must be [3,4], got " + shape_str(boxes.shape()));
  Tensor s({3, 4}), g({3, 4});
  for (int b = 0; b < 3; ++b) {
    const Box& x = gt[static_cast<std::size_t>(b)];
    const double sc[4] = {1.0 / image_w, 1.0 / image_h, 1.0 / image_w, 1.0 / image_h};
    const double gv[4] = {x.cx, x.cy, x.w, x.h};
    for (int i = 0; i < 4; ++i) {
      s[static_cast<std::size_t>(4 * b + i)] = sc[i];
      g[static_cast<std::size_t>(4 * b + i)] = gv[i] * sc[i];
    }
  }
  return ad::l1_loss(ad::mul_const(boxes, s), boxes.tape->constant(std::move(g)));
}

double depth_to_bin(double z_rel, double range, int depth_bins) { return 0.5 * (z_rel / range + 1.0) * (depth_bins - 1); }
double bin_to_depth(double bin, double range, int depth_bins) { return (2.0 * bin / (depth_bins - 1) - 1.0) * range; }

HeatmapTargets heatmap_targets(const PipelineConfig& cfg, const Sample& gt, const std::array<Box, 3>& crop_boxes) {
  using namespace joints;
  require_gt(gt.joints_3d, {kNumJoints, 3}, "joints_3d");
  require_gt(gt.joints_2d, {kNumJoints, 2}, "joints_2d");
  const Tensor& j3 = gt.joints_3d;
  const Tensor& j2 = gt.joints_2d;
  auto at3 = [&](int j, int c) { return j3[static_cast<std::size_t>(3 * j + c)]; };
  auto at2 = [&](int j, int c) { return j2[static_cast<std::size_t>(2 * j + c)]; };
  const double top = cfg.depth_bins - 1;

  HeatmapTargets t;
  t.body = Tensor({kNumBody, 3});
  t.body_mask = Tensor({kNumBody, 3});
  {
    const GridMap mx = grid_map(cfg, cfg.body_w()), my = grid_map(cfg, cfg.body_h());
    const double hx = mx.to_pixel(cfg.grid_size(cfg.body_w()) - 1), hy = my.to_pixel(cfg.grid_size(cfg.body_h()) - 1);
    for (int j = 0; j < kNumBody; ++j) {
      const double x = image_to_body_px(at2(j, 0)), y = image_to_body_px(at2(j, 1));
      const double z = depth_to_bin(at3(j, 2) - at3(kPelvis, 2), cfg.body_depth_range, cfg.depth_bins);
      const double ok = inside(x, mx.offset, hx) && inside(y, my.offset, hy) && inside(z, 0, top) ? 1.0 : 0.0;
      const double v[3] = {x, y, z};
      for (int c = 0; c < 3; ++c) {
        t.body[static_cast<std::size_t>(3 * j + c)] = v[c];
        t.body_mask[static_cast<std::size_t>(3 * j + c)] = ok;
      }
    }
  }
  const int hs = cfg.hand_size;
  const GridMap hm = grid_map(cfg, hs);
  const double hhi = hm.to_pixel(cfg.grid_size(hs) - 1);
  auto hand = [&](int begin, int wrist, const Box& box, bool flip, Tensor& out, Tensor& mask) {
    out = Tensor({kNumHand, 3});
    mask = Tensor({kNumHand, 3});
    for (int i = 0; i < kNumHand; ++i) {
      const int j = begin + i;
      double x = grid::roi_target_x(box, at2(j, 0), hs);
      if (flip) x = hs - 1 - x;
      const double y = grid::roi_target_y(box, at2(j, 1), hs);
      const double z = depth_to_bin(at3(j, 2) - at3(wrist, 2), cfg.hand_depth_range, cfg.depth_bins);
      const double ok = inside(x, hm.offset, hhi) && inside(y, hm.offset, hhi) && inside(z, 0, top) ? 1.0 : 0.0;
      const double v[3] = {x, y, z};
      for (int c = 0; c < 3; ++c) {
        out[static_cast<std::size_t>(3 * i + c)] = v[c];
        mask[static_cast<std::size_t>(3 * i + c)] = ok;
      }
    }
  };
  hand(kRightHandBegin, kRightWrist, crop_boxes[kRightHandBox], false, t.rhand, t.rhand_mask);
  hand(kLeftHandBegin, kLeftWrist, crop_boxes[kLeftHandBox], true, t.lhand, t.lhand_mask);
  return t;
}

ad::Var loss_coord(const PipelineConfig& cfg, const LossConfig& lc, const PipelineOutput& out, const Sample& gt) {
  using namespace joints;
  ad::Tape& tape = *out.regressed_joints.tape;
  ad::Var total = zero(tape);
  if (lc.coord_heatmap) {
    const HeatmapTargets t = heatmap_targets(cfg, gt, out.crop_boxes);
    const GridMap bx = grid_map(cfg, cfg.body_w()), by = grid_map(cfg, cfg.body_h()), hm = grid_map(cfg, cfg.hand_size);
    const ad::Var pred = ad::concat({affine_cols(out.phase1.p2p.P, bx, by), affine_cols(out.hands.right.P, hm, hm),
                                     affine_cols(out.hands.left.P, hm, hm)},
                                    0);
    auto stack = [](const Tensor& a, const Tensor& b, const Tensor& c) {
      Tensor s({a.dim(0) + b.dim(0) + c.dim(0), 3});
      std::copy(a.data.begin(), a.data.end(), s.data.begin());
      std::copy(b.data.begin(), b.data.end(), s.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
      std::copy(c.data.begin(), c.data.end(), s.data.begin() + static_cast<std::ptrdiff_t>(a.size() + b.size()));
      return s;
    };
    total = ad::add(total, masked_l1(pred, stack(t.body, t.rhand, t.lhand), stack(t.body_mask, t.rhand_mask, t.lhand_mask)));
  }
  if (lc.coord_joints3d) {
    require_gt(gt.joints_3d, {kNumJoints, 3}, "joints_3d");
    Tensor m({kNumJoints, kNumJoints});
    for (int i = 0; i < kNumJoints; ++i) {
      m[static_cast<std::size_t>(i * kNumJoints + i)] += 1.0;
      m[static_cast<std::size_t>(i * kNumJoints + kPelvis)] -= 1.0;
    }
    Tensor g({kNumJoints, 3});
    for (int i = 0; i < kNumJoints; ++i)
      for (int c = 0; c < 3; ++c)
        g[static_cast<std::size_t>(3 * i + c)] =
            gt.joints_3d[static_cast<std::size_t>(3 * i + c)] - gt.joints_3d[static_cast<std::size_t>(3 * kPelvis + c)];
    const ad::Var rel = ad::matmul(tape.constant(std::move(m)), out.regressed_joints);
    total = ad::add(total, ad::l1_loss(rel, tape.constant(std::move(g))));
  }
  if (lc.coord_joints2d) {
    require_gt(gt.joints_2d, {kNumJoints, 2}, "joints_2d");
    Tensor g = gt.joints_2d;
    for (double& v : g.data) v = image_to_body_px(v);
    const ad::Var proj = body::perspective_project(out.regressed_joints, cfg.body_intrinsics());
    total = ad::add(total, ad::l1_loss(proj, tape.constant(std::move(g))));
  }
  return total;
}

LossVars total_loss(const PipelineConfig& cfg, const LossConfig& lc, const PipelineOutput& out, const Sample& gt) {
  LossVars l;
  l.l_param = ad::scale(loss_param(out.params, gt.params), lc.w_param);
  l.l_coord = ad::scale(loss_coord(cfg, lc, out, gt), lc.w_coord);
  l.l_box = ad::scale(loss_box(out.phase1.boxes, gt.boxes, cfg.image_w, cfg.image_h), lc.w_box);
  l.total = ad::add(ad::add(l.l_param, l.l_coord), l.l_box);
  return l;
}

}  // namespace h4w
