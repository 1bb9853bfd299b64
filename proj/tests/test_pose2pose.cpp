#include <doctest.h>

#include "h4w/gradcheck.hpp"
#include "h4w/grid_ops.hpp"
#include "h4w/pose2pose.hpp"
#include "test_util.hpp"

using namespace h4w;
using test::rand_tensor;

namespace {

Pose2PoseConfig small_cfg() { return {3, 4, 5, 2}; }

struct Fixture {
  Pose2PoseConfig cfg = small_cfg();
  nn::Params params;
  Tensor F;
  Fixture() {
    Rng rng(5);
    add_pose2pose(params, rng, "p", cfg);
    F = rand_tensor(rng, {cfg.c_in, 4, 6}, 0, 1);
  }
};

// Four-weight bilinear sample of channel c of a [C,H,W] tensor.
double bilinear(const Tensor& f, int c, double x, double y) {
  const int h = f.dim(1), w = f.dim(2);
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(x), w - 2), y0 = std::min(static_cast<int>(y), h - 2);
  const double ax = x - x0, ay = y - y0;
  auto at = [&](int yy, int xx) { return f[static_cast<std::size_t>((c * h + yy) * w + xx)]; };
  return (1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x0 + 1) + (1 - ax) * ay * at(y0 + 1, x0) +
         ax * ay * at(y0 + 1, x0 + 1);
}

}  // namespace

TEST_CASE("pose2pose output shapes") {
  Fixture fx;
  ad::Tape t;
  nn::Bound b(t, fx.params);
  const Pose2PoseOutput o = pose2pose_forward(b, "p", t.constant(fx.F), fx.cfg);
  CHECK(o.H.shape() == Shape{3, 4, 4, 6});
  CHECK(o.P.shape() == Shape{3, 3});
  CHECK(o.F_joint.shape() == Shape{3, 2});
  CHECK(o.v.shape() == Shape{15});
}

TEST_CASE("pose2pose recomposes from explicit loops") {
  Fixture fx;
  ad::Tape t;
  nn::Bound b(t, fx.params);
  const Pose2PoseOutput o = pose2pose_forward(b, "p", t.constant(fx.F), fx.cfg);
  const Tensor& hw = fx.params.get("p.heat.w");
  const Tensor& hb = fx.params.get("p.heat.b");
  const Tensor& fw = fx.params.get("p.feat.w");
  const Tensor& fb = fx.params.get("p.feat.b");
  const int C = fx.cfg.c_in, Dz = fx.cfg.depth_bins, H = 4, W = 6;
  auto feat = [&](int c, int y, int x) { return fx.F[static_cast<std::size_t>((c * H + y) * W + x)]; };
  Tensor joint_map({fx.cfg.c_joint, H, W});
  for (int k = 0; k < fx.cfg.c_joint; ++k)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = fb[static_cast<std::size_t>(k)];
        for (int c = 0; c < C; ++c) s += fw[static_cast<std::size_t>(k * C + c)] * feat(c, y, x);
        joint_map[static_cast<std::size_t>((k * H + y) * W + x)] = s;
      }
  for (int j = 0; j < fx.cfg.joints; ++j) {
    std::vector<double> logits;
    double mx = -1e300;
    for (int d = 0; d < Dz; ++d)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int ch = j * Dz + d;
          double s = hb[static_cast<std::size_t>(ch)];
          for (int c = 0; c < C; ++c) s += hw[static_cast<std::size_t>(ch * C + c)] * feat(c, y, x);
          logits.push_back(s);
          mx = std::max(mx, s);
        }
    double z = 0, ex = 0, ey = 0, ez = 0;
    std::size_t i = 0;
    for (int d = 0; d < Dz; ++d)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x, ++i) {
          const double e = std::exp(logits[i] - mx);
          z += e, ex += e * x, ey += e * y, ez += e * d;
        }
    const double px = ex / z, py = ey / z, pz = ez / z;
    CHECK(std::abs(o.P.value()[static_cast<std::size_t>(3 * j)] - px) < 1e-12);
    CHECK(std::abs(o.P.value()[static_cast<std::size_t>(3 * j + 1)] - py) < 1e-12);
    CHECK(std::abs(o.P.value()[static_cast<std::size_t>(3 * j + 2)] - pz) < 1e-12);
    const int row = fx.cfg.c_joint + 3;
    for (int k = 0; k < fx.cfg.c_joint; ++k) {
      const double want = bilinear(joint_map, k, px, py);
      CHECK(std::abs(o.F_joint.value()[static_cast<std::size_t>(j * fx.cfg.c_joint + k)] - want) < 1e-12);
      CHECK(o.v.value()[static_cast<std::size_t>(j * row + k)] == o.F_joint.value()[static_cast<std::size_t>(j * fx.cfg.c_joint + k)]);
    }
    for (int c = 0; c < 3; ++c)
      CHECK(o.v.value()[static_cast<std::size_t>(j * row + fx.cfg.c_joint + c)] == o.P.value()[static_cast<std::size_t>(3 * j + c)]);
  }
}

TEST_CASE("regressor input variants have the documented sizes") {
  Fixture fx;
  ad::Tape t;
  nn::Bound b(t, fx.params);
  const ad::Var F = t.constant(fx.F);
  const Pose2PoseOutput o = pose2pose_forward(b, "p", F, fx.cfg);
  for (RegressorInput m : {RegressorInput::Gap, RegressorInput::JointFeat, RegressorInput::Coord2d, RegressorInput::Coord3d,
                           RegressorInput::Coord3dPlusFeat}) {
    CHECK(static_cast<int>(variant_inputs(m, o, F).size()) == regressor_input_size(m, fx.cfg));
    CHECK(regressor_input_from_string(to_string(m)) == m);
  }
  CHECK(regressor_input_size(RegressorInput::Gap, fx.cfg) == 5);
  CHECK(regressor_input_size(RegressorInput::Coord2d, fx.cfg) == 6);
  CHECK(regressor_input_size(RegressorInput::Coord3dPlusFeat, fx.cfg) == 15);
  CHECK(test::error_kind([] { (void)regressor_input_from_string("pixels"); }) == ErrorKind::UnknownMode);
}

TEST_CASE("rotation regressor starts near identity and checks its input size") {
  Fixture fx;
  Rng rng(2);
  add_rotation_regressor(fx.params, rng, "rot", 15, 3, 0.0);
  ad::Tape t;
  nn::Bound b(t, fx.params);
  const Pose2PoseOutput o = pose2pose_forward(b, "p", t.constant(fx.F), fx.cfg);
  const Tensor r = regress_rotations(b, "rot", o.v, std::nullopt, 3).value();
  CHECK(r.shape == Shape{3, 6});
  for (int j = 0; j < 3; ++j) {
    const double want[6] = {1, 0, 0, 0, 1, 0};
    for (int k = 0; k < 6; ++k) CHECK(r[static_cast<std::size_t>(6 * j + k)] == want[k]);
  }
  CHECK(test::error_kind([&] { (void)regress_rotations(b, "rot", o.v, o.P, 3); }) == ErrorKind::ShapeMismatch);
  CHECK(test::error_kind([&] { (void)regress_rotations(b, "rot", o.v, std::nullopt, 4); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("pose2pose rejects features with the wrong channel count") {
  Fixture fx;
  ad::Tape t;
  nn::Bound b(t, fx.params);
  CHECK(test::error_kind([&] { (void)pose2pose_forward(b, "p", t.constant(Tensor({4, 3, 3})), fx.cfg); }) ==
        ErrorKind::ShapeMismatch);
  Pose2PoseConfig bad = fx.cfg;
  bad.depth_bins = 0;
  CHECK(test::error_kind([&] { bad.validate(); }) == ErrorKind::ConfigError);
}

TEST_CASE("gradients through pose2pose match finite differences") {
  Fixture fx;
  Rng rng(9);
  add_rotation_regressor(fx.params, rng, "rot", 15, 3, 0.5);
  const std::vector<std::string> names = {"p.heat.w", "p.heat.b", "p.feat.w", "rot.w"};
  std::vector<Tensor> inputs = {fx.F};
  for (const auto& n : names) inputs.push_back(fx.params.get(n));
  const auto f = [&](ad::Tape& t, std::span<const ad::Var> in) {
    nn::Params p = fx.params;
    nn::Bound b(t, p);
    // Route the probed leaves in place of the bound parameters.
    ad::Var F = in[0];
    ad::Var H = ad::conv2d(F, in[1], in[2]);
    const Pose2PoseOutput o = [&] {
      Pose2PoseOutput out;
      const ad::Var vol = grid::reshape_to_volume(H, fx.cfg.depth_bins);
      out.P = grid::soft_argmax_3d(vol);
      const ad::Var fm = ad::conv2d(F, in[3], b("p.feat.b"));
      out.F_joint = grid::bilinear_sample(fm, ad::slice(out.P, 1, 0, 2));
      out.v = ad::flatten(ad::concat({out.F_joint, out.P}, 1));
      return out;
    }();
    const ad::Var r = ad::linear(o.v, in[4], b("rot.b"));
    Tensor w(r.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(1.3 * static_cast<double>(i));
    return ad::add(ad::sum(ad::mul_const(r, w)), ad::sum(o.P));
  };
  ad::GradCheckOptions opts;
  opts.max_entries_per_block = 30;
  const ad::GradCheckReport rep = ad::grad_check(f, inputs, opts);
  INFO(ad::describe(rep));
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("pose2pose forward equals the hand-assembled graph above") {
  Fixture fx;
  ad::Tape t;
  nn::Bound b(t, fx.params);
  const ad::Var F = t.constant(fx.F);
  const Pose2PoseOutput o = pose2pose_forward(b, "p", F, fx.cfg);
  const ad::Var H = ad::conv2d(F, b("p.heat.w"), b("p.heat.b"));
  const ad::Var P = grid::soft_argmax_3d(grid::reshape_to_volume(H, fx.cfg.depth_bins));
  CHECK(P.value() == o.P.value());
}
