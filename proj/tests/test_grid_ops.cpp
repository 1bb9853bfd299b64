#include <doctest.h>

#include <cmath>

#include "h4w/error.hpp"
#include "h4w/gradcheck.hpp"
#include "h4w/grid_ops.hpp"
#include "h4w/random.hpp"

using namespace h4w;

namespace {

Tensor rand_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

ad::Var weighted(ad::Var v) {
  Tensor w(v.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.9 * static_cast<double>(i) + 0.2);
  return ad::sum(ad::mul_const(v, w));
}

// Image whose every channel is an affine function of (x, y).
Tensor affine_image(int c, int h, int w) {
  Tensor t({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t[static_cast<std::size_t>((ch * h + y) * w + x)] = (ch + 1) * 0.5 * x - 0.25 * y + ch;
  return t;
}

double affine_value(int ch, double x, double y) { return (ch + 1) * 0.5 * x - 0.25 * y + ch; }

}  // namespace

TEST_CASE("channel layout is joint-major") {
  CHECK(grid::volume_channel(0, 0, 8) == 0);
  CHECK(grid::volume_channel(2, 5, 8) == 21);
  ad::Tape t;
  Tensor f({6, 2, 2});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
  const Tensor v = grid::reshape_to_volume(t.constant(f), 3).value();
  CHECK(v.shape == Shape{2, 3, 2, 2});
  // joint 1, depth 2, row 1, col 0 lives in channel 5
  CHECK(v[((1 * 3 + 2) * 2 + 1) * 2 + 0] == f[(5 * 2 + 1) * 2 + 0]);
  CHECK(grid::volume_to_channels(v) == f);
  try {
    (void)grid::reshape_to_volume(t.constant(Tensor({5, 2, 2})), 3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("soft-argmax 3D matches a direct expectation") {
  Rng rng(31);
  const Tensor vol = rand_tensor(rng, {2, 3, 4, 5}, -2, 2);
  ad::Tape t;
  const Tensor out = grid::soft_argmax_3d(t.constant(vol)).value();
  for (int j = 0; j < 2; ++j) {
    double z = 0, ex = 0, ey = 0, ez = 0;
    for (int d = 0; d < 3; ++d)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
          const double e = std::exp(vol[static_cast<std::size_t>(((j * 3 + d) * 4 + y) * 5 + x)]);
          z += e, ex += e * x, ey += e * y, ez += e * d;
        }
    CHECK(out[static_cast<std::size_t>(3 * j)] == doctest::Approx(ex / z).epsilon(1e-12));
    CHECK(out[static_cast<std::size_t>(3 * j + 1)] == doctest::Approx(ey / z).epsilon(1e-12));
    CHECK(out[static_cast<std::size_t>(3 * j + 2)] == doctest::Approx(ez / z).epsilon(1e-12));
  }
}

TEST_CASE("soft-argmax limits: peaked and flat volumes") {
  Tensor peaked({1, 4, 6, 7}, 0.0);
  peaked[((2 * 6) + 3) * 7 + 5] = 200.0;
  ad::Tape t;
  const Tensor p = grid::soft_argmax_3d(t.constant(peaked)).value();
  CHECK(p[0] == doctest::Approx(5.0));
  CHECK(p[1] == doctest::Approx(3.0));
  CHECK(p[2] == doctest::Approx(2.0));
  const Tensor f = grid::soft_argmax_3d(t.constant(Tensor({1, 4, 6, 7}, 1.5))).value();
  CHECK(f[0] == doctest::Approx(3.0));
  CHECK(f[1] == doctest::Approx(2.5));
  CHECK(f[2] == doctest::Approx(1.5));
  // Huge logits stay finite.
  const Tensor big = grid::soft_argmax_2d(t.constant(Tensor({1, 3, 3}, 1e300))).value();
  CHECK(big[0] == doctest::Approx(1.0));
}

TEST_CASE("soft-argmax gradients") {
  Rng rng(32);
  auto r3 = ad::grad_check([](ad::Tape&, std::span<const ad::Var> in) { return weighted(grid::soft_argmax_3d(in[0])); },
                           {rand_tensor(rng, {2, 3, 4, 3})});
  INFO(ad::describe(r3));
  CHECK(r3.max_rel_error < 1e-7);
  auto r2 = ad::grad_check([](ad::Tape&, std::span<const ad::Var> in) { return weighted(grid::soft_argmax_2d(in[0])); },
                           {rand_tensor(rng, {3, 4, 5})});
  CHECK(r2.max_rel_error < 1e-7);
}

TEST_CASE("bilinear sampling reproduces affine images and grid values") {
  const Tensor img = affine_image(2, 5, 6);
  Rng rng(33);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(0, 5), y = rng.uniform(0, 4);
    const Tensor s = grid::bilinear_sample(img, x, y);
    for (int ch = 0; ch < 2; ++ch) CHECK(s[static_cast<std::size_t>(ch)] == doctest::Approx(affine_value(ch, x, y)));
  }
  const Tensor corner = grid::bilinear_sample(img, 5.0, 4.0);
  CHECK(corner[0] == doctest::Approx(affine_value(0, 5, 4)));
  // Outside points clamp to the border.
  const Tensor out = grid::bilinear_sample(img, -3.0, 9.0);
  CHECK(out[1] == doctest::Approx(affine_value(1, 0, 4)));
}

TEST_CASE("bilinear sampling gradients for features and points") {
  Rng rng(34);
  Tensor pts({3, 2}, {0.3, 0.7, 2.4, 1.2, 3.6, 2.8});
  auto r = ad::grad_check(
      [](ad::Tape&, std::span<const ad::Var> in) { return weighted(grid::bilinear_sample(in[0], in[1])); },
      {rand_tensor(rng, {2, 4, 5}), pts});
  INFO(ad::describe(r));
  CHECK(r.max_rel_error < 1e-7);
  // Clamped coordinates receive no gradient.
  ad::Tape t;
  ad::Var f = t.constant(affine_image(1, 4, 4));
  ad::Var p = t.leaf(Tensor({1, 2}, {-2.0, 1.5}));
  t.backward(ad::sum(grid::bilinear_sample(f, p)));
  CHECK(t.grad(p)[0] == 0.0);
  CHECK(t.grad(p)[1] == doctest::Approx(-0.25));
}

TEST_CASE("roi_align: full-image box is the identity") {
  Rng rng(35);
  const Tensor img = rand_tensor(rng, {3, 6, 8});
  const Tensor out = grid::roi_align(img, Box{3.5, 2.5, 8.0, 6.0}, 6, 8);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-14));
}

TEST_CASE("roi_align samples the expected source locations") {
  const Tensor img = affine_image(2, 10, 12);
  const Box b{5.3, 4.1, 4.4, 3.0};
  const Tensor out = grid::roi_align(img, b, 3, 4);
  for (int ch = 0; ch < 2; ++ch)
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 4; ++q) {
        const double x = b.cx - b.w / 2 + (q + 0.5) * b.w / 4;
        const double y = b.cy - b.h / 2 + (r + 0.5) * b.h / 3;
        CHECK(out[static_cast<std::size_t>((ch * 3 + r) * 4 + q)] == doctest::Approx(affine_value(ch, x, y)));
      }
  try {
    (void)grid::roi_align(img, Box{1, 1, 0.0, 2.0}, 2, 2);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateBox);
  }
}

TEST_CASE("roi_align gradients for image and box") {
  Rng rng(36);
  auto r = ad::grad_check(
      [](ad::Tape&, std::span<const ad::Var> in) { return weighted(grid::roi_align(in[0], in[1], 3, 4)); },
      {rand_tensor(rng, {2, 8, 9}), Tensor({4}, {4.13, 3.71, 3.37, 2.93})});
  INFO(ad::describe(r));
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("horizontal flip of images and coordinates") {
  Rng rng(37);
  const Tensor img = rand_tensor(rng, {2, 4, 7});
  const Tensor f = grid::hflip_image(img);
  CHECK(grid::hflip_image(f) == img);
  CHECK(f[(1 * 4 + 2) * 7 + 1] == img[(1 * 4 + 2) * 7 + 5]);
  // Sampling the flipped image at flipped coordinates gives the original sample.
  for (int i = 0; i < 20; ++i) {
    const double x = rng.uniform(0, 6), y = rng.uniform(0, 3);
    const Tensor c = grid::hflip_coords(Tensor({1, 2}, {x, y}), 7, {});
    const Tensor a = grid::bilinear_sample(img, x, y);
    const Tensor b = grid::bilinear_sample(f, c[0], c[1]);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  }
  const int pairs[] = {1, 0, 2};
  const Tensor coords({3, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, 0.5, 0.5});
  const Tensor fc = grid::hflip_coords(coords, 10, pairs);
  CHECK(fc == Tensor({3, 3}, {5.0, 5.0, 6.0, 8.0, 2.0, 3.0, 8.5, 0.5, 0.5}));
  CHECK(grid::hflip_coords(fc, 10, pairs) == coords);
  auto r = ad::grad_check(
      [](ad::Tape&, std::span<const ad::Var> in) {
        const int p[] = {1, 0, 2};
        return ad::add(weighted(grid::hflip_image(in[0])), weighted(grid::hflip_coords(in[1], 10, p)));
      },
      {img, coords});
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("downsample2 averages 2x2 blocks") {
  Tensor img({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(grid::downsample2(img) == Tensor({1, 1, 2}, {3.5, 5.5}));
}

TEST_CASE("soft-argmax reference values") {
  ad::Tape t;
  const Tensor u = grid::soft_argmax_3d(t.constant(Tensor({2, 8, 8, 6}, 0.0))).value();
  for (int j = 0; j < 2; ++j) {
    CHECK(u[static_cast<std::size_t>(3 * j)] == doctest::Approx(2.5));
    CHECK(u[static_cast<std::size_t>(3 * j + 1)] == doctest::Approx(3.5));
    CHECK(u[static_cast<std::size_t>(3 * j + 2)] == doctest::Approx(3.5));
  }
  Tensor spike({1, 8, 8, 6}, 0.0);
  spike[(5 * 8 + 2) * 6 + 4] = 1e3;
  const Tensor s = grid::soft_argmax_3d(t.constant(spike)).value();
  CHECK(std::abs(s[0] - 4.0) < 1e-6);
  CHECK(std::abs(s[1] - 2.0) < 1e-6);
  CHECK(std::abs(s[2] - 5.0) < 1e-6);
}

TEST_CASE("soft-argmax invariances") {
  Rng rng(38);
  const Tensor vol = rand_tensor(rng, {3, 4, 5, 6});
  ad::Tape t;
  const Tensor base = grid::soft_argmax_3d(t.constant(vol)).value();
  // Per-joint constant offsets.
  Tensor shifted = vol;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 120; ++i) shifted[static_cast<std::size_t>(j * 120 + i)] += 7.0 * (j + 1);
  const Tensor b2 = grid::soft_argmax_3d(t.constant(shifted)).value();
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(b2[i] == doctest::Approx(base[i]).epsilon(1e-12));
  // Convex hull.
  for (int j = 0; j < 3; ++j) {
    CHECK(base[static_cast<std::size_t>(3 * j)] >= 0.0);
    CHECK(base[static_cast<std::size_t>(3 * j)] <= 5.0);
    CHECK(base[static_cast<std::size_t>(3 * j + 1)] <= 4.0);
    CHECK(base[static_cast<std::size_t>(3 * j + 2)] <= 3.0);
  }
  // Shift by one cell along x when the support stays interior.
  Tensor inner({1, 3, 5, 8}, -1e4), moved({1, 3, 5, 8}, -1e4);
  for (int d = 0; d < 3; ++d)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 6; ++x) {
        const double l = rng.uniform(-1, 1);
        inner[static_cast<std::size_t>((d * 5 + y) * 8 + x)] = l;
        moved[static_cast<std::size_t>((d * 5 + y) * 8 + x + 1)] = l;
      }
  const Tensor p0 = grid::soft_argmax_3d(t.constant(inner)).value();
  const Tensor p1 = grid::soft_argmax_3d(t.constant(moved)).value();
  CHECK(std::abs(p1[0] - p0[0] - 1.0) < 1e-6);
  CHECK(std::abs(p1[1] - p0[1]) < 1e-9);
  CHECK(std::abs(p1[2] - p0[2]) < 1e-9);
}

TEST_CASE("flipping heatmaps flips soft-argmax coordinates with the joint pairing") {
  Rng rng(39);
  const Tensor vol = rand_tensor(rng, {3, 2, 4, 5}, -3, 3);
  // Volume flip: columns reversed and joints 0 and 1 exchanged.
  Tensor flipped(vol.shape);
  const int pairs[] = {1, 0, 2};
  for (int j = 0; j < 3; ++j)
    for (int d = 0; d < 2; ++d)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x)
          flipped[static_cast<std::size_t>(((j * 2 + d) * 4 + y) * 5 + x)] =
              vol[static_cast<std::size_t>(((pairs[j] * 2 + d) * 4 + y) * 5 + 4 - x)];
  ad::Tape t;
  const Tensor a = grid::hflip_coords(grid::soft_argmax_3d(t.constant(vol)).value(), 5, pairs);
  const Tensor b = grid::soft_argmax_3d(t.constant(flipped)).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
}

TEST_CASE("bilinear reference values and explicit four-weight oracle") {
  const Tensor m({1, 2, 2}, {1, 2, 3, 4});
  CHECK(grid::bilinear_sample(m, 0.0, 0.0)[0] == 1.0);
  CHECK(grid::bilinear_sample(m, 0.5, 0.5)[0] == doctest::Approx(2.5));
  Rng rng(40);
  const Tensor img = rand_tensor(rng, {2, 5, 7});
  for (int i = 0; i < 30; ++i) {
    const double x = rng.uniform(0, 6), y = rng.uniform(0, 4);
    const int x0 = std::min(static_cast<int>(x), 5), y0 = std::min(static_cast<int>(y), 3);
    const double ax = x - x0, ay = y - y0;
    const Tensor s = grid::bilinear_sample(img, x, y);
    for (int c = 0; c < 2; ++c) {
      auto at = [&](int yy, int xx) { return img[static_cast<std::size_t>((c * 5 + yy) * 7 + xx)]; };
      const double want = (1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x0 + 1) + (1 - ax) * ay * at(y0 + 1, x0) +
                          ax * ay * at(y0 + 1, x0 + 1);
      CHECK(std::abs(s[static_cast<std::size_t>(c)] - want) < 1e-12);
    }
  }
}

TEST_CASE("roi_align of a constant image is constant and matches per-pixel sampling") {
  const Tensor flat({2, 6, 6}, 0.75);
  const Tensor out = grid::roi_align(flat, Box{2.2, 3.1, 3.3, 1.7}, 4, 5);
  for (double v : out.data) CHECK(v == doctest::Approx(0.75));
  Rng rng(41);
  const Tensor img = rand_tensor(rng, {2, 7, 9});
  const Box b{4.3, 2.9, 5.1, 3.7};
  const Tensor r = grid::roi_align(img, b, 3, 4);
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 4; ++col) {
      const Tensor s = grid::bilinear_sample(img, grid::roi_source_x(b, col, 4), grid::roi_source_y(b, row, 3));
      for (int c = 0; c < 2; ++c) CHECK(r[static_cast<std::size_t>((c * 3 + row) * 4 + col)] == s[static_cast<std::size_t>(c)]);
      CHECK(grid::roi_target_x(b, grid::roi_source_x(b, col, 4), 4) == doctest::Approx(col));
    }
}
