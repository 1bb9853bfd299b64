#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "h4w/error.hpp"
#include "h4w/gradcheck.hpp"
#include "h4w/random.hpp"
#include "h4w/rotations.hpp"

using namespace h4w;

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 random_vec(Rng& rng, double lo, double hi) { return Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)); }

Vec3 random_axis_angle(Rng& rng, double max_angle) {
  Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  return rng.uniform(0.0, max_angle) * axis;
}

// Independent references: Eigen's AngleAxis and a textbook Gram-Schmidt.
Mat3 oracle_exp(const Vec3& v) {
  const double t = v.norm();
  if (t == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(t, v / t).toRotationMatrix();
}

Mat3 oracle_gram_schmidt(const Vec3& a1, const Vec3& a2) {
  const Vec3 b1 = a1 / a1.norm();
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const Vec3 b2 = u / u.norm();
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::ConfigError;
}

}  // namespace

TEST_CASE("6D conversion matches Gram-Schmidt and yields proper rotations") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a1 = random_vec(rng, -2, 2), a2 = random_vec(rng, -2, 2);
    if (a1.cross(a2).norm() < 1e-3) continue;
    const Mat3 m = rot6d_to_matrix(Rot6D{a1, a2});
    CHECK((m - oracle_gram_schmidt(a1, a2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    // Positive rescaling of either vector leaves the rotation unchanged.
    const Mat3 m2 = rot6d_to_matrix(Rot6D{3.5 * a1, 0.2 * a2});
    CHECK((m - m2).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(rot6d_to_matrix(Rot6D{}).isApprox(Mat3::Identity()));
}

TEST_CASE("6D conversion rejects degenerate inputs") {
  CHECK(kind_of([] { rot6d_to_matrix(Rot6D{Vec3::Zero(), Vec3::UnitY()}); }) == ErrorKind::DegenerateInput);
  CHECK(kind_of([] { rot6d_to_matrix(Rot6D{Vec3(1, 2, 3), Vec3(2, 4, 6)}); }) == ErrorKind::DegenerateInput);
}

TEST_CASE("Rodrigues matches the angle-axis oracle across scales") {
  Rng rng(22);
  for (double max_angle : {1e-10, 1e-7, 1e-3, 0.5, 3.0, kPi}) {
    for (int i = 0; i < 50; ++i) {
      const Vec3 v = random_axis_angle(rng, max_angle);
      const Mat3 m = axis_angle_to_matrix(AxisAngle{v});
      CHECK((m - oracle_exp(v)).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
  CHECK(axis_angle_to_matrix(AxisAngle{}) == Mat3::Identity());
}

TEST_CASE("log map inverts the exponential map") {
  Rng rng(23);
  for (double max_angle : {1e-9, 1e-4, 1.0, 3.0, kPi - 1e-3}) {
    for (int i = 0; i < 50; ++i) {
      const Vec3 v = random_axis_angle(rng, max_angle);
      const Vec3 back = matrix_to_axis_angle(oracle_exp(v)).v;
      CHECK((back - v).norm() < 1e-9);
    }
  }
}

TEST_CASE("log map near and at pi") {
  Rng rng(24);
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Vec3 v = (kPi - 1e-7) * axis;
    const Vec3 back = matrix_to_axis_angle(oracle_exp(v)).v;
    CHECK((back - v).norm() < 1e-6);
  }
  const Vec3 at_pi = matrix_to_axis_angle(Vec3(1, -1, -1).asDiagonal().toDenseMatrix()).v;
  CHECK(at_pi.norm() == doctest::Approx(kPi));
  CHECK(at_pi.x() == doctest::Approx(kPi));
  // Axis sign tie-break: largest-magnitude component positive.
  const Vec3 neg = -kPi * Vec3(0.6, -0.8, 0.0);
  const Vec3 r = matrix_to_axis_angle(oracle_exp(neg)).v;
  CHECK(r.norm() == doctest::Approx(kPi));
  CHECK((oracle_exp(r) - oracle_exp(neg)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.y() > 0.0);
}

TEST_CASE("log map rejects non-rotations") {
  CHECK(kind_of([] { matrix_to_axis_angle(Vec3(-1, 1, 1).asDiagonal().toDenseMatrix()); }) == ErrorKind::NotARotation);
  CHECK(kind_of([] { matrix_to_axis_angle(1.01 * Mat3::Identity()); }) == ErrorKind::NotARotation);
  Mat3 nan = Mat3::Identity();
  nan(0, 1) = std::nan("");
  CHECK(kind_of([&] { matrix_to_axis_angle(nan); }) == ErrorKind::NotARotation);
}

TEST_CASE("mirroring is conjugation by the mirror matrix and an involution") {
  Rng rng(25);
  const Mat3 s = mirror_matrix();
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = random_axis_angle(rng, 3.0);
    const Mat3 lhs = axis_angle_to_matrix(mirror_rotation(AxisAngle{v}));
    CHECK((lhs - s * oracle_exp(v) * s).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(mirror_rotation(mirror_rotation(AxisAngle{v})).v == v);
  }
}

TEST_CASE("differentiable rotation ops pass gradient checks") {
  Rng rng(26);
  Tensor r6({4, 6});
  for (double& x : r6.data) x = rng.uniform(-1, 1);
  auto weighted = [](ad::Var v) {
    Tensor w(v.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.7 * static_cast<double>(i) + 0.3);
    return ad::sum(ad::mul_const(v, w));
  };
  auto r1 = ad::grad_check([&](ad::Tape&, std::span<const ad::Var> in) { return weighted(rot::rot6d_to_matrix(in[0])); }, {r6});
  INFO(ad::describe(r1));
  CHECK(r1.max_rel_error < 1e-6);

  // Small, series-region, generic and near-pi angles.
  Tensor aa({5, 3});
  const double mags[] = {1e-9, 4e-3, 0.8, 2.5, 3.0};
  for (int k = 0; k < 5; ++k) {
    const Vec3 v = mags[k] * Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    for (int c = 0; c < 3; ++c) aa[static_cast<std::size_t>(3 * k + c)] = v[c];
  }
  auto r2 = ad::grad_check([&](ad::Tape&, std::span<const ad::Var> in) { return weighted(rot::axis_angle_to_matrix(in[0])); }, {aa});
  INFO(ad::describe(r2));
  CHECK(r2.max_rel_error < 1e-6);

  auto r3 = ad::grad_check(
      [&](ad::Tape&, std::span<const ad::Var> in) { return weighted(rot::matrix_to_axis_angle(rot::axis_angle_to_matrix(in[0]))); },
      {aa});
  INFO(ad::describe(r3));
  CHECK(r3.max_rel_error < 1e-5);

  auto r4 = ad::grad_check([&](ad::Tape&, std::span<const ad::Var> in) { return weighted(rot::rot6d_to_axis_angle(in[0])); }, {r6});
  INFO(ad::describe(r4));
  CHECK(r4.max_rel_error < 1e-5);
}

TEST_CASE("Rodrigues coefficients are continuous across the series switch") {
  for (double t : {1e-8, 0.1}) {
    const auto lo = rot::rodrigues_coeffs(t * (1 - 1e-9));
    const auto hi = rot::rodrigues_coeffs(t * (1 + 1e-9));
    CHECK(lo.a == doctest::Approx(hi.a).epsilon(1e-9));
    CHECK(lo.b == doctest::Approx(hi.b).epsilon(1e-9));
    CHECK(lo.da_over_theta == doctest::Approx(hi.da_over_theta).epsilon(1e-9));
    CHECK(lo.db_over_theta == doctest::Approx(hi.db_over_theta).epsilon(1e-9));
  }
}
