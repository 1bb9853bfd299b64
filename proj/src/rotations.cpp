#include "h4w/rotations.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "h4w/error.hpp"

namespace h4w::rot {
namespace {

constexpr double kDegenerate = 1e-12;
constexpr double kTaylorAngle = 1e-8;
// Below these the derivative coefficients use series; the closed forms lose
// digits to cancellation.
constexpr double kTaylorDerivative = 0.1;
constexpr double kLogSeries = 1e-2;

inline double dot3(const double* a, const double* b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline void cross3(const double* a, const double* b, double* out) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}
inline void skew(const double v[3], double k[9]) {
  k[0] = 0.0, k[1] = -v[2], k[2] = v[1];
  k[3] = v[2], k[4] = 0.0, k[5] = -v[0];
  k[6] = -v[1], k[7] = v[0], k[8] = 0.0;
}
inline void mat3_mul(const double* a, const double* b, double* out) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
}
inline double frob(const double* a, const double* b) {
  double s = 0.0;
  for (int i = 0; i < 9; ++i) s += a[i] * b[i];
  return s;
}

struct GramSchmidt {
  double b1[3], b2[3], b3[3], u[3];
  double n1, n2, d;
};

GramSchmidt gram_schmidt(const double* a1, const double* a2) {
  GramSchmidt gs{};
  double c[3];
  cross3(a1, a2, c);
  gs.n1 = std::sqrt(dot3(a1, a1));
  if (!(gs.n1 >= kDegenerate) || !(std::sqrt(dot3(c, c)) >= kDegenerate))
    throw Error(ErrorKind::DegenerateInput, "6D rotation has a zero or collinear basis vector");
  for (int i = 0; i < 3; ++i) gs.b1[i] = a1[i] / gs.n1;
  gs.d = dot3(gs.b1, a2);
  for (int i = 0; i < 3; ++i) gs.u[i] = a2[i] - gs.d * gs.b1[i];
  gs.n2 = std::sqrt(dot3(gs.u, gs.u));
  for (int i = 0; i < 3; ++i) gs.b2[i] = gs.u[i] / gs.n2;
  cross3(gs.b1, gs.b2, gs.b3);
  return gs;
}

void check_rotation(const double* m) {
  Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> r(m);
  if (!r.allFinite()) throw Error(ErrorKind::NotARotation, "non-finite matrix");
  const double orth = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-6 || r.determinant() < 0.0)
    throw Error(ErrorKind::NotARotation, "matrix is not orthonormal with det +1 (deviation " + std::to_string(orth) + ")");
}

void log_map(const double* m, double out[3]) {
  const double w[3] = {0.5 * (m[7] - m[5]), 0.5 * (m[2] - m[6]), 0.5 * (m[3] - m[1])};
  const double s = std::sqrt(dot3(w, w));
  const double c = 0.5 * (m[0] + m[4] + m[8] - 1.0);
  const double theta = std::atan2(s, c);
  if (c > -0.99) {
    // theta / sin(theta) is well conditioned away from pi.
    const double f = theta < kTaylorAngle ? 1.0 + theta * theta / 6.0 : theta / s;
    for (int i = 0; i < 3; ++i) out[i] = f * w[i];
    return;
  }
  // Near pi: axis from the symmetric part, S - cI = (1 - c) a a^T.
  const double denom = 1.0 - c;
  double aa[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) aa[i * 3 + j] = (0.5 * (m[i * 3 + j] + m[j * 3 + i]) - (i == j ? c : 0.0)) / denom;
  int k = 0;
  if (aa[4] > aa[k * 4]) k = 1;
  if (aa[8] > aa[k * 4]) k = 2;
  const double nk = std::sqrt(std::max(aa[k * 4], 0.0));
  double axis[3] = {aa[k] / nk, aa[3 + k] / nk, aa[6 + k] / nk};
  const double n = std::sqrt(dot3(axis, axis));
  for (double& a : axis) a /= n;
  double sign = 1.0;
  const double proj = dot3(axis, w);
  if (std::abs(proj) > 1e-12) {
    sign = proj > 0.0 ? 1.0 : -1.0;
  } else {
    int big = 0;
    for (int i = 1; i < 3; ++i)
      if (std::abs(axis[i]) > std::abs(axis[big])) big = i;
    sign = axis[big] >= 0.0 ? 1.0 : -1.0;
  }
  for (int i = 0; i < 3; ++i) out[i] = sign * theta * axis[i];
}

}  // namespace

RodriguesCoeffs rodrigues_coeffs(double theta) {
  const double t2 = theta * theta;
  RodriguesCoeffs c{};
  if (theta < kTaylorAngle) {
    c.a = 1.0 - t2 / 6.0;
    c.b = 0.5 - t2 / 24.0;
  } else {
    c.a = std::sin(theta) / theta;
    const double h = std::sin(0.5 * theta);
    c.b = 2.0 * h * h / t2;
  }
  if (theta < kTaylorDerivative) {
    c.da_over_theta = -1.0 / 3.0 + t2 * (1.0 / 30.0 + t2 * (-1.0 / 840.0 + t2 / 45360.0));
    c.db_over_theta = -1.0 / 12.0 + t2 * (1.0 / 180.0 + t2 * (-1.0 / 6720.0 + t2 / 453600.0));
  } else {
    const double s = std::sin(theta), co = std::cos(theta);
    c.da_over_theta = (theta * co - s) / (t2 * theta);
    c.db_over_theta = (theta * s - 2.0 * (1.0 - co)) / (t2 * t2);
  }
  return c;
}

void rodrigues_forward(const double v[3], double r[9]) {
  const double theta = std::sqrt(dot3(v, v));
  const RodriguesCoeffs c = rodrigues_coeffs(theta);
  double k[9], k2[9];
  skew(v, k);
  mat3_mul(k, k, k2);
  for (int i = 0; i < 9; ++i) r[i] = (i % 4 == 0 ? 1.0 : 0.0) + c.a * k[i] + c.b * k2[i];
}

void rodrigues_backward(const double v[3], const double g[9], double out[3]) {
  const double theta = std::sqrt(dot3(v, v));
  const RodriguesCoeffs c = rodrigues_coeffs(theta);
  double k[9], k2[9];
  skew(v, k);
  mat3_mul(k, k, k2);
  const double gk = frob(g, k), gk2 = frob(g, k2);
  for (int i = 0; i < 3; ++i) {
    double e[3] = {0.0, 0.0, 0.0};
    e[i] = 1.0;
    double ei[9], eik[9], kei[9];
    skew(e, ei);
    mat3_mul(ei, k, eik);
    mat3_mul(k, ei, kei);
    out[i] = c.a * frob(g, ei) + c.b * (frob(g, eik) + frob(g, kei)) + c.da_over_theta * v[i] * gk +
             c.db_over_theta * v[i] * gk2;
  }
}

ad::Var rot6d_to_matrix(ad::Var r6d) {
  const Tensor& in = r6d.value();
  if (in.rank() != 2 || in.dim(1) != 6)
    throw Error(ErrorKind::ShapeMismatch, "rot6d_to_matrix expects [N,6], got " + shape_str(in.shape));
  const int n = in.dim(0);
  Tensor out({n, 3, 3});
  for (int k = 0; k < n; ++k) {
    const GramSchmidt gs = gram_schmidt(in.ptr() + 6 * k, in.ptr() + 6 * k + 3);
    double* m = out.ptr() + 9 * k;
    for (int i = 0; i < 3; ++i) {
      m[i * 3 + 0] = gs.b1[i];
      m[i * 3 + 1] = gs.b2[i];
      m[i * 3 + 2] = gs.b3[i];
    }
  }
  return r6d.tape->record(std::move(out), {r6d.id}, [ir = r6d.id, n](ad::Tape& t, int self) {
    auto g = t.incoming(self);
    const Tensor& in = t.value(ir);
    auto& gin = t.grad_buffer(ir);
    for (int k = 0; k < n; ++k) {
      const double* a2 = in.ptr() + 6 * k + 3;
      const GramSchmidt gs = gram_schmidt(in.ptr() + 6 * k, a2);
      const double* gm = g.data() + 9 * k;
      double gb1[3], gb2[3], gb3[3];
      for (int i = 0; i < 3; ++i) gb1[i] = gm[i * 3], gb2[i] = gm[i * 3 + 1], gb3[i] = gm[i * 3 + 2];
      double tmp[3];
      cross3(gs.b2, gb3, tmp);
      for (int i = 0; i < 3; ++i) gb1[i] += tmp[i];
      cross3(gb3, gs.b1, tmp);
      for (int i = 0; i < 3; ++i) gb2[i] += tmp[i];
      const double pb2 = dot3(gs.b2, gb2);
      double gu[3];
      for (int i = 0; i < 3; ++i) gu[i] = (gb2[i] - gs.b2[i] * pb2) / gs.n2;
      const double b1gu = dot3(gs.b1, gu);
      double* ga1 = gin.data() + 6 * k;
      double* ga2 = ga1 + 3;
      for (int i = 0; i < 3; ++i) {
        ga2[i] += gu[i] - gs.b1[i] * b1gu;
        gb1[i] += -gs.d * gu[i] - b1gu * a2[i];
      }
      const double pb1 = dot3(gs.b1, gb1);
      for (int i = 0; i < 3; ++i) ga1[i] += (gb1[i] - gs.b1[i] * pb1) / gs.n1;
    }
  });
}

ad::Var axis_angle_to_matrix(ad::Var aa) {
  const Tensor& in = aa.value();
  if (in.rank() != 2 || in.dim(1) != 3)
    throw Error(ErrorKind::ShapeMismatch, "axis_angle_to_matrix expects [N,3], got " + shape_str(in.shape));
  const int n = in.dim(0);
  Tensor out({n, 3, 3});
  for (int k = 0; k < n; ++k) rodrigues_forward(in.ptr() + 3 * k, out.ptr() + 9 * k);
  return aa.tape->record(std::move(out), {aa.id}, [ia = aa.id, n](ad::Tape& t, int self) {
    auto g = t.incoming(self);
    const Tensor& in = t.value(ia);
    auto& gin = t.grad_buffer(ia);
    for (int k = 0; k < n; ++k) {
      double d[3];
      rodrigues_backward(in.ptr() + 3 * k, g.data() + 9 * k, d);
      for (int i = 0; i < 3; ++i) gin[static_cast<std::size_t>(3 * k + i)] += d[i];
    }
  });
}

ad::Var matrix_to_axis_angle(ad::Var mats) {
  const Tensor& in = mats.value();
  if (in.rank() != 3 || in.dim(1) != 3 || in.dim(2) != 3)
    throw Error(ErrorKind::ShapeMismatch, "matrix_to_axis_angle expects [N,3,3], got " + shape_str(in.shape));
  const int n = in.dim(0);
  Tensor out({n, 3});
  for (int k = 0; k < n; ++k) {
    check_rotation(in.ptr() + 9 * k);
    log_map(in.ptr() + 9 * k, out.ptr() + 3 * k);
  }
  return mats.tape->record(std::move(out), {mats.id}, [im = mats.id, n](ad::Tape& t, int self) {
    auto g = t.incoming(self);
    const Tensor& in = t.value(im);
    auto& gin = t.grad_buffer(im);
    for (int k = 0; k < n; ++k) {
      const double* m = in.ptr() + 9 * k;
      const double* gv = g.data() + 3 * k;
      const double w[3] = {0.5 * (m[7] - m[5]), 0.5 * (m[2] - m[6]), 0.5 * (m[3] - m[1])};
      const double s = std::sqrt(dot3(w, w));
      const double c = 0.5 * (m[0] + m[4] + m[8] - 1.0);
      const double theta = std::atan2(s, c);
      // v = f(c) w with f = theta / sin(theta); undefined exactly at pi.
      if (s < 1e-12 && c < 0.0) continue;
      double f, dfdc;
      if (theta < kLogSeries) {
        const double t2 = theta * theta;
        f = 1.0 + t2 * (1.0 / 6.0 + t2 * (7.0 / 360.0 + t2 * 31.0 / 15120.0));
        dfdc = -1.0 / 3.0 - t2 * (2.0 / 15.0 + t2 * 2.0 / 63.0);
      } else {
        f = theta / s;
        dfdc = (theta * c - s) / (s * s * s);
      }
      const double gc = dfdc * dot3(gv, w);
      double gw[3] = {f * gv[0], f * gv[1], f * gv[2]};
      double* gm = gin.data() + 9 * k;
      gm[0] += 0.5 * gc, gm[4] += 0.5 * gc, gm[8] += 0.5 * gc;
      gm[7] += 0.5 * gw[0], gm[5] -= 0.5 * gw[0];
      gm[2] += 0.5 * gw[1], gm[6] -= 0.5 * gw[1];
      gm[3] += 0.5 * gw[2], gm[1] -= 0.5 * gw[2];
    }
  });
}

ad::Var mirror_rotation(ad::Var aa) {
  const Tensor& in = aa.value();
  if (in.rank() != 2 || in.dim(1) != 3)
    throw Error(ErrorKind::ShapeMismatch, "mirror_rotation expects [N,3], got " + shape_str(in.shape));
  Tensor signs(in.shape);
  for (int k = 0; k < in.dim(0); ++k) {
    signs[static_cast<std::size_t>(3 * k)] = 1.0;
    signs[static_cast<std::size_t>(3 * k + 1)] = -1.0;
    signs[static_cast<std::size_t>(3 * k + 2)] = -1.0;
  }
  return ad::mul_const(aa, signs);
}

ad::Var rot6d_to_axis_angle(ad::Var r6d) { return matrix_to_axis_angle(rot6d_to_matrix(r6d)); }

}  // namespace h4w::rot

namespace h4w {

Mat3 rot6d_to_matrix(const Rot6D& r) {
  const double a1[3] = {r.a1.x(), r.a1.y(), r.a1.z()};
  const double a2[3] = {r.a2.x(), r.a2.y(), r.a2.z()};
  ad::Tape tape;
  Tensor in({1, 6}, {a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]});
  const Tensor& m = rot::rot6d_to_matrix(tape.constant(std::move(in))).value();
  Mat3 out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = m[static_cast<std::size_t>(i * 3 + j)];
  return out;
}

Mat3 axis_angle_to_matrix(const AxisAngle& v) {
  const double in[3] = {v.v.x(), v.v.y(), v.v.z()};
  double r[9];
  rot::rodrigues_forward(in, r);
  Mat3 out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = r[i * 3 + j];
  return out;
}

AxisAngle matrix_to_axis_angle(const Mat3& m) {
  double rm[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rm[i * 3 + j] = m(i, j);
  rot::check_rotation(rm);
  double out[3];
  rot::log_map(rm, out);
  return AxisAngle{Vec3(out[0], out[1], out[2])};
}

AxisAngle mirror_rotation(const AxisAngle& v) { return AxisAngle{Vec3(v.v.x(), -v.v.y(), -v.v.z())}; }

Mat3 mirror_matrix() { return Vec3(-1.0, 1.0, 1.0).asDiagonal(); }

}  // namespace h4w
