#pragma once

#include <Eigen/Core>

#include "h4w/autodiff.hpp"

namespace h4w {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Continuous rotation parameterization: two unnormalized 3-vectors.
struct Rot6D {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();
};

// Rotation vector: unit axis scaled by angle in radians.
struct AxisAngle {
  Vec3 v = Vec3::Zero();
};

// Columns are the Gram-Schmidt basis of (a1, a2) completed by b1 x b2.
// Throws DegenerateInput when |a1| < 1e-12 or |a1 x a2| < 1e-12.
Mat3 rot6d_to_matrix(const Rot6D& r);

// Rodrigues; second-order Taylor below 1e-8 rad.
Mat3 axis_angle_to_matrix(const AxisAngle& v);

// Log map with |result| in [0, pi]. At exactly pi the axis sign is fixed by
// making its largest-magnitude component positive. Throws NotARotation when
// orthonormality is off by more than 1e-6 or det < 0.
AxisAngle matrix_to_axis_angle(const Mat3& m);

// Sagittal mirror of a rotation: conjugation by diag(-1, 1, 1).
AxisAngle mirror_rotation(const AxisAngle& v);

// Sagittal mirror matrix diag(-1, 1, 1).
Mat3 mirror_matrix();

}  // namespace h4w

namespace h4w::rot {

// Differentiable batched forms. Matrices are [N,3,3] row-major.
ad::Var rot6d_to_matrix(ad::Var r6d);            // [N,6] -> [N,3,3]
ad::Var axis_angle_to_matrix(ad::Var aa);        // [N,3] -> [N,3,3]
ad::Var matrix_to_axis_angle(ad::Var mats);      // [N,3,3] -> [N,3]
ad::Var mirror_rotation(ad::Var aa);             // [N,3] -> [N,3]

// Convenience: [N,6] -> [N,3] axis-angle.
ad::Var rot6d_to_axis_angle(ad::Var r6d);

// Coefficients of R = I + a K + b K^2 (K = skew(v)) and their derivatives
// divided by theta, shared by the body model's backward pass.
struct RodriguesCoeffs {
  double a, b, da_over_theta, db_over_theta;
};
RodriguesCoeffs rodrigues_coeffs(double theta);

// dL/dv for R(v) given dL/dR (row-major 3x3).
void rodrigues_backward(const double v[3], const double g[9], double out[3]);
void rodrigues_forward(const double v[3], double r[9]);

}  // namespace h4w::rot
