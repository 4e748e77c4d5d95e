#pragma once

#include <array>
#include <cmath>

#include "canopose/types.hpp"

namespace canopose {

inline constexpr double kPi = 3.14159265358979323846;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// True if m has orthonormal columns and det +1, both within tol.
inline bool is_rotation(const Mat3& m, double tol = 1e-9) {
  if (!m.allFinite()) return false;
  const Mat3 err = m.transpose() * m - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

/// Rodrigues formula. Total: any finite axis-angle maps to a rotation.
inline Mat3 axis_angle_to_matrix(const AxisAngle& aa) {
  const double theta = aa.norm();
  const Mat3 k = skew(aa);
  if (theta < 1e-8) {
    // Second-order expansion; error O(theta^3).
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * k + c * k * k;
}

/// Inverse of axis_angle_to_matrix. Canonical range: angle in [0, pi].
/// Angles near pi use the symmetric-part branch, where (R + R^T)/2 pins the
/// axis as the unit eigenvector of uu^T. Throws GeometryError for input that
/// is not a rotation.
inline AxisAngle matrix_to_axis_angle(const Mat3& m, double tol = 1e-9) {
  if (!is_rotation(m, tol)) {
    throw GeometryError("matrix_to_axis_angle: input is not a rotation matrix");
  }
  const double c = std::clamp((m.trace() - 1.0) * 0.5, -1.0, 1.0);
  // w = sin(theta) * axis
  const Vec3 w(0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)),
               0.5 * (m(1, 0) - m(0, 1)));
  const double s = w.norm();
  const double theta = std::atan2(s, c);
  if (theta < 1e-8) {
    // w ~ theta * axis up to O(theta^3)
    return w;
  }
  if (theta < kPi - 1e-4) {
    return (theta / s) * w;
  }
  // Near pi: sin(theta) -> 0 makes w unusable. The symmetric part
  // (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) uu^T recovers uu^T exactly,
  // with 1 - cos(theta) ~ 2 keeping the division well conditioned.
  const Mat3 sym = 0.5 * (m + m.transpose());
  const Mat3 outer = (sym - c * Mat3::Identity()) / (1.0 - c);
  int k = 0;
  outer.diagonal().maxCoeff(&k);
  Vec3 axis = outer.col(k) / std::sqrt(outer(k, k));
  if (axis.dot(w) < 0.0) axis = -axis;  // sign from sin(theta)*axis when usable
  return theta * axis;
}

/// Gram-Schmidt map from the 6D representation to SO(3).
/// Throws GeometryError on near-zero or near-parallel column input.
inline Mat3 rot6d_to_matrix(const Rot6d& r) {
  const Vec3 a = r.head<3>();
  const Vec3 b = r.tail<3>();
  const double na = a.norm();
  if (na <= 1e-12) {
    throw GeometryError("rot6d_to_matrix: first column has near-zero norm");
  }
  const Vec3 c0 = a / na;
  const Vec3 w = b - c0.dot(b) * c0;
  const double nw = w.norm();
  // Relative parallelism threshold: the Gram-Schmidt subtraction loses about
  // eps * |b| / |w| relative accuracy, so accepting anything below 1e-6 * |b|
  // could hand back a matrix that fails the 1e-9 rotation invariants.
  if (nw <= std::max(1e-12, 1e-6 * b.norm())) {
    throw GeometryError("rot6d_to_matrix: columns are degenerate (parallel)");
  }
  const Vec3 c1 = w / nw;
  Mat3 out;
  out.col(0) = c0;
  out.col(1) = c1;
  out.col(2) = c0.cross(c1);
  return out;
}

/// Drops the third column. Rejects non-rotation input.
inline Rot6d matrix_to_rot6d(const Mat3& m, double tol = 1e-9) {
  if (!is_rotation(m, tol)) {
    throw GeometryError("matrix_to_rot6d: input is not a rotation matrix");
  }
  Rot6d r;
  r.head<3>() = m.col(0);
  r.tail<3>() = m.col(1);
  return r;
}

inline Rot6d identity_rot6d() {
  Rot6d r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

inline Rot6d axis_angle_to_rot6d(const AxisAngle& aa) {
  return matrix_to_rot6d(axis_angle_to_matrix(aa));
}

/// Partial derivatives of rot6d_to_matrix: out[i] = dR / dr[i].
inline std::array<Mat3, 6> rot6d_to_matrix_jacobian(const Rot6d& r) {
  const Vec3 a = r.head<3>();
  const Vec3 b = r.tail<3>();
  const double na = a.norm();
  if (na <= 1e-12) {
    throw GeometryError("rot6d_to_matrix_jacobian: degenerate input");
  }
  const Vec3 c0 = a / na;
  const double p = c0.dot(b);
  const Vec3 w = b - p * c0;
  const double nw = w.norm();
  if (nw <= std::max(1e-12, 1e-6 * b.norm())) {
    throw GeometryError("rot6d_to_matrix_jacobian: degenerate input");
  }
  const Vec3 c1 = w / nw;

  const Mat3 dc0_da = (Mat3::Identity() - c0 * c0.transpose()) / na;
  // w = b - (c0.b) c0  =>  dw/da = -(c0 b^T + p I) dc0/da, dw/db = I - c0 c0^T
  const Mat3 dw_da = -(c0 * b.transpose() + p * Mat3::Identity()) * dc0_da;
  const Mat3 dw_db = Mat3::Identity() - c0 * c0.transpose();
  const Mat3 dc1_dw = (Mat3::Identity() - c1 * c1.transpose()) / nw;
  const Mat3 dc1_da = dc1_dw * dw_da;
  const Mat3 dc1_db = dc1_dw * dw_db;
  // c2 = c0 x c1
  const Mat3 dc2_da = -skew(c1) * dc0_da + skew(c0) * dc1_da;
  const Mat3 dc2_db = skew(c0) * dc1_db;

  std::array<Mat3, 6> out;
  for (int i = 0; i < 3; ++i) {
    out[i].col(0) = dc0_da.col(i);
    out[i].col(1) = dc1_da.col(i);
    out[i].col(2) = dc2_da.col(i);
    out[3 + i].col(0) = Vec3::Zero();
    out[3 + i].col(1) = dc1_db.col(i);
    out[3 + i].col(2) = dc2_db.col(i);
  }
  return out;
}

}  // namespace canopose
