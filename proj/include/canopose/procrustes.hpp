#pragma once

#include <Eigen/Dense>

#include "canopose/types.hpp"

namespace canopose {

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Points3 apply(const Points3& p) const {
    Points3 out(p.rows(), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      out.row(i) = (scale * rotation * p.row(i).transpose() + translation).transpose();
    }
    return out;
  }
};

struct ProcrustesResult {
  SimilarityTransform transform;
  Points3 aligned;         // transform applied to the source points
  double residual = 0.0;   // sum over points of |s R p + t - q|^2
};

/// Least-squares similarity alignment of src onto dst (Umeyama): minimizes
/// sum_j |s R src_j + t - dst_j|^2 with det(R) = +1 (reflections excluded via
/// sign correction on the smallest singular value). with_scale=false fixes
/// s = 1 (rigid alignment). Requires >= 3 non-collinear points per set.
inline ProcrustesResult procrustes_align(const Points3& src, const Points3& dst,
                                         bool with_scale = true) {
  const Eigen::Index n = src.rows();
  if (n != dst.rows()) {
    throw GeometryError("procrustes_align: point counts differ");
  }
  if (n < 3) {
    throw GeometryError("procrustes_align: need at least 3 points");
  }
  const Vec3 mu_src = src.colwise().mean().transpose();
  const Vec3 mu_dst = dst.colwise().mean().transpose();

  Mat3 cov = Mat3::Zero();  // (1/n) sum (dst - mu_dst)(src - mu_src)^T
  double var_src = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 x = src.row(i).transpose() - mu_src;
    const Vec3 y = dst.row(i).transpose() - mu_dst;
    cov += y * x.transpose();
    var_src += x.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_src /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(var_src > 0.0) || sv(1) <= 1e-12 * std::max(1.0, sv(0))) {
    // rank < 2: all points coincide or are collinear, rotation is not unique
    throw GeometryError("procrustes_align: degenerate (collinear or coincident) points");
  }
  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    d(2) = -1.0;
  }
  ProcrustesResult out;
  out.transform.rotation =
      svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  out.transform.scale = with_scale ? (sv.dot(d) / var_src) : 1.0;
  out.transform.translation =
      mu_dst - out.transform.scale * out.transform.rotation * mu_src;
  out.aligned = out.transform.apply(src);
  out.residual = (out.aligned - dst).rowwise().squaredNorm().sum();
  return out;
}

}  // namespace canopose
