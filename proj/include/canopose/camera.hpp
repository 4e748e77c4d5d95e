#pragma once

#include <vector>

#include "canopose/rotations.hpp"
#include "canopose/types.hpp"

namespace canopose {

// Pinhole intrinsics, square pixels, zero skew.
struct CameraIntrinsics {
  double focal = 1000.0;     // pixels
  Vec2 principal{500.0, 500.0};  // pixels

  void validate() const {
    if (!(focal > 0.0) || !std::isfinite(focal) || !principal.allFinite()) {
      throw SchemaError("CameraIntrinsics: focal length must be finite and > 0");
    }
  }
};

struct ProjectionResult {
  Points2 pixels;                       // one row per input point
  std::vector<Eigen::Index> behind;     // indices with camera-frame depth <= 0
  bool ok() const { return behind.empty(); }
};

/// Perspective projection of camera-targeted points: pixel = (f*x/z + cx, f*y/z + cy)
/// with (x,y,z) = R*p + t. Points with non-positive depth are flagged by index;
/// their pixel rows are not meaningful.
inline ProjectionResult project(const Points3& points, const CameraIntrinsics& k,
                                const Mat3& r, const Vec3& t) {
  ProjectionResult out;
  out.pixels.resize(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 p = r * points.row(i).transpose() + t;
    if (!(p.z() > 0.0)) {
      out.behind.push_back(i);
      out.pixels.row(i).setZero();
      continue;
    }
    out.pixels(i, 0) = k.focal * p.x() / p.z() + k.principal.x();
    out.pixels(i, 1) = k.focal * p.y() / p.z() + k.principal.y();
  }
  return out;
}

/// project() that throws GeometryError naming the first offending index.
inline Points2 project_checked(const Points3& points, const CameraIntrinsics& k,
                               const Mat3& r, const Vec3& t) {
  ProjectionResult res = project(points, k, r, t);
  if (!res.ok()) {
    throw GeometryError("project: non-positive depth at point index " +
                        std::to_string(res.behind.front()));
  }
  return std::move(res.pixels);
}

}  // namespace canopose
