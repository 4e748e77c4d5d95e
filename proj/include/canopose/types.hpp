#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>

namespace canopose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Axis-angle rotation: direction = axis, magnitude = angle in radians.
using AxisAngle = Eigen::Vector3d;

// First two columns of a rotation matrix, stacked (col0, col1). Unconstrained
// during optimization; maps back to SO(3) via Gram-Schmidt.
using Rot6d = Eigen::Matrix<double, 6, 1>;

// Point sets, one point per row.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File, schema, or model-invariant violations surfaced while loading data.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometric input: non-rotation matrices, collinear point sets,
// points behind the camera.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Optimization failures: under-constrained problems, divergence.
class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace canopose
