#pragma once

#include <vector>

#include "canopose/types.hpp"

namespace canopose {

inline constexpr int kJoints = 24;
inline constexpr int kBodyJoints = kJoints - 1;
inline constexpr int kShapeCoeffs = 10;

using ShapeCoeffs = Eigen::Matrix<double, kShapeCoeffs, 1>;
// One axis-angle per non-root joint, row j = joint j+1.
using BodyPose = Eigen::Matrix<double, kBodyJoints, 3, Eigen::RowMajor>;

// Shape and pose of one body instance: beta plus theta = {theta_g, theta_b}.
struct BodyParams {
  ShapeCoeffs betas = ShapeCoeffs::Zero();
  AxisAngle global_orient = AxisAngle::Zero();  // theta_g
  BodyPose body_pose = BodyPose::Zero();        // theta_b

  bool all_finite() const {
    return betas.allFinite() && global_orient.allFinite() && body_pose.allFinite();
  }
};

// The shared multi-view parameterization: per-view global orientation and
// camera translation, single view-independent body pose and shape.
struct CanonicalParams {
  std::vector<AxisAngle> view_global_orient;  // theta_g^i, one per view
  std::vector<Vec3> view_translation;         // t^i, meters
  BodyPose body_pose = BodyPose::Zero();      // shared theta_b
  ShapeCoeffs betas = ShapeCoeffs::Zero();    // shared beta

  int num_views() const { return static_cast<int>(view_global_orient.size()); }

  BodyParams view_params(int view) const {
    BodyParams p;
    p.betas = betas;
    p.global_orient = view_global_orient.at(view);
    p.body_pose = body_pose;
    return p;
  }

  void validate() const {
    if (view_global_orient.size() != view_translation.size()) {
      throw SchemaError("CanonicalParams: one {theta_g, t} pair required per view");
    }
  }
};

}  // namespace canopose
