#pragma once

#include <cmath>

#include "canopose/body_model.hpp"

namespace canopose {

// Rest skeleton of the bundled desk-scale humanoid: 24 joints, y-up, meters,
// T-pose with arms along +-x, pelvis at the origin. The same table ships as
// data/toy_body.json; make_toy_model() reproduces it exactly.
inline Points3 toy_rest_joints() {
  Points3 j(kJoints, 3);
  j << 0.000, 0.000, 0.000,    //  0 pelvis
      0.090, -0.080, 0.000,    //  1 left hip
      -0.090, -0.080, 0.000,   //  2 right hip
      0.000, 0.110, -0.010,    //  3 spine1
      0.100, -0.480, 0.000,    //  4 left knee
      -0.100, -0.480, 0.000,   //  5 right knee
      0.000, 0.230, 0.010,     //  6 spine2
      0.105, -0.860, -0.020,   //  7 left ankle
      -0.105, -0.860, -0.020,  //  8 right ankle
      0.000, 0.310, 0.020,     //  9 spine3
      0.110, -0.930, 0.100,    // 10 left foot
      -0.110, -0.930, 0.100,   // 11 right foot
      0.000, 0.470, 0.010,     // 12 neck
      0.070, 0.400, 0.010,     // 13 left collar
      -0.070, 0.400, 0.010,    // 14 right collar
      0.000, 0.580, 0.020,     // 15 head
      0.170, 0.430, 0.000,     // 16 left shoulder
      -0.170, 0.430, 0.000,    // 17 right shoulder
      0.430, 0.420, 0.000,     // 18 left elbow
      -0.430, 0.420, 0.000,    // 19 right elbow
      0.680, 0.410, 0.000,     // 20 left wrist
      -0.680, 0.410, 0.000,    // 21 right wrist
      0.770, 0.400, 0.000,     // 22 left hand
      -0.770, 0.400, 0.000;    // 23 right hand
  return j;
}

inline std::vector<int> toy_parents() {
  return {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
}

/// Deterministic closed-form toy body: 5 vertices clustered around each of
/// the 24 joints (n_vertices = 120), joint and keypoint regressors averaging
/// each cluster, skin weights blending each cluster 0.8/0.2 with its parent
/// joint. Keypoints are the 24 model joints.
inline BodyModel make_toy_model() {
  constexpr int kPerJoint = 5;
  constexpr double a = 0.05;  // cluster half-extent, meters

  BodyModel m;
  m.n_vertices = kPerJoint * kJoints;
  m.n_joints = kJoints;
  m.n_keypoints = kJoints;
  m.parents = toy_parents();

  const Points3 joints = toy_rest_joints();
  // Zero-mean offsets so each cluster averages to its joint.
  const double offsets[kPerJoint][3] = {
      {a, 0, 0}, {-a, 0, 0}, {0, a, 0}, {0, 0, a}, {0, -a, -a}};

  m.template_vertices.resize(m.n_vertices, 3);
  m.skin_weights = MatX::Zero(m.n_vertices, kJoints);
  m.joint_regressor = MatX::Zero(kJoints, m.n_vertices);
  for (int j = 0; j < kJoints; ++j) {
    for (int s = 0; s < kPerJoint; ++s) {
      const int v = kPerJoint * j + s;
      m.template_vertices.row(v) =
          joints.row(j) + Eigen::RowVector3d(offsets[s][0], offsets[s][1], offsets[s][2]);
      m.joint_regressor(j, v) = 1.0 / kPerJoint;
      if (j == 0) {
        m.skin_weights(v, 0) = 1.0;
      } else {
        m.skin_weights(v, j) = 0.8;
        m.skin_weights(v, m.parents[j]) = 0.2;
      }
    }
  }
  m.keypoint_regressor = m.joint_regressor;

  m.shape_dirs = MatX::Zero(3 * m.n_vertices, kShapeCoeffs);
  for (int v = 0; v < m.n_vertices; ++v) {
    const Vec3 t = m.template_vertices.row(v).transpose();
    auto dir = [&](int s) { return m.shape_dirs.block<3, 1>(3 * v, s); };
    dir(0) = 0.10 * t;                         // overall scale about the pelvis
    dir(1) = Vec3(0.0, 0.12 * t.y(), 0.0);     // height
    dir(2) = Vec3(0.08 * t.x(), 0.0, 0.0);     // span
    dir(3) = Vec3(0.0, 0.0, 0.06 * t.z());     // depth
    if (t.y() < -0.05) {                       // leg length
      dir(4) = Vec3(0.0, 0.10 * (t.y() + 0.05), 0.0);
    }
    if (std::abs(t.x()) > 0.2) {               // arm length
      dir(5) = Vec3(0.10 * (t.x() - 0.2 * (t.x() > 0 ? 1.0 : -1.0)), 0.0, 0.0);
    }
    for (int s = 6; s < kShapeCoeffs; ++s) {   // small structured wiggles
      dir(s) = 0.02 * Vec3(std::sin(0.7 * v + s), std::cos(1.3 * v + 2.0 * s),
                           std::sin(2.1 * v + 3.0 * s));
    }
  }

  m.validate();
  return m;
}

}  // namespace canopose
