#pragma once

#include <string>
#include <vector>

#include "canopose/params.hpp"
#include "canopose/rotations.hpp"
#include "canopose/types.hpp"

namespace canopose {

/// Parametric skinned body: template mesh deformed by linear shape
/// blendshapes and posed by linear blend skinning over a 24-joint tree.
/// Immutable after load/construction; all operations on it are pure.
struct BodyModel {
  int n_vertices = 0;
  int n_joints = kJoints;
  int n_keypoints = 0;

  Points3 template_vertices;   // n_vertices x 3, meters
  // Shape blendshapes, (3*n_vertices) x 10; rows grouped per vertex (x,y,z),
  // meters per unit shape coefficient.
  MatX shape_dirs;
  MatX skin_weights;           // n_vertices x 24, rows are convex combinations
  std::vector<int> parents;    // 24 entries, root (joint 0) = -1
  MatX joint_regressor;        // 24 x n_vertices, rows sum to 1
  MatX keypoint_regressor;     // n_keypoints x n_vertices, rows sum to 1
  // Optional pose-corrective blendshapes, (3*n_vertices) x 9*(n_joints-1).
  // Loaded when present; applied by skin() only if use_pose_correctives is
  // set. The fitting path ignores them.
  MatX pose_dirs;
  bool use_pose_correctives = false;

  // Joint evaluation order with every parent before its children.
  std::vector<int> traversal_order;

  void validate();
};

inline void BodyModel::validate() {
  if (n_joints != kJoints) {
    throw SchemaError("body model: expected " + std::to_string(kJoints) +
                      " joints, got " + std::to_string(n_joints));
  }
  if (n_vertices <= 0 || template_vertices.rows() != n_vertices) {
    throw SchemaError("body model: template shape does not match n_vertices");
  }
  if (!template_vertices.allFinite()) {
    throw SchemaError("body model: non-finite template vertices");
  }
  if (shape_dirs.rows() != 3 * n_vertices || shape_dirs.cols() != kShapeCoeffs) {
    throw SchemaError("body model: shape_dirs must be (3*n_vertices) x 10");
  }
  if (skin_weights.rows() != n_vertices || skin_weights.cols() != kJoints) {
    throw SchemaError("body model: skin_weights must be n_vertices x 24");
  }
  for (int v = 0; v < n_vertices; ++v) {
    if (skin_weights.row(v).minCoeff() < 0.0) {
      throw SchemaError("body model: negative skinning weight at vertex " +
                        std::to_string(v));
    }
    if (std::abs(skin_weights.row(v).sum() - 1.0) > 1e-9) {
      throw SchemaError("body model: skinning weights at vertex " +
                        std::to_string(v) + " sum to " +
                        std::to_string(skin_weights.row(v).sum()) + ", expected 1");
    }
  }
  if (static_cast<int>(parents.size()) != kJoints) {
    throw SchemaError("body model: parents must have 24 entries");
  }
  if (parents[0] != -1 && parents[0] != 0) {
    throw SchemaError("body model: joint 0 must be the root (parent -1 or self)");
  }
  // Every non-root joint must reach the root without revisiting a node.
  for (int j = 1; j < kJoints; ++j) {
    int hops = 0;
    int cur = j;
    while (cur != 0) {
      const int p = parents[cur];
      if (p < 0 || p >= kJoints || ++hops > kJoints) {
        throw SchemaError("body model: parent indices do not form a tree rooted "
                          "at joint 0 (cycle or bad index at joint " +
                          std::to_string(j) + ")");
      }
      cur = p;
    }
  }
  auto check_regressor = [&](const MatX& reg, int rows, const char* name) {
    if (reg.rows() != rows || reg.cols() != n_vertices) {
      throw SchemaError(std::string("body model: ") + name + " has wrong shape");
    }
    for (int r = 0; r < rows; ++r) {
      if (std::abs(reg.row(r).sum() - 1.0) > 1e-6) {
        throw SchemaError(std::string("body model: ") + name + " row " +
                          std::to_string(r) + " sums to " +
                          std::to_string(reg.row(r).sum()) + ", expected 1");
      }
    }
  };
  check_regressor(joint_regressor, kJoints, "joint_regressor");
  if (n_keypoints <= 0) {
    throw SchemaError("body model: n_keypoints must be positive");
  }
  check_regressor(keypoint_regressor, n_keypoints, "keypoint_regressor");
  if (pose_dirs.size() != 0 &&
      (pose_dirs.rows() != 3 * n_vertices || pose_dirs.cols() != 9 * kBodyJoints)) {
    throw SchemaError("body model: pose_dirs must be (3*n_vertices) x 207");
  }

  traversal_order.clear();
  traversal_order.reserve(kJoints);
  std::vector<bool> placed(kJoints, false);
  traversal_order.push_back(0);
  placed[0] = true;
  while (static_cast<int>(traversal_order.size()) < kJoints) {
    bool progress = false;
    for (int j = 1; j < kJoints; ++j) {
      if (!placed[j] && placed[parents[j]]) {
        traversal_order.push_back(j);
        placed[j] = true;
        progress = true;
      }
    }
    if (!progress) {
      throw SchemaError("body model: kinematic tree is not connected");
    }
  }
}

struct RestShape {
  Points3 vertices;  // n_vertices x 3
  Points3 joints;    // 24 x 3
};

/// vertices = template + shape_dirs * beta; joints = joint_regressor * vertices.
inline RestShape shaped_rest(const BodyModel& model, const ShapeCoeffs& betas) {
  RestShape out;
  const VecX offsets = model.shape_dirs * betas;  // 3*n_vertices
  out.vertices.resize(model.n_vertices, 3);
  for (int v = 0; v < model.n_vertices; ++v) {
    out.vertices.row(v) = model.template_vertices.row(v) +
                          offsets.segment<3>(3 * v).transpose();
  }
  out.joints = model.joint_regressor * out.vertices;
  return out;
}

// World transform of one joint: maps rest-frame points by
// x_world = rotation * (x_rest - rest_joint) + position.
struct JointTransform {
  Mat3 rotation;
  Vec3 position;  // posed joint location
};

/// Forward kinematics from per-joint local rotation matrices (row 0 = global
/// orientation). Root: (R_g, rest root position); child: parent rotation
/// composed with the local rotation, positioned about the child's rest offset.
inline std::vector<JointTransform> forward_kinematics(
    const BodyModel& model, const Points3& rest_joints,
    const std::vector<Mat3>& local_rotations) {
  std::vector<JointTransform> world(kJoints);
  world[0].rotation = local_rotations[0];
  world[0].position = rest_joints.row(0).transpose();
  for (int idx = 1; idx < kJoints; ++idx) {
    const int j = model.traversal_order[idx];
    const int p = model.parents[j];
    const Vec3 offset = (rest_joints.row(j) - rest_joints.row(p)).transpose();
    world[j].rotation = world[p].rotation * local_rotations[j];
    world[j].position = world[p].position + world[p].rotation * offset;
  }
  return world;
}

inline std::vector<Mat3> local_rotations_of(const BodyParams& params) {
  std::vector<Mat3> rots(kJoints);
  rots[0] = axis_angle_to_matrix(params.global_orient);
  for (int j = 1; j < kJoints; ++j) {
    rots[j] = axis_angle_to_matrix(params.body_pose.row(j - 1).transpose());
  }
  return rots;
}

inline std::vector<JointTransform> forward_kinematics(const BodyModel& model,
                                                      const ShapeCoeffs& betas,
                                                      const BodyParams& params) {
  return forward_kinematics(model, shaped_rest(model, betas).joints,
                            local_rotations_of(params));
}

/// Linear blend skinning: vertex = sum_j w_vj * (R_j (v_rest - rest_j) + p_j).
inline Points3 skin_from_rest(const BodyModel& model, const RestShape& rest,
                              const std::vector<JointTransform>& world,
                              const VecX* pose_offsets = nullptr) {
  Points3 out(model.n_vertices, 3);
  for (int v = 0; v < model.n_vertices; ++v) {
    Vec3 rest_v = rest.vertices.row(v).transpose();
    if (pose_offsets != nullptr) rest_v += pose_offsets->segment<3>(3 * v);
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < kJoints; ++j) {
      const double w = model.skin_weights(v, j);
      if (w == 0.0) continue;
      acc += w * (world[j].rotation *
                      (rest_v - rest.joints.row(j).transpose()) +
                  world[j].position);
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

inline Points3 skin(const BodyModel& model, const BodyParams& params) {
  const RestShape rest = shaped_rest(model, params.betas);
  const std::vector<Mat3> rots = local_rotations_of(params);
  const std::vector<JointTransform> world =
      forward_kinematics(model, rest.joints, rots);
  if (model.use_pose_correctives && model.pose_dirs.size() != 0) {
    VecX feats(9 * kBodyJoints);
    for (int j = 1; j < kJoints; ++j) {
      const Mat3 d = rots[j] - Mat3::Identity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) feats(9 * (j - 1) + 3 * r + c) = d(r, c);
    }
    const VecX offsets = model.pose_dirs * feats;
    return skin_from_rest(model, rest, world, &offsets);
  }
  return skin_from_rest(model, rest, world);
}

inline Points3 regress_keypoints(const BodyModel& model, const Points3& vertices) {
  if (vertices.rows() != model.n_vertices) {
    throw SchemaError("regress_keypoints: vertex count does not match regressor");
  }
  return model.keypoint_regressor * vertices;
}

/// The single body -> keypoints entry point: W * M(beta, theta).
inline Points3 keypoints_of(const BodyModel& model, const BodyParams& params) {
  return regress_keypoints(model, skin(model, params));
}

}  // namespace canopose
