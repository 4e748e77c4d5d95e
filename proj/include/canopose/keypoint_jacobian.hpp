#pragma once

#include <array>
#include <vector>

#include "canopose/body_model.hpp"

namespace canopose {

/// Keypoint forward pass plus exact chain-rule Jacobians with respect to the
/// per-joint 6D rotations and the shape coefficients.
///
/// Because keypoint regression and skinning are both linear, the regressor
/// and skin weights collapse into per-(keypoint, joint) scalars
///   a_mj = sum_v W_mv w_vj
/// and rest-space moments
///   b_mj(beta) = sum_v W_mv w_vj vrest_v(beta),
/// giving keypoint_m = sum_j [ R_j (b_mj - a_mj rj_j) + a_mj p_j ] with
/// (R_j, p_j) the world joint transforms and rj the rest joints. This is
/// algebraically identical to regressing from the skinned mesh; it makes the
/// derivative accumulation O(k * joints) instead of O(vertices * joints).
///
/// Keypoint values are still produced through the full skin-then-regress
/// path so that fitting evaluates exactly what keypoints_of() reports; only
/// derivatives use the collapsed form. Pose correctives are not supported
/// here (the fitting path treats them as absent).
class KeypointEvaluator {
 public:
  static constexpr int kRotParams = 6 * kJoints;                // 144
  static constexpr int kParams = kRotParams + kShapeCoeffs;     // 154

  explicit KeypointEvaluator(const BodyModel& model) : model_(model) {
    if (model.use_pose_correctives && model.pose_dirs.size() != 0) {
      throw FitError("KeypointEvaluator: pose correctives are not supported "
                     "by the analytic Jacobian path");
    }
    const int k = model.n_keypoints;
    a_ = model.keypoint_regressor * model.skin_weights;  // k x 24
    b0_ = MatX::Zero(3 * k, kJoints);
    for (int s = 0; s < kShapeCoeffs; ++s) bdir_[s] = MatX::Zero(3 * k, kJoints);
    for (int m = 0; m < k; ++m) {
      for (int v = 0; v < model.n_vertices; ++v) {
        const double wm = model.keypoint_regressor(m, v);
        if (wm == 0.0) continue;
        for (int j = 0; j < kJoints; ++j) {
          const double c = wm * model.skin_weights(v, j);
          if (c == 0.0) continue;
          b0_.block<3, 1>(3 * m, j) += c * model.template_vertices.row(v).transpose();
          for (int s = 0; s < kShapeCoeffs; ++s) {
            bdir_[s].block<3, 1>(3 * m, j) += c * model.shape_dirs.block<3, 1>(3 * v, s);
          }
        }
      }
    }
    // d rest_joint / d beta, rows grouped per joint
    joint_shape_dirs_ = MatX::Zero(3 * kJoints, kShapeCoeffs);
    for (int j = 0; j < kJoints; ++j) {
      for (int v = 0; v < model.n_vertices; ++v) {
        const double c = model.joint_regressor(j, v);
        if (c == 0.0) continue;
        joint_shape_dirs_.middleRows<3>(3 * j) += c * model.shape_dirs.middleRows<3>(3 * v);
      }
    }
  }

  struct State {
    ShapeCoeffs betas;
    std::vector<Mat3> local_rotations;
    RestShape rest;
    std::vector<JointTransform> world;
    Points3 keypoints;  // k x 3, body frame
  };

  // shared_rest, when given, must equal shaped_rest(model, betas); callers
  // evaluating several views at one shape pass it to skip recomputation.
  State evaluate(const ShapeCoeffs& betas, std::vector<Mat3> local_rotations,
                 const RestShape* shared_rest = nullptr) const {
    State st;
    st.betas = betas;
    st.rest = shared_rest ? *shared_rest : shaped_rest(model_, betas);
    st.world = forward_kinematics(model_, st.rest.joints, local_rotations);
    st.local_rotations = std::move(local_rotations);
    st.keypoints = regress_keypoints(
        model_, skin_from_rest(model_, st.rest, st.world));
    return st;
  }

  /// d keypoints / d [r6_0 .. r6_23, beta] as a (3k) x 154 matrix; keypoint m
  /// occupies rows 3m..3m+2. local_rot_jacobians[j][q] = d R_j / d r6_j[q].
  MatX jacobian(const State& st,
                const std::vector<std::array<Mat3, 6>>& local_rot_jacobians) const {
    const int k = model_.n_keypoints;
    MatX out = MatX::Zero(3 * k, kParams);

    // b_mj at the current shape
    MatX b = b0_;
    for (int s = 0; s < kShapeCoeffs; ++s) {
      if (st.betas(s) != 0.0) b += st.betas(s) * bdir_[s];
    }

    std::vector<Mat3> d_rot(kJoints);
    std::vector<Vec3> d_pos(kJoints);
    std::vector<char> touched(kJoints);

    // Rotation parameters: joint l, component q. Derivatives propagate down
    // the subtree of l only.
    for (int l = 0; l < kJoints; ++l) {
      for (int q = 0; q < 6; ++q) {
        const Mat3& d_local = local_rot_jacobians[l][q];
        std::fill(touched.begin(), touched.end(), 0);
        for (int idx = 0; idx < kJoints; ++idx) {
          const int j = model_.traversal_order[idx];
          if (j == l) {
            d_rot[j] = (j == 0) ? d_local
                                : Mat3(st.world[model_.parents[j]].rotation * d_local);
            d_pos[j].setZero();
            touched[j] = 1;
          } else if (j != 0 && touched[model_.parents[j]]) {
            const int p = model_.parents[j];
            const Vec3 offset =
                (st.rest.joints.row(j) - st.rest.joints.row(p)).transpose();
            d_rot[j] = d_rot[p] * st.local_rotations[j];
            d_pos[j] = d_pos[p] + d_rot[p] * offset;
            touched[j] = 1;
          }
        }
        const int col = 6 * l + q;
        for (int m = 0; m < k; ++m) {
          Vec3 acc = Vec3::Zero();
          for (int j = 0; j < kJoints; ++j) {
            if (!touched[j]) continue;
            const double amj = a_(m, j);
            acc += d_rot[j] * (b.block<3, 1>(3 * m, j) -
                               amj * st.rest.joints.row(j).transpose()) +
                   amj * d_pos[j];
          }
          out.block<3, 1>(3 * m, col) = acc;
        }
      }
    }

    // Shape coefficients: rest joints, rest offsets, and b all move with beta.
    for (int s = 0; s < kShapeCoeffs; ++s) {
      d_pos[0] = joint_shape_dirs_.block<3, 1>(0, s);
      for (int idx = 1; idx < kJoints; ++idx) {
        const int j = model_.traversal_order[idx];
        const int p = model_.parents[j];
        const Vec3 d_offset = joint_shape_dirs_.block<3, 1>(3 * j, s) -
                              joint_shape_dirs_.block<3, 1>(3 * p, s);
        d_pos[j] = d_pos[p] + st.world[p].rotation * d_offset;
      }
      const int col = kRotParams + s;
      for (int m = 0; m < k; ++m) {
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < kJoints; ++j) {
          const double amj = a_(m, j);
          const Vec3 db = bdir_[s].block<3, 1>(3 * m, j) -
                          amj * joint_shape_dirs_.block<3, 1>(3 * j, s);
          acc += st.world[j].rotation * db + amj * d_pos[j];
        }
        out.block<3, 1>(3 * m, col) = acc;
      }
    }
    return out;
  }

  const BodyModel& model() const { return model_; }

 private:
  const BodyModel& model_;
  MatX a_;                                   // k x 24 collapsed weights
  MatX b0_;                                  // (3k) x 24 template moments
  std::array<MatX, kShapeCoeffs> bdir_;      // per-coefficient moment directions
  MatX joint_shape_dirs_;                    // (3*24) x 10
};

}  // namespace canopose
