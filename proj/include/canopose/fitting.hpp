#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "canopose/keypoint_jacobian.hpp"
#include "canopose/least_squares.hpp"
#include "canopose/observations.hpp"

namespace canopose {

struct FitConfig {
  // loss weights: total = alpha * L2D + gamma * anchor (stage 2) or
  // alpha * L2D + stage-1 priors
  double alpha = 1.0;
  double gamma = 0.1;
  double lambda = 0.3;  // confidence threshold

  // stage-1 priors standing in for learned pose/shape priors; strong enough
  // to resolve the single-view twist/depth ambiguities toward the rest pose
  double shape_prior_weight = 0.1;
  double pose_prior_weight = 0.1;

  int max_iterations = 100;
  double tol_step = 1e-10;
  double tol_gradient = 1e-8;
  double tol_relative_decrease = 0.0;  // disabled by default
  double damping_init = 1e-4;
  double damping_up = 2.0;
  double damping_down = 1.0 / 3.0;

  int min_surviving_keypoints = 6;

  // Stage 2 re-registers each view's (theta_g, t) against the screened body
  // before the joint solve, reusing the yaw restart fan. A stage-1 view that
  // settled in a mirrored basin would otherwise poison the joint init.
  bool stage2_view_registration = true;

  // After the anchored solve, rerun it with the anchor targets replaced by
  // the latest minimizer (warm-started). The anchored objective stays well
  // conditioned while the pull of the imperfect single-view anchors contracts
  // geometrically, letting the reprojection term converge to its own floor.
  int stage2_anchor_refreshes = 6;

  // A screened body from a view whose own fit sits in a mirrored basin can
  // strand the joint solve at a large loss no other view supports. When the
  // stage-2 loss exceeds max(abs, rel * sum of stage-1 losses), the pipeline
  // retries with the body screened from the next-best view.
  double stage2_retry_rel_threshold = 10.0;
  double stage2_retry_abs_threshold = 1e-3;

  // mean initialization
  AxisAngle mean_global_orient = AxisAngle::Zero();
  Vec3 mean_translation = Vec3(0.0, 0.0, 5.0);
  // Stage-1 restarts: the mean init is replayed with the global orientation
  // pre-rotated by each yaw offset (radians, about +y) and the best final
  // loss wins. {0} disables restarts. A single mean orientation cannot serve
  // views that look at the body from behind; the yaw fan covers the ring.
  std::vector<double> init_yaw_offsets = {0.0, kPi / 2, kPi, -kPi / 2};

  SolveOptions solver_options() const {
    SolveOptions o;
    o.max_iterations = max_iterations;
    o.tol_step = tol_step;
    o.tol_gradient = tol_gradient;
    o.tol_relative_decrease = tol_relative_decrease;
    o.damping_init = damping_init;
    o.damping_up = damping_up;
    o.damping_down = damping_down;
    return o;
  }

  void validate() const {
    if (alpha < 0.0 || gamma < 0.0) throw FitError("FitConfig: alpha, gamma must be >= 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw FitError("FitConfig: lambda must lie in [0,1]");
    if (shape_prior_weight < 0.0 || pose_prior_weight < 0.0) {
      throw FitError("FitConfig: prior weights must be >= 0");
    }
    if (min_surviving_keypoints < 1) throw FitError("FitConfig: min_surviving_keypoints >= 1");
    if (stage2_anchor_refreshes < 0) throw FitError("FitConfig: anchor refreshes >= 0");
    solver_options().validate();
    if (!mean_global_orient.allFinite() || !mean_translation.allFinite()) {
      throw FitError("FitConfig: mean init must be finite");
    }
  }
};

struct MeanInit {
  BodyParams params;
  Vec3 translation;
};

/// The configured mean body and camera: beta = 0, theta_b = 0, theta_g and t
/// from the config (defaults: upright, 5 m in front of the camera).
inline MeanInit mean_init(const BodyModel&, const FitConfig& cfg = {}) {
  MeanInit init;
  init.params.global_orient = cfg.mean_global_orient;
  init.translation = cfg.mean_translation;
  return init;
}

struct ViewFitResult {
  int view_id = 0;
  BodyParams params;            // theta^i = (theta_g^i, theta_b^i), beta^i
  CameraView camera;            // intrinsics plus fitted translation t^i
  double final_loss_2d = 0.0;     // confidence-weighted 2D loss at the fit
  double final_total_loss = 0.0;  // alpha * L2D + priors (solver cost)
  int survivors = 0;
  bool inert = false;           // no surviving keypoints
  SolveDiagnostics diagnostics;
  double init_yaw_offset = 0.0;  // winning restart
};

struct StageOneResult {
  std::vector<ViewFitResult> views;
};

namespace detail {

constexpr double kMinDepth = 1e-6;

inline void pack_rot6d(const Mat3& r, Eigen::Ref<VecX> dst) {
  dst.head<3>() = r.col(0);
  dst.tail<3>() = r.col(1);
}

// 2x3 derivative of the pixel w.r.t. the camera-frame point.
inline Eigen::Matrix<double, 2, 3> pixel_jacobian(const CameraIntrinsics& k,
                                                  const Vec3& p) {
  Eigen::Matrix<double, 2, 3> out;
  const double iz = 1.0 / p.z();
  out << k.focal * iz, 0.0, -k.focal * p.x() * iz * iz,
      0.0, k.focal * iz, -k.focal * p.y() * iz * iz;
  return out;
}

// Shared packing of 24 local 6D rotations out of a parameter vector with the
// global block at g_offset and the 23 body blocks contiguous at b_offset.
inline bool unpack_rotations(const VecX& x, int g_offset, int b_offset,
                             std::vector<Mat3>* rots) {
  rots->resize(kJoints);
  try {
    (*rots)[0] = rot6d_to_matrix(x.segment<6>(g_offset));
    for (int j = 1; j < kJoints; ++j) {
      (*rots)[j] = rot6d_to_matrix(x.segment<6>(b_offset + 6 * (j - 1)));
    }
  } catch (const GeometryError&) {
    return false;  // degenerate 6D block: treat the point as infeasible
  }
  return true;
}

}  // namespace detail

/// Stage-1 residual block for one view. Parameter layout (157):
/// [r6 global (6) | r6 body joints 1..23 (138) | beta (10) | t (3)].
/// Residuals: sqrt(alpha * c_j) reprojection pairs, then sqrt(shape_w) * beta
/// and sqrt(pose_w) * (r6_bj - r6_identity) priors.
class SingleViewProblem final : public LeastSquaresProblem {
 public:
  static constexpr int kGlobal = 0;
  static constexpr int kBody = 6;
  static constexpr int kBetas = 6 + 6 * kBodyJoints;  // 144
  static constexpr int kTrans = kBetas + kShapeCoeffs;  // 154
  static constexpr int kNumParams = kTrans + 3;          // 157

  SingleViewProblem(const KeypointEvaluator& evaluator, const CameraIntrinsics& k,
                    const FilteredDetection& det, const FitConfig& cfg)
      : evaluator_(evaluator), intrinsics_(k), det_(det), cfg_(cfg) {}

  int num_parameters() const override { return kNumParams; }
  int num_residuals() const override {
    return 2 * evaluator_.model().n_keypoints + kShapeCoeffs + 6 * kBodyJoints;
  }

  bool evaluate(const VecX& x, VecX* residuals, MatX* jacobian) const override {
    std::vector<Mat3> rots;
    if (!detail::unpack_rotations(x, kGlobal, kBody, &rots)) return false;
    const ShapeCoeffs betas = x.segment<kShapeCoeffs>(kBetas);
    const Vec3 t = x.segment<3>(kTrans);
    const KeypointEvaluator::State st = evaluator_.evaluate(betas, std::move(rots));

    const int k = evaluator_.model().n_keypoints;
    const double sa = std::sqrt(cfg_.alpha);
    const double sw_shape = std::sqrt(cfg_.shape_prior_weight);
    const double sw_pose = std::sqrt(cfg_.pose_prior_weight);

    if (residuals != nullptr) residuals->setZero(num_residuals());
    MatX kp_jac;
    if (jacobian != nullptr) {
      jacobian->setZero(num_residuals(), kNumParams);
      std::vector<std::array<Mat3, 6>> rot_jacs(kJoints);
      rot_jacs[0] = rot6d_to_matrix_jacobian(x.segment<6>(kGlobal));
      for (int j = 1; j < kJoints; ++j) {
        rot_jacs[j] = rot6d_to_matrix_jacobian(x.segment<6>(kBody + 6 * (j - 1)));
      }
      kp_jac = evaluator_.jacobian(st, rot_jacs);
    }

    for (int m = 0; m < k; ++m) {
      const double c = det_.filtered_confidence(m);
      if (c == 0.0) continue;
      const Vec3 p = st.keypoints.row(m).transpose() + t;
      if (!(p.z() > detail::kMinDepth)) return false;  // backtrack the step
      const double w = sa * std::sqrt(c);
      if (residuals != nullptr) {
        const double u = intrinsics_.focal * p.x() / p.z() + intrinsics_.principal.x();
        const double v = intrinsics_.focal * p.y() / p.z() + intrinsics_.principal.y();
        (*residuals)(2 * m) = w * (det_.detection.keypoints(m, 0) - u);
        (*residuals)(2 * m + 1) = w * (det_.detection.keypoints(m, 1) - v);
      }
      if (jacobian != nullptr) {
        const Eigen::Matrix<double, 2, 3> pj = detail::pixel_jacobian(intrinsics_, p);
        jacobian->block(2 * m, 0, 2, KeypointEvaluator::kParams).noalias() =
            -w * pj * kp_jac.middleRows<3>(3 * m);
        jacobian->block<2, 3>(2 * m, kTrans) = -w * pj;
      }
    }

    const int prior_row = 2 * k;
    if (residuals != nullptr) {
      residuals->segment<kShapeCoeffs>(prior_row) = sw_shape * betas;
      const Rot6d id6 = identity_rot6d();
      for (int j = 0; j < kBodyJoints; ++j) {
        residuals->segment<6>(prior_row + kShapeCoeffs + 6 * j) =
            sw_pose * (x.segment<6>(kBody + 6 * j) - id6);
      }
    }
    if (jacobian != nullptr) {
      for (int s = 0; s < kShapeCoeffs; ++s) {
        (*jacobian)(prior_row + s, kBetas + s) = sw_shape;
      }
      for (int j = 0; j < 6 * kBodyJoints; ++j) {
        (*jacobian)(prior_row + kShapeCoeffs + j, kBody + j) = sw_pose;
      }
    }
    return true;
  }

  VecX pack(const BodyParams& params, const Vec3& t) const {
    VecX x(kNumParams);
    detail::pack_rot6d(axis_angle_to_matrix(params.global_orient), x.segment<6>(kGlobal));
    for (int j = 0; j < kBodyJoints; ++j) {
      detail::pack_rot6d(axis_angle_to_matrix(params.body_pose.row(j).transpose()),
                         x.segment<6>(kBody + 6 * j));
    }
    x.segment<kShapeCoeffs>(kBetas) = params.betas;
    x.segment<3>(kTrans) = t;
    return x;
  }

  void unpack(const VecX& x, BodyParams* params, Vec3* t) const {
    params->global_orient = matrix_to_axis_angle(rot6d_to_matrix(x.segment<6>(kGlobal)));
    for (int j = 0; j < kBodyJoints; ++j) {
      params->body_pose.row(j) =
          matrix_to_axis_angle(rot6d_to_matrix(x.segment<6>(kBody + 6 * j))).transpose();
    }
    params->betas = x.segment<kShapeCoeffs>(kBetas);
    *t = x.segment<3>(kTrans);
  }

 private:
  const KeypointEvaluator& evaluator_;
  CameraIntrinsics intrinsics_;
  const FilteredDetection& det_;
  FitConfig cfg_;
};

/// Independent per-view fit from the configured mean initialization,
/// minimizing alpha * L2D + shape/pose priors over {theta_g, theta_b, beta, t}
/// with rotations in 6D during descent. Restarts the mean orientation over
/// cfg.init_yaw_offsets and keeps the lowest final loss (ties: earlier
/// offset). Fewer than cfg.min_surviving_keypoints survivors is an error.
inline ViewFitResult fit_single_view(const BodyModel& model,
                                     const CameraIntrinsics& intrinsics,
                                     const FilteredDetection& det,
                                     const FitConfig& cfg,
                                     const KeypointEvaluator* shared_evaluator = nullptr,
                                     const MeanInit* init_override = nullptr) {
  cfg.validate();
  if (det.survivors < cfg.min_surviving_keypoints) {
    throw FitError("fit_single_view: view " + std::to_string(det.detection.view_id) +
                   " is under-constrained (" + std::to_string(det.survivors) +
                   " surviving keypoints, need >= " +
                   std::to_string(cfg.min_surviving_keypoints) + ")");
  }
  std::optional<KeypointEvaluator> local;
  if (shared_evaluator == nullptr) local.emplace(model);
  const KeypointEvaluator& evaluator = shared_evaluator ? *shared_evaluator : *local;

  SingleViewProblem problem(evaluator, intrinsics, det, cfg);
  const MeanInit base = init_override ? *init_override : mean_init(model, cfg);
  std::vector<double> offsets =
      init_override ? std::vector<double>{0.0} : cfg.init_yaw_offsets;
  if (offsets.empty()) offsets.push_back(0.0);

  bool have_best = false;
  VecX best_x;
  SolveDiagnostics best_diag;
  double best_offset = 0.0;
  std::string first_error;
  for (const double yaw : offsets) {
    MeanInit init = base;
    const Mat3 r = axis_angle_to_matrix(Vec3(0.0, yaw, 0.0)) *
                   axis_angle_to_matrix(base.params.global_orient);
    init.params.global_orient = matrix_to_axis_angle(r);
    SolveDiagnostics diag;
    VecX x;
    try {
      x = solve_least_squares(problem, problem.pack(init.params, init.translation),
                              cfg.solver_options(), &diag);
    } catch (const FitError& e) {
      if (first_error.empty()) first_error = e.what();
      continue;
    }
    if (!have_best || diag.final_cost < best_diag.final_cost) {
      have_best = true;
      best_x = x;
      best_diag = diag;
      best_offset = yaw;
    }
  }
  if (!have_best) {
    throw FitError("fit_single_view: every restart failed (" + first_error + ")");
  }

  ViewFitResult out;
  out.view_id = det.detection.view_id;
  problem.unpack(best_x, &out.params, &out.camera.translation);
  out.camera.intrinsics = intrinsics;
  out.survivors = det.survivors;
  out.diagnostics = best_diag;
  out.final_total_loss = best_diag.final_cost;
  out.final_loss_2d = loss_2d_single(model, out.params, out.camera, det);
  out.init_yaw_offset = best_offset;
  return out;
}

struct ScreenedBody {
  int view_index = 0;
  BodyPose body_pose;   // theta_b tilde
  ShapeCoeffs betas;    // beta tilde
  double loss_2d = 0.0;
};

/// Picks the stage-1 view with the least 2D reprojection error evaluated at
/// its own fit; its body pose and shape seed the shared canonical parameters.
/// Ties break to the lowest view index.
inline ScreenedBody screen_best_view(const BodyModel& model,
                                     const StageOneResult& stage1,
                                     const std::vector<FilteredDetection>& dets) {
  if (stage1.views.empty() || stage1.views.size() != dets.size()) {
    throw FitError("screen_best_view: empty or mismatched stage-1 results");
  }
  ScreenedBody best;
  bool have = false;
  for (size_t i = 0; i < stage1.views.size(); ++i) {
    const ViewFitResult& v = stage1.views[i];
    const double loss = loss_2d_single(model, v.params, v.camera, dets[i]);
    if (!have || loss < best.loss_2d) {
      have = true;
      best.view_index = static_cast<int>(i);
      best.body_pose = v.params.body_pose;
      best.betas = v.params.betas;
      best.loss_2d = loss;
    }
  }
  return best;
}

/// Canonical initialization: per-view (theta_g^i, t^i) from stage 1, shared
/// (theta_b, beta) from the screened view.
inline CanonicalParams assemble_canonical(const StageOneResult& stage1,
                                          const ScreenedBody& screened) {
  CanonicalParams cp;
  for (const ViewFitResult& v : stage1.views) {
    cp.view_global_orient.push_back(v.params.global_orient);
    cp.view_translation.push_back(v.camera.translation);
  }
  cp.body_pose = screened.body_pose;
  cp.betas = screened.betas;
  return cp;
}

// Anchor targets for the stage-2 parameter loss: the screened body and the
// stage-1 per-view global orientations.
struct StageTwoAnchor {
  BodyPose body_pose;
  ShapeCoeffs betas;
  std::vector<AxisAngle> view_global_orient;

  static StageTwoAnchor from_stage1(const StageOneResult& stage1,
                                    const ScreenedBody& screened) {
    StageTwoAnchor a;
    a.body_pose = screened.body_pose;
    a.betas = screened.betas;
    for (const ViewFitResult& v : stage1.views) {
      a.view_global_orient.push_back(v.params.global_orient);
    }
    return a;
  }
};

/// Stage-2 residual block over the whole canonical parameter space.
/// Parameter layout for N views (9N + 148):
/// [r6_g^0..r6_g^{N-1} (6N) | t^0..t^{N-1} (3N) | r6 body (138) | beta (10)].
/// Residuals: per-view sqrt(alpha * c) reprojection pairs, then the
/// sqrt(gamma)-weighted parameter anchors (beta, body pose, per-view global
/// orientations), all in the 6D coordinates used during descent.
class MultiViewProblem final : public LeastSquaresProblem {
 public:
  MultiViewProblem(const KeypointEvaluator& evaluator,
                   const std::vector<CameraView>& cams,
                   const std::vector<FilteredDetection>& dets,
                   const FitConfig& cfg, const StageTwoAnchor& anchor)
      : evaluator_(evaluator), cams_(cams), dets_(dets), cfg_(cfg) {
    n_views_ = static_cast<int>(cams.size());
    if (n_views_ == 0 || dets.size() != cams.size() ||
        anchor.view_global_orient.size() != cams.size()) {
      throw FitError("MultiViewProblem: view lists disagree");
    }
    anchor_betas_ = anchor.betas;
    anchor_body_.resize(6 * kBodyJoints);
    for (int j = 0; j < kBodyJoints; ++j) {
      anchor_body_.segment<6>(6 * j) =
          axis_angle_to_rot6d(anchor.body_pose.row(j).transpose());
    }
    anchor_global_.resize(6 * n_views_);
    for (int i = 0; i < n_views_; ++i) {
      anchor_global_.segment<6>(6 * i) =
          axis_angle_to_rot6d(anchor.view_global_orient[i]);
    }
  }

  int views() const { return n_views_; }
  int global_offset(int i) const { return 6 * i; }
  int translation_offset(int i) const { return 6 * n_views_ + 3 * i; }
  int body_offset() const { return 9 * n_views_; }
  int betas_offset() const { return body_offset() + 6 * kBodyJoints; }

  int num_parameters() const override { return betas_offset() + kShapeCoeffs; }
  int num_residuals() const override {
    const int k = evaluator_.model().n_keypoints;
    return 2 * k * n_views_ + kShapeCoeffs + 6 * kBodyJoints + 6 * n_views_;
  }

  bool evaluate(const VecX& x, VecX* residuals, MatX* jacobian) const override {
    const int k = evaluator_.model().n_keypoints;
    const ShapeCoeffs betas = x.segment<kShapeCoeffs>(betas_offset());
    std::vector<Mat3> body_rots(kJoints);  // joint 0 replaced per view
    try {
      for (int j = 1; j < kJoints; ++j) {
        body_rots[j] = rot6d_to_matrix(x.segment<6>(body_offset() + 6 * (j - 1)));
      }
    } catch (const GeometryError&) {
      return false;
    }

    if (residuals != nullptr) residuals->setZero(num_residuals());
    if (jacobian != nullptr) jacobian->setZero(num_residuals(), num_parameters());

    std::vector<std::array<Mat3, 6>> rot_jacs;
    if (jacobian != nullptr) {
      rot_jacs.resize(kJoints);
      for (int j = 1; j < kJoints; ++j) {
        rot_jacs[j] = rot6d_to_matrix_jacobian(x.segment<6>(body_offset() + 6 * (j - 1)));
      }
    }

    const RestShape rest = shaped_rest(evaluator_.model(), betas);
    const double sa = std::sqrt(cfg_.alpha);
    for (int i = 0; i < n_views_; ++i) {
      std::vector<Mat3> rots = body_rots;
      try {
        rots[0] = rot6d_to_matrix(x.segment<6>(global_offset(i)));
      } catch (const GeometryError&) {
        return false;
      }
      const Vec3 t = x.segment<3>(translation_offset(i));
      const KeypointEvaluator::State st =
          evaluator_.evaluate(betas, std::move(rots), &rest);

      MatX kp_jac;
      if (jacobian != nullptr) {
        rot_jacs[0] = rot6d_to_matrix_jacobian(x.segment<6>(global_offset(i)));
        kp_jac = evaluator_.jacobian(st, rot_jacs);
      }
      const int row0 = 2 * k * i;
      for (int m = 0; m < k; ++m) {
        const double c = dets_[i].filtered_confidence(m);
        if (c == 0.0) continue;
        const Vec3 p = st.keypoints.row(m).transpose() + t;
        if (!(p.z() > detail::kMinDepth)) return false;
        const double w = sa * std::sqrt(c);
        const CameraIntrinsics& kk = cams_[i].intrinsics;
        if (residuals != nullptr) {
          const double u = kk.focal * p.x() / p.z() + kk.principal.x();
          const double v = kk.focal * p.y() / p.z() + kk.principal.y();
          (*residuals)(row0 + 2 * m) = w * (dets_[i].detection.keypoints(m, 0) - u);
          (*residuals)(row0 + 2 * m + 1) = w * (dets_[i].detection.keypoints(m, 1) - v);
        }
        if (jacobian != nullptr) {
          const Eigen::Matrix<double, 2, 3> pj = detail::pixel_jacobian(kk, p);
          const MatX d = -w * pj * kp_jac.middleRows<3>(3 * m);  // 2 x 154
          jacobian->block<2, 6>(row0 + 2 * m, global_offset(i)) = d.leftCols<6>();
          jacobian->block(row0 + 2 * m, body_offset(), 2, 6 * kBodyJoints) =
              d.middleCols<6 * kBodyJoints>(6);
          jacobian->block<2, kShapeCoeffs>(row0 + 2 * m, betas_offset()) =
              d.rightCols<kShapeCoeffs>();
          jacobian->block<2, 3>(row0 + 2 * m, translation_offset(i)) = -w * pj;
        }
      }
    }

    // parameter anchors
    const double sg = std::sqrt(cfg_.gamma);
    const int anchor_row = 2 * k * n_views_;
    if (residuals != nullptr) {
      residuals->segment<kShapeCoeffs>(anchor_row) = sg * (betas - anchor_betas_);
      residuals->segment(anchor_row + kShapeCoeffs, 6 * kBodyJoints) =
          sg * (x.segment(body_offset(), 6 * kBodyJoints) - anchor_body_);
      residuals->segment(anchor_row + kShapeCoeffs + 6 * kBodyJoints, 6 * n_views_) =
          sg * (x.segment(0, 6 * n_views_) - anchor_global_);
    }
    if (jacobian != nullptr) {
      for (int s = 0; s < kShapeCoeffs; ++s) {
        (*jacobian)(anchor_row + s, betas_offset() + s) = sg;
      }
      for (int j = 0; j < 6 * kBodyJoints; ++j) {
        (*jacobian)(anchor_row + kShapeCoeffs + j, body_offset() + j) = sg;
      }
      for (int j = 0; j < 6 * n_views_; ++j) {
        (*jacobian)(anchor_row + kShapeCoeffs + 6 * kBodyJoints + j, j) = sg;
      }
    }
    return true;
  }

  VecX pack(const CanonicalParams& cp) const {
    cp.validate();
    if (cp.num_views() != n_views_) {
      throw FitError("MultiViewProblem: canonical parameters have wrong view count");
    }
    VecX x(num_parameters());
    for (int i = 0; i < n_views_; ++i) {
      detail::pack_rot6d(axis_angle_to_matrix(cp.view_global_orient[i]),
                         x.segment<6>(global_offset(i)));
      x.segment<3>(translation_offset(i)) = cp.view_translation[i];
    }
    for (int j = 0; j < kBodyJoints; ++j) {
      detail::pack_rot6d(axis_angle_to_matrix(cp.body_pose.row(j).transpose()),
                         x.segment<6>(body_offset() + 6 * j));
    }
    x.segment<kShapeCoeffs>(betas_offset()) = cp.betas;
    return x;
  }

  CanonicalParams unpack(const VecX& x) const {
    CanonicalParams cp;
    for (int i = 0; i < n_views_; ++i) {
      cp.view_global_orient.push_back(
          matrix_to_axis_angle(rot6d_to_matrix(x.segment<6>(global_offset(i)))));
      cp.view_translation.push_back(x.segment<3>(translation_offset(i)));
    }
    for (int j = 0; j < kBodyJoints; ++j) {
      cp.body_pose.row(j) =
          matrix_to_axis_angle(rot6d_to_matrix(x.segment<6>(body_offset() + 6 * j)))
              .transpose();
    }
    cp.betas = x.segment<kShapeCoeffs>(betas_offset());
    return cp;
  }

 private:
  const KeypointEvaluator& evaluator_;
  const std::vector<CameraView>& cams_;
  const std::vector<FilteredDetection>& dets_;
  FitConfig cfg_;
  int n_views_ = 0;
  ShapeCoeffs anchor_betas_;
  VecX anchor_body_;
  VecX anchor_global_;
};

/// Rigid registration of one view against a frozen body: parameters are the
/// view's global orientation (6D) and translation only.
class ViewRegistrationProblem final : public LeastSquaresProblem {
 public:
  ViewRegistrationProblem(const KeypointEvaluator& evaluator,
                          const CameraIntrinsics& k, const FilteredDetection& det,
                          const ShapeCoeffs& betas, const BodyPose& body_pose)
      : evaluator_(evaluator), intrinsics_(k), det_(det), betas_(betas) {
    body_rots_.resize(kJoints);
    for (int j = 1; j < kJoints; ++j) {
      body_rots_[j] = axis_angle_to_matrix(body_pose.row(j - 1).transpose());
    }
    rest_ = shaped_rest(evaluator.model(), betas);
  }

  int num_parameters() const override { return 9; }
  int num_residuals() const override { return 2 * evaluator_.model().n_keypoints; }

  bool evaluate(const VecX& x, VecX* residuals, MatX* jacobian) const override {
    std::vector<Mat3> rots = body_rots_;
    try {
      rots[0] = rot6d_to_matrix(x.head<6>());
    } catch (const GeometryError&) {
      return false;
    }
    const Vec3 t = x.tail<3>();
    const KeypointEvaluator::State st = evaluator_.evaluate(betas_, std::move(rots), &rest_);
    if (residuals != nullptr) residuals->setZero(num_residuals());
    MatX kp_jac;
    if (jacobian != nullptr) {
      jacobian->setZero(num_residuals(), 9);
      std::vector<std::array<Mat3, 6>> rot_jacs(kJoints);
      rot_jacs[0] = rot6d_to_matrix_jacobian(x.head<6>());
      for (int j = 1; j < kJoints; ++j) {
        for (auto& m : rot_jacs[j]) m.setZero();
      }
      kp_jac = evaluator_.jacobian(st, rot_jacs);
    }
    const int k = evaluator_.model().n_keypoints;
    for (int m = 0; m < k; ++m) {
      const double c = det_.filtered_confidence(m);
      if (c == 0.0) continue;
      const Vec3 p = st.keypoints.row(m).transpose() + t;
      if (!(p.z() > detail::kMinDepth)) return false;
      const double w = std::sqrt(c);
      if (residuals != nullptr) {
        const double u = intrinsics_.focal * p.x() / p.z() + intrinsics_.principal.x();
        const double v = intrinsics_.focal * p.y() / p.z() + intrinsics_.principal.y();
        (*residuals)(2 * m) = w * (det_.detection.keypoints(m, 0) - u);
        (*residuals)(2 * m + 1) = w * (det_.detection.keypoints(m, 1) - v);
      }
      if (jacobian != nullptr) {
        const Eigen::Matrix<double, 2, 3> pj = detail::pixel_jacobian(intrinsics_, p);
        jacobian->block<2, 6>(2 * m, 0).noalias() =
            -w * pj * kp_jac.block<3, 6>(3 * m, 0);
        jacobian->block<2, 3>(2 * m, 6) = -w * pj;
      }
    }
    return true;
  }

 private:
  const KeypointEvaluator& evaluator_;
  CameraIntrinsics intrinsics_;
  const FilteredDetection& det_;
  ShapeCoeffs betas_;
  std::vector<Mat3> body_rots_;
  RestShape rest_;
};

namespace detail {

// Best rigid registration of one view over the yaw restart fan; returns the
// refined (theta_g, t) when it beats the incumbent 2D loss.
inline bool reregister_view(const KeypointEvaluator& evaluator,
                            const CameraIntrinsics& k, const FilteredDetection& det,
                            const FitConfig& cfg, const ShapeCoeffs& betas,
                            const BodyPose& body_pose, AxisAngle* theta_g, Vec3* t) {
  ViewRegistrationProblem problem(evaluator, k, det, betas, body_pose);
  VecX x0(9);
  pack_rot6d(axis_angle_to_matrix(*theta_g), x0.head<6>());
  x0.tail<3>() = *t;
  VecX r(problem.num_residuals());
  double best_cost = std::numeric_limits<double>::infinity();  // incumbent
  if (problem.evaluate(x0, &r, nullptr)) best_cost = r.squaredNorm();
  bool improved = false;
  VecX best_x = x0;
  std::vector<double> offsets = cfg.init_yaw_offsets;
  if (offsets.empty()) offsets.push_back(0.0);
  SolveOptions opts = cfg.solver_options();
  for (const double yaw : offsets) {
    VecX xi = x0;
    detail::pack_rot6d(axis_angle_to_matrix(Vec3(0.0, yaw, 0.0)) *
                           axis_angle_to_matrix(*theta_g),
                       xi.head<6>());
    SolveDiagnostics diag;
    VecX x;
    try {
      x = solve_least_squares(problem, xi, opts, &diag);
    } catch (const FitError&) {
      continue;
    }
    if (diag.final_cost < best_cost) {
      best_cost = diag.final_cost;
      best_x = x;
      improved = true;
    }
  }
  if (improved) {
    *theta_g = matrix_to_axis_angle(rot6d_to_matrix(best_x.head<6>()));
    *t = best_x.tail<3>();
  }
  return improved;
}

}  // namespace detail

struct MultiViewFitResult {
  CanonicalParams params;
  Points3 keypoints_body_frame;                 // reference view 0 orientation
  std::vector<Points3> keypoints_camera_frame;  // per view, translation applied
  double final_loss_2d = 0.0;                   // multi-view L2D at the fit
  double final_total_loss = 0.0;                // last solve's cost
  std::vector<bool> inert_views;
  // One entry per anchored solve: the first uses the stage-1 anchors, each
  // following one re-anchors at the previous minimizer.
  std::vector<SolveDiagnostics> solves;
  SolveDiagnostics diagnostics;  // the last solve
};

/// Joint refinement of all canonical parameters against every view's
/// detections plus the stage-1 anchor. Views without surviving keypoints are
/// flagged inert: their translations are untouched by construction (no
/// residual references them).
inline MultiViewFitResult fit_multi_view(const BodyModel& model,
                                         const CanonicalParams& canonical_init,
                                         const std::vector<CameraView>& cams,
                                         const std::vector<FilteredDetection>& dets,
                                         const FitConfig& cfg,
                                         const StageTwoAnchor& anchor,
                                         const KeypointEvaluator* shared_evaluator = nullptr) {
  cfg.validate();
  canonical_init.validate();
  std::optional<KeypointEvaluator> local;
  if (shared_evaluator == nullptr) local.emplace(model);
  const KeypointEvaluator& evaluator = shared_evaluator ? *shared_evaluator : *local;

  MultiViewFitResult out;
  out.inert_views.resize(cams.size());
  bool any_active = false;
  for (size_t i = 0; i < dets.size(); ++i) {
    out.inert_views[i] = dets[i].survivors == 0;
    any_active = any_active || !out.inert_views[i];
  }
  if (!any_active) {
    throw FitError("fit_multi_view: all views are inert (no surviving keypoints)");
  }

  CanonicalParams init = canonical_init;
  if (cfg.stage2_view_registration) {
    for (int i = 0; i < init.num_views(); ++i) {
      if (out.inert_views[i]) continue;
      detail::reregister_view(evaluator, cams[i].intrinsics, dets[i], cfg,
                              init.betas, init.body_pose,
                              &init.view_global_orient[i], &init.view_translation[i]);
    }
  }

  StageTwoAnchor current_anchor = anchor;
  for (int solve = 0; solve <= cfg.stage2_anchor_refreshes; ++solve) {
    MultiViewProblem problem(evaluator, cams, dets, cfg, current_anchor);
    SolveDiagnostics diag;
    const VecX x = solve_least_squares(problem, problem.pack(init),
                                       cfg.solver_options(), &diag);
    init = problem.unpack(x);
    out.solves.push_back(diag);
    current_anchor.body_pose = init.body_pose;
    current_anchor.betas = init.betas;
    current_anchor.view_global_orient = init.view_global_orient;
  }
  out.params = init;
  out.diagnostics = out.solves.back();
  out.final_total_loss = out.diagnostics.final_cost;
  out.final_loss_2d = loss_2d_multi(model, out.params, cams, dets);

  out.keypoints_body_frame = keypoints_of(model, out.params.view_params(0));
  for (int i = 0; i < out.params.num_views(); ++i) {
    Points3 cam_kp = keypoints_of(model, out.params.view_params(i));
    cam_kp.rowwise() += out.params.view_translation[i].transpose();
    out.keypoints_camera_frame.push_back(std::move(cam_kp));
  }
  return out;
}

struct TwoStageResult {
  StageOneResult stage1;
  ScreenedBody screened;          // the screening that produced stage2
  CanonicalParams canonical_init;
  MultiViewFitResult stage2;
  int screening_retries = 0;      // fallback screenings consumed
};

/// The full pipeline: per-view stage-1 fits, best-view screening, canonical
/// assembly, and the joint stage-2 refinement. If the joint solve strands at
/// a loss far above what the views achieved individually, screening falls
/// back to the next-best view (deterministically, in ascending stage-1 loss
/// order) and the best outcome is kept.
inline TwoStageResult fit_two_stage(const BodyModel& model,
                                    const std::vector<CameraView>& cams,
                                    const std::vector<Detection2D>& detections,
                                    const FitConfig& cfg) {
  cfg.validate();
  if (cams.size() != detections.size() || cams.empty()) {
    throw FitError("fit_two_stage: need one camera per detection view");
  }
  const KeypointEvaluator evaluator(model);
  std::vector<FilteredDetection> dets;
  dets.reserve(detections.size());
  for (const Detection2D& d : detections) {
    dets.push_back(filter_confidence(d, cfg.lambda));
  }

  TwoStageResult out;
  double stage1_loss_sum = 0.0;
  for (size_t i = 0; i < dets.size(); ++i) {
    out.stage1.views.push_back(
        fit_single_view(model, cams[i].intrinsics, dets[i], cfg, &evaluator));
    stage1_loss_sum += out.stage1.views.back().final_loss_2d;
  }

  // candidate screening views, ascending per-view 2D loss, ties by index
  std::vector<std::pair<double, int>> order;
  for (size_t i = 0; i < out.stage1.views.size(); ++i) {
    const ViewFitResult& v = out.stage1.views[i];
    order.emplace_back(loss_2d_single(model, v.params, v.camera, dets[i]),
                       static_cast<int>(i));
  }
  std::sort(order.begin(), order.end());

  const double acceptable = std::max(cfg.stage2_retry_abs_threshold,
                                     cfg.stage2_retry_rel_threshold * stage1_loss_sum);
  bool have = false;
  for (size_t c = 0; c < order.size(); ++c) {
    ScreenedBody screened;
    screened.view_index = order[c].second;
    screened.loss_2d = order[c].first;
    screened.body_pose = out.stage1.views[screened.view_index].params.body_pose;
    screened.betas = out.stage1.views[screened.view_index].params.betas;
    const CanonicalParams init = assemble_canonical(out.stage1, screened);
    MultiViewFitResult stage2 =
        fit_multi_view(model, init, cams, dets, cfg,
                       StageTwoAnchor::from_stage1(out.stage1, screened), &evaluator);
    const bool better = !have || stage2.final_loss_2d < out.stage2.final_loss_2d;
    if (better) {
      out.screened = screened;
      out.canonical_init = init;
      out.stage2 = std::move(stage2);
      out.screening_retries = static_cast<int>(c);
      have = true;
    }
    if (out.stage2.final_loss_2d <= acceptable) break;
  }
  return out;
}

}  // namespace canopose
