#include <gtest/gtest.h>

#include <random>

#include "canopose/fitting.hpp"
#include "canopose/procrustes.hpp"
#include "canopose/toy_model.hpp"
#include "test_util.hpp"

using namespace canopose;
using testutil::CanonicalScene;
using testutil::make_canonical_scene;

namespace {

std::mt19937_64 rng(402211ULL);

double pa_mpjpe_m(const Points3& pred, const Points3& gt) {
  const ProcrustesResult res = procrustes_align(pred, gt);
  return (res.aligned - gt).rowwise().norm().mean();
}

FilteredDetection filtered(const Detection2D& d, double lambda = 0.3) {
  return filter_confidence(d, lambda);
}

}  // namespace

TEST(MeanInit, StatedDefaults) {
  const BodyModel m = make_toy_model();
  const MeanInit init = mean_init(m, {});
  EXPECT_EQ(init.params.betas, ShapeCoeffs::Zero());
  EXPECT_EQ(init.params.body_pose, BodyPose::Zero());
  EXPECT_EQ(init.params.global_orient, AxisAngle::Zero());
  EXPECT_EQ(init.translation, Vec3(0, 0, 5));
}

TEST(MeanInit, ProjectsToyModelAtPositiveDepth) {
  const BodyModel m = make_toy_model();
  const MeanInit init = mean_init(m, {});
  const Points3 kp = keypoints_of(m, init.params);
  for (int j = 0; j < m.n_keypoints; ++j) {
    EXPECT_GT(kp(j, 2) + init.translation.z(), 0.0);
  }
  CameraView cam;
  cam.translation = init.translation;
  EXPECT_NO_THROW(project_checked(kp, cam.intrinsics, cam.rotation, cam.translation));
}

TEST(MeanInit, ConfigOverrideIsVerbatim) {
  const BodyModel m = make_toy_model();
  FitConfig cfg;
  cfg.mean_translation = Vec3(1, 2, 7);
  cfg.mean_global_orient = Vec3(0, 0.5, 0);
  const MeanInit init = mean_init(m, cfg);
  EXPECT_EQ(init.translation, Vec3(1, 2, 7));
  EXPECT_EQ(init.params.global_orient, Vec3(0, 0.5, 0));
}

TEST(SingleViewProblem, AnalyticJacobianMatchesFiniteDifferences) {
  const BodyModel m = make_toy_model();
  const KeypointEvaluator evaluator(m);
  const CanonicalScene scene = make_canonical_scene(m, {0.4}, rng);
  const FilteredDetection det = filtered(scene.detections[0]);
  FitConfig cfg;
  SingleViewProblem problem(evaluator, scene.cams[0].intrinsics, det, cfg);

  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    BodyParams p = scene.gt.view_params(0);
    p.betas += 0.1 * ShapeCoeffs::NullaryExpr([&](int) { return n(rng); });
    p.global_orient += 0.1 * Vec3(n(rng), n(rng), n(rng));
    for (int j = 0; j < kBodyJoints; ++j) {
      p.body_pose.row(j) += 0.05 * Eigen::RowVector3d(n(rng), n(rng), n(rng));
    }
    const VecX x = problem.pack(p, scene.gt.view_translation[0] + 0.05 * Vec3(n(rng), n(rng), n(rng)));
    VecX r(problem.num_residuals());
    MatX analytic(problem.num_residuals(), problem.num_parameters());
    ASSERT_TRUE(problem.evaluate(x, &r, &analytic));
    const MatX numeric = testutil::numeric_jacobian(problem, x);
    EXPECT_LT(testutil::max_relative_deviation(analytic, numeric), 1e-4);
  }
}

TEST(FitSingleView, GroundTruthInitIsAFixedPoint) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.3}, rng);
  FitConfig cfg;
  cfg.shape_prior_weight = 0.0;  // pure 2D loss: ground truth is stationary
  cfg.pose_prior_weight = 0.0;
  MeanInit init;
  init.params = scene.gt.view_params(0);
  init.translation = scene.gt.view_translation[0];
  const ViewFitResult fit = fit_single_view(m, scene.cams[0].intrinsics,
                                            filtered(scene.detections[0]), cfg,
                                            nullptr, &init);
  EXPECT_EQ(fit.diagnostics.accepted_steps, 0);
  EXPECT_EQ(fit.diagnostics.termination, Termination::gradient);
  EXPECT_LT(fit.final_loss_2d, 1e-12);
}

// Synthetic recovery oracle: a noiseless view fitted from the mean init must
// reproject to well under half a pixel RMSE.
TEST(FitSingleView, NoiselessRecoveryFromMeanInit) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.2}, rng);
  FitConfig cfg;
  const FilteredDetection det = filtered(scene.detections[0]);
  const ViewFitResult fit =
      fit_single_view(m, scene.cams[0].intrinsics, det, cfg);

  const Points2 proj = project_checked(keypoints_of(m, fit.params),
                                       fit.camera.intrinsics, fit.camera.rotation,
                                       fit.camera.translation);
  const double rmse = std::sqrt(
      (proj - scene.detections[0].keypoints).rowwise().squaredNorm().mean());
  EXPECT_LT(rmse, 0.5);
  EXPECT_LT(fit.diagnostics.final_cost, 1e-4 * fit.diagnostics.initial_cost);
  EXPECT_LE(fit.diagnostics.final_cost, fit.diagnostics.initial_cost);
}

// A view looking at the body from behind needs the yaw restarts.
TEST(FitSingleView, RecoversViewFromBehind) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {3.1}, rng);
  FitConfig cfg;
  const ViewFitResult fit = fit_single_view(m, scene.cams[0].intrinsics,
                                            filtered(scene.detections[0]), cfg);
  const Points2 proj = project_checked(keypoints_of(m, fit.params),
                                       fit.camera.intrinsics, fit.camera.rotation,
                                       fit.camera.translation);
  const double rmse = std::sqrt(
      (proj - scene.detections[0].keypoints).rowwise().squaredNorm().mean());
  EXPECT_LT(rmse, 0.5);
  EXPECT_NE(fit.init_yaw_offset, 0.0);
}

TEST(FitSingleView, FiveSurvivorsIsUnderConstrained) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.0}, rng);
  Detection2D d = scene.detections[0];
  d.confidence.setZero();
  for (int j = 0; j < 5; ++j) d.confidence(j) = 0.9;
  EXPECT_THROW(fit_single_view(m, scene.cams[0].intrinsics, filtered(d), {}),
               FitError);
}

TEST(ScreenBestView, ArgminAndTieRule) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.0, 0.9, -0.9}, rng);
  StageOneResult stage1;
  std::vector<FilteredDetection> dets;
  for (int i = 0; i < 3; ++i) {
    ViewFitResult v;
    v.view_id = i;
    v.params = scene.gt.view_params(i);
    v.camera = scene.cams[i];
    stage1.views.push_back(v);
    dets.push_back(filtered(scene.detections[i]));
  }
  // perturb detections so losses are (3.0-ish, smallest, middle)
  dets[0].detection.keypoints.array() += 2.0;
  dets[2].detection.keypoints.array() += 1.0;
  const ScreenedBody s = screen_best_view(m, stage1, dets);
  EXPECT_EQ(s.view_index, 1);

  // exact tie: all detections pristine -> loss 0 everywhere -> view 0
  std::vector<FilteredDetection> clean;
  for (int i = 0; i < 3; ++i) clean.push_back(filtered(scene.detections[i]));
  EXPECT_EQ(screen_best_view(m, stage1, clean).view_index, 0);
}

TEST(ScreenBestView, ScaleInvarianceOfArgmin) {
  // scaling every confidence by the same factor scales every loss, the argmin
  // must not move
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.1, 1.2, 2.4}, rng, 0.15, 0.4, 1.5);
  StageOneResult stage1;
  std::vector<FilteredDetection> dets, scaled;
  for (int i = 0; i < 3; ++i) {
    ViewFitResult v;
    v.view_id = i;
    v.params = scene.gt.view_params(i);
    v.camera = scene.cams[i];
    stage1.views.push_back(v);
    Detection2D d = scene.detections[i];
    dets.push_back(filtered(d));
    d.confidence *= 0.5;
    scaled.push_back(filtered(d));
  }
  EXPECT_EQ(screen_best_view(m, stage1, dets).view_index,
            screen_best_view(m, stage1, scaled).view_index);
}

TEST(AssembleCanonical, CopiesPerViewAndSharesBody) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.0, 1.0, 2.0, 3.0}, rng);
  StageOneResult stage1;
  std::vector<FilteredDetection> dets;
  for (int i = 0; i < 4; ++i) {
    ViewFitResult v;
    v.view_id = i;
    v.params = scene.gt.view_params(i);
    v.camera = scene.cams[i];
    stage1.views.push_back(v);
    dets.push_back(filtered(scene.detections[i]));
  }
  const ScreenedBody s = screen_best_view(m, stage1, dets);
  const CanonicalParams cp = assemble_canonical(stage1, s);
  ASSERT_EQ(cp.num_views(), 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(cp.view_global_orient[i], stage1.views[i].params.global_orient);
    EXPECT_EQ(cp.view_translation[i], stage1.views[i].camera.translation);
  }
  EXPECT_EQ(cp.body_pose, s.body_pose);
  EXPECT_EQ(cp.betas, s.betas);

  // equality special case: all stage-1 bodies agree, so the multi-view loss
  // of the assembled parameters equals the sum of per-view losses
  const double multi = loss_2d_multi(m, cp, scene.cams, dets);
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    sum += loss_2d_single(m, stage1.views[i].params, stage1.views[i].camera, dets[i]);
  }
  EXPECT_NEAR(multi, sum, 1e-12 + 1e-12 * sum);
}

TEST(MultiViewProblem, AnalyticJacobianMatchesFiniteDifferences) {
  const BodyModel m = make_toy_model();
  const KeypointEvaluator evaluator(m);
  const CanonicalScene scene = make_canonical_scene(m, {0.0, 1.6, 3.2, -1.6}, rng);
  std::vector<FilteredDetection> dets;
  for (const auto& d : scene.detections) dets.push_back(filtered(d));
  FitConfig cfg;
  StageTwoAnchor anchor;
  anchor.body_pose = scene.gt.body_pose;
  anchor.betas = scene.gt.betas;
  anchor.view_global_orient = scene.gt.view_global_orient;
  MultiViewProblem problem(evaluator, scene.cams, dets, cfg, anchor);

  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    CanonicalParams cp = scene.gt;
    cp.betas += 0.1 * ShapeCoeffs::NullaryExpr([&](int) { return n(rng); });
    for (int j = 0; j < kBodyJoints; ++j) {
      cp.body_pose.row(j) += 0.05 * Eigen::RowVector3d(n(rng), n(rng), n(rng));
    }
    for (int i = 0; i < cp.num_views(); ++i) {
      cp.view_global_orient[i] += 0.05 * Vec3(n(rng), n(rng), n(rng));
      cp.view_translation[i] += 0.05 * Vec3(n(rng), n(rng), n(rng));
    }
    const VecX x = problem.pack(cp);
    VecX r(problem.num_residuals());
    MatX analytic(problem.num_residuals(), problem.num_parameters());
    ASSERT_TRUE(problem.evaluate(x, &r, &analytic));
    const MatX numeric = testutil::numeric_jacobian(problem, x);
    EXPECT_LT(testutil::max_relative_deviation(analytic, numeric), 1e-4);
  }
}

TEST(FitTwoStage, NoiselessFourViewRecovery) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.3, 1.9, 3.3, -1.4}, rng);
  FitConfig cfg;
  const TwoStageResult res = fit_two_stage(m, scene.cams, scene.detections, cfg);

  EXPECT_LT(res.stage2.final_loss_2d, 1e-6);
  Points3 pred = res.stage2.keypoints_camera_frame[0];
  EXPECT_LT(pa_mpjpe_m(pred, scene.gt_keypoints_view0) * 1000.0, 1.0);  // < 1 mm

  // structural sharing: a single body pose and shape for all views
  for (int i = 0; i < res.stage2.params.num_views(); ++i) {
    const BodyParams p = res.stage2.params.view_params(i);
    EXPECT_EQ(p.body_pose, res.stage2.params.body_pose);
    EXPECT_EQ(p.betas, res.stage2.params.betas);
  }
}

TEST(FitMultiView, SingleViewDegeneratesToStageOneRefinement) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.9}, rng);
  FitConfig cfg;
  const FilteredDetection det = filtered(scene.detections[0]);
  const ViewFitResult stage1 =
      fit_single_view(m, scene.cams[0].intrinsics, det, cfg);

  StageOneResult s1;
  s1.views.push_back(stage1);
  std::vector<FilteredDetection> dets = {det};
  const ScreenedBody screened = screen_best_view(m, s1, dets);
  const CanonicalParams init = assemble_canonical(s1, screened);
  const MultiViewFitResult res =
      fit_multi_view(m, init, scene.cams, dets, cfg,
                     StageTwoAnchor::from_stage1(s1, screened));

  // Eq (sum over one view) degenerates to the single-view loss; the anchored
  // stage-2 solve may only improve on the stage-1 total
  EXPECT_LE(res.final_total_loss,
            cfg.alpha * stage1.final_loss_2d + 1e-12);
  EXPECT_LE(res.final_loss_2d, stage1.final_loss_2d + 1e-9);
}

TEST(FitMultiView, GammaZeroTraceIsStrictlyDecreasing) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.0, 2.1, -2.1}, rng, 0.15, 0.4, 2.0);
  FitConfig cfg;
  cfg.gamma = 0.0;
  const TwoStageResult res = fit_two_stage(m, scene.cams, scene.detections, cfg);
  const auto& trace = res.stage2.diagnostics.cost_trace;
  ASSERT_GE(trace.size(), 1u);
  for (size_t i = 1; i < trace.size(); ++i) EXPECT_LT(trace[i], trace[i - 1]);
}

TEST(FitMultiView, InertViewsAreFlaggedAndLeftAtInit) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.2, 1.3, 2.8}, rng);
  FitConfig cfg;
  std::vector<FilteredDetection> dets;
  for (const auto& d : scene.detections) dets.push_back(filtered(d));
  // kill view 1 entirely
  dets[1].filtered_confidence.setZero();
  dets[1].survivors = 0;

  CanonicalParams init = scene.gt;
  init.view_translation[1] += Vec3(0.05, 0, 0);  // wrong init that nothing constrains
  StageTwoAnchor anchor;
  anchor.body_pose = init.body_pose;
  anchor.betas = init.betas;
  anchor.view_global_orient = init.view_global_orient;
  const MultiViewFitResult res =
      fit_multi_view(m, init, scene.cams, dets, cfg, anchor);
  EXPECT_FALSE(res.inert_views[0]);
  EXPECT_TRUE(res.inert_views[1]);
  EXPECT_EQ(res.params.view_translation[1], init.view_translation[1]);
}

TEST(FitMultiView, AllViewsInertIsAnError) {
  const BodyModel m = make_toy_model();
  const CanonicalScene scene = make_canonical_scene(m, {0.0, 1.0}, rng);
  FitConfig cfg;
  std::vector<FilteredDetection> dets;
  for (const auto& d : scene.detections) {
    Detection2D dead = d;
    dead.confidence.setZero();
    dets.push_back(filter_confidence(dead, 0.3));
  }
  StageTwoAnchor anchor;
  anchor.body_pose = scene.gt.body_pose;
  anchor.betas = scene.gt.betas;
  anchor.view_global_orient = scene.gt.view_global_orient;
  EXPECT_THROW(fit_multi_view(m, scene.gt, scene.cams, dets, cfg, anchor), FitError);
}

TEST(FitTwoStage, DeterministicBitIdentical) {
  const BodyModel m = make_toy_model();
  std::mt19937_64 local(777ULL);
  const CanonicalScene scene =
      make_canonical_scene(m, {0.5, 2.0, -2.4}, local, 0.15, 0.4, 1.0);
  FitConfig cfg;
  const TwoStageResult a = fit_two_stage(m, scene.cams, scene.detections, cfg);
  const TwoStageResult b = fit_two_stage(m, scene.cams, scene.detections, cfg);
  EXPECT_EQ(a.stage2.params.betas, b.stage2.params.betas);
  EXPECT_EQ(a.stage2.params.body_pose, b.stage2.params.body_pose);
  for (int i = 0; i < a.stage2.params.num_views(); ++i) {
    EXPECT_EQ(a.stage2.params.view_translation[i], b.stage2.params.view_translation[i]);
    EXPECT_EQ(a.stage2.params.view_global_orient[i], b.stage2.params.view_global_orient[i]);
  }
  EXPECT_EQ(a.stage2.diagnostics.cost_trace, b.stage2.diagnostics.cost_trace);
}
