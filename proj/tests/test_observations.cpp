#include <gtest/gtest.h>

#include <random>

#include "canopose/observations.hpp"
#include "canopose/toy_model.hpp"

using namespace canopose;

namespace {

std::mt19937_64 rng(99173ULL);

BodyParams random_params(double pose_std = 0.2) {
  std::normal_distribution<double> n(0.0, pose_std);
  BodyParams p;
  for (int i = 0; i < kShapeCoeffs; ++i) p.betas(i) = 0.3 * n(rng);
  p.global_orient = Vec3(n(rng), n(rng), n(rng));
  for (int j = 0; j < kBodyJoints; ++j) {
    p.body_pose.row(j) = Eigen::RowVector3d(n(rng), n(rng), n(rng));
  }
  return p;
}

CameraView default_camera() {
  CameraView cam;
  cam.translation = Vec3(0, 0, 5);
  return cam;
}

// Detections that reproject exactly under (params, cam), all confidence 1.
Detection2D exact_detection(const BodyModel& model, const BodyParams& params,
                            const CameraView& cam, int view_id = 0) {
  Detection2D d;
  d.view_id = view_id;
  d.keypoints = project_checked(keypoints_of(model, params), cam.intrinsics,
                                cam.rotation, cam.translation);
  d.confidence = VecX::Ones(model.n_keypoints);
  return d;
}

}  // namespace

TEST(FilterConfidence, LambdaZeroKeepsEverything) {
  Detection2D d;
  d.keypoints = Points2::Zero(3, 2);
  d.confidence = VecX(3);
  d.confidence << 0.9, 0.2, 0.5;
  const FilteredDetection f = filter_confidence(d, 0.0);
  EXPECT_EQ(f.filtered_confidence, d.confidence);
  EXPECT_EQ(f.survivors, 3);
}

TEST(FilterConfidence, LambdaOneDropsAllBelowOne) {
  Detection2D d;
  d.keypoints = Points2::Zero(3, 2);
  d.confidence = VecX(3);
  d.confidence << 0.9, 0.2, 0.5;
  const FilteredDetection f = filter_confidence(d, 1.0);
  EXPECT_EQ(f.filtered_confidence, VecX::Zero(3));
  EXPECT_EQ(f.survivors, 0);
}

TEST(FilterConfidence, DirectRuleApplication) {
  Detection2D d;
  d.keypoints = Points2::Zero(3, 2);
  d.confidence = VecX(3);
  d.confidence << 0.9, 0.2, 0.5;
  const FilteredDetection f = filter_confidence(d, 0.3);
  VecX expected(3);
  expected << 0.9, 0.0, 0.5;
  EXPECT_EQ(f.filtered_confidence, expected);
  EXPECT_EQ(f.survivors, 2);
}

TEST(FilterConfidence, BoundaryKeepsExactlyLambda) {
  Detection2D d;
  d.keypoints = Points2::Zero(1, 2);
  d.confidence = VecX::Constant(1, 0.3);
  EXPECT_EQ(filter_confidence(d, 0.3).survivors, 1);  // c >= lambda survives
}

TEST(FilterConfidence, RejectsOutOfRangeConfidence) {
  Detection2D d;
  d.keypoints = Points2::Zero(1, 2);
  d.confidence = VecX::Constant(1, 1.5);
  EXPECT_THROW(filter_confidence(d, 0.3), SchemaError);
}

TEST(Residuals, ExactReprojectionIsZero) {
  const BodyModel m = make_toy_model();
  const BodyParams p = random_params();
  const CameraView cam = default_camera();
  const FilteredDetection f = filter_confidence(exact_detection(m, p, cam), 0.3);
  const VecX r = reprojection_residuals(m, p, cam, f);
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(loss_2d_single(m, p, cam, f), 1e-20);
}

// Hand computation of the weighting rule: confidence 0.25 and pixel error
// (4,0) gives residual sqrt(0.25)*(4,0) = (2,0), squared norm 4 = 0.25*16.
TEST(Residuals, SqrtWeightingRule) {
  const BodyModel m = make_toy_model();
  const BodyParams p;
  const CameraView cam = default_camera();
  Detection2D d = exact_detection(m, p, cam);
  d.confidence = VecX::Zero(m.n_keypoints);
  d.confidence(7) = 0.25;
  d.keypoints(7, 0) += 4.0;  // 4 px error in u
  const FilteredDetection f = filter_confidence(d, 0.1);
  const VecX r = reprojection_residuals(m, p, cam, f);
  EXPECT_NEAR(r(2 * 7), 2.0, 1e-12);
  EXPECT_NEAR(r(2 * 7 + 1), 0.0, 1e-12);
  EXPECT_NEAR(r.squaredNorm(), 4.0, 1e-12);
  EXPECT_NEAR(loss_2d_single(m, p, cam, f), 4.0, 1e-12);
}

TEST(Residuals, AllZeroWeightsGiveZeroResidualsRegardlessOfPose) {
  const BodyModel m = make_toy_model();
  const CameraView cam = default_camera();
  Detection2D d;
  d.keypoints = Points2::Zero(m.n_keypoints, 2);
  d.confidence = VecX::Constant(m.n_keypoints, 0.1);
  const FilteredDetection f = filter_confidence(d, 0.5);
  ASSERT_EQ(f.survivors, 0);
  // even a pose that puts the body behind the camera is fine: nothing survives
  BodyParams p;
  CameraView behind = cam;
  behind.translation = Vec3(0, 0, -5);
  EXPECT_EQ(reprojection_residuals(m, p, behind, f).squaredNorm(), 0.0);
}

TEST(Residuals, SurvivingKeypointBehindCameraThrowsWithIndex) {
  const BodyModel m = make_toy_model();
  const BodyParams p;
  CameraView cam = default_camera();
  const FilteredDetection f = filter_confidence(exact_detection(m, p, cam), 0.3);
  cam.translation = Vec3(0, 0, -5);
  try {
    reprojection_residuals(m, p, cam, f);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("keypoint"), std::string::npos);
  }
}

TEST(Loss2dSingle, EqualsResidualSquaredNorm) {
  const BodyModel m = make_toy_model();
  const CameraView cam = default_camera();
  std::normal_distribution<double> noise(0.0, 3.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const BodyParams gt = random_params();
    Detection2D d = exact_detection(m, gt, cam);
    for (Eigen::Index j = 0; j < d.keypoints.rows(); ++j) {
      d.keypoints(j, 0) += noise(rng);
      d.keypoints(j, 1) += noise(rng);
      d.confidence(j) = u01(rng);
    }
    const FilteredDetection f = filter_confidence(d, 0.3);
    const BodyParams eval_at = random_params();
    const double loss = loss_2d_single(m, eval_at, cam, f);
    const double sq = reprojection_residuals(m, eval_at, cam, f).squaredNorm();
    EXPECT_NEAR(loss, sq, 1e-12 * std::max(1.0, sq));
  }
}

TEST(Loss2dSingle, LinearInConfidenceWeights) {
  const BodyModel m = make_toy_model();
  const CameraView cam = default_camera();
  const BodyParams gt = random_params();
  Detection2D d = exact_detection(m, gt, cam);
  d.keypoints.array() += 2.0;
  d.confidence = VecX::Constant(m.n_keypoints, 0.4);
  const double base = loss_2d_single(m, gt, cam, filter_confidence(d, 0.1));
  d.confidence = VecX::Constant(m.n_keypoints, 0.8);
  const double doubled = loss_2d_single(m, gt, cam, filter_confidence(d, 0.1));
  EXPECT_NEAR(doubled, 2.0 * base, 1e-9 * base);
}

namespace {

struct MultiViewFixture {
  BodyModel model = make_toy_model();
  CanonicalParams canonical;
  std::vector<CameraView> cams;
  std::vector<FilteredDetection> dets;

  explicit MultiViewFixture(int n_views, bool with_noise) {
    canonical.betas = random_params().betas;
    canonical.body_pose = random_params().body_pose;
    std::normal_distribution<double> noise(0.0, 2.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < n_views; ++i) {
      BodyParams p;
      p.global_orient = Vec3(0.1 * i, 0.7 * i, -0.2 * i);
      canonical.view_global_orient.push_back(p.global_orient);
      canonical.view_translation.push_back(Vec3(0.1 * i, -0.05 * i, 5.0 + 0.3 * i));
      CameraView cam;
      cam.translation = canonical.view_translation.back();
      p.betas = canonical.betas;
      p.body_pose = canonical.body_pose;
      Detection2D d;
      d.view_id = i;
      d.keypoints = project_checked(keypoints_of(model, p), cam.intrinsics,
                                    cam.rotation, cam.translation);
      d.confidence = VecX::Ones(model.n_keypoints);
      if (with_noise) {
        for (Eigen::Index j = 0; j < d.keypoints.rows(); ++j) {
          d.keypoints(j, 0) += noise(rng);
          d.keypoints(j, 1) += noise(rng);
          d.confidence(j) = u01(rng);
        }
      }
      cams.push_back(cam);
      dets.push_back(filter_confidence(d, 0.3));
    }
  }
};

}  // namespace

TEST(Loss2dMulti, AllViewsExactIsZero) {
  MultiViewFixture fx(4, /*with_noise=*/false);
  EXPECT_LT(loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets), 1e-18);
}

TEST(Loss2dMulti, AdditivityOfPerViewLosses) {
  MultiViewFixture fx(2, /*with_noise=*/false);
  fx.dets[1].detection.keypoints(3, 0) += 2.0;  // loss 4 at confidence 1
  const double total = loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets);
  EXPECT_NEAR(total, 4.0, 1e-10);
}

TEST(Loss2dMulti, EqualsSumOfSinglesOnRandomScenes) {
  for (int trial = 0; trial < 20; ++trial) {
    MultiViewFixture fx(3, /*with_noise=*/true);
    const double multi = loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
      CameraView cam = fx.cams[i];
      cam.translation = fx.canonical.view_translation[i];
      sum += loss_2d_single(fx.model, fx.canonical.view_params(i), cam, fx.dets[i]);
    }
    EXPECT_NEAR(multi, sum, 1e-12 * std::max(1.0, sum));
  }
}

TEST(Loss2dMulti, InvariantUnderViewPermutation) {
  MultiViewFixture fx(4, /*with_noise=*/true);
  const double base = loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets);

  std::vector<int> perm = {2, 0, 3, 1};
  CanonicalParams cp;
  cp.betas = fx.canonical.betas;
  cp.body_pose = fx.canonical.body_pose;
  std::vector<CameraView> cams;
  std::vector<FilteredDetection> dets;
  for (int i : perm) {
    cp.view_global_orient.push_back(fx.canonical.view_global_orient[i]);
    cp.view_translation.push_back(fx.canonical.view_translation[i]);
    cams.push_back(fx.cams[i]);
    dets.push_back(fx.dets[i]);
  }
  const double permuted = loss_2d_multi(fx.model, cp, cams, dets);
  EXPECT_NEAR(permuted, base, 1e-9 * std::max(1.0, base));
}

TEST(Loss2dMulti, LambdaAboveAllConfidencesGivesZero) {
  MultiViewFixture fx(3, /*with_noise=*/true);
  for (auto& d : fx.dets) {
    d = filter_confidence(d.detection, 1.0);
  }
  EXPECT_EQ(loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets), 0.0);
}

TEST(Loss2dMulti, MismatchedViewListsThrow) {
  MultiViewFixture fx(3, /*with_noise=*/false);
  fx.dets.pop_back();
  EXPECT_THROW(loss_2d_multi(fx.model, fx.canonical, fx.cams, fx.dets), SchemaError);
}
