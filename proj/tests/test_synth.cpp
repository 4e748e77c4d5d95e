#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "canopose/scene_io.hpp"
#include "canopose/synth.hpp"
#include "canopose/toy_model.hpp"

using namespace canopose;

namespace {

bool scenes_bit_identical(const Scene& a, const Scene& b) {
  if (a.seed != b.seed || a.num_views() != b.num_views() ||
      a.has_ground_truth != b.has_ground_truth) {
    return false;
  }
  for (int i = 0; i < a.num_views(); ++i) {
    if (a.cameras[i].translation != b.cameras[i].translation) return false;
    if (a.cameras[i].intrinsics.focal != b.cameras[i].intrinsics.focal) return false;
    if (a.detections[i].keypoints != b.detections[i].keypoints) return false;
    if (a.detections[i].confidence != b.detections[i].confidence) return false;
  }
  if (a.has_ground_truth) {
    if (a.ground_truth.betas != b.ground_truth.betas) return false;
    if (a.ground_truth.body_pose != b.ground_truth.body_pose) return false;
    for (int i = 0; i < a.num_views(); ++i) {
      if (a.ground_truth.view_global_orient[i] != b.ground_truth.view_global_orient[i] ||
          a.ground_truth.view_translation[i] != b.ground_truth.view_translation[i]) {
        return false;
      }
    }
    if (a.gt_keypoints != b.gt_keypoints) return false;
  }
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST(GenerateScene, NoiselessDetectionsAreExactProjections) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 11;
  const Scene s = generate_scene(m, cfg);
  ASSERT_EQ(s.num_views(), 4);
  for (int i = 0; i < s.num_views(); ++i) {
    const Points3 kp = keypoints_of(m, s.ground_truth.view_params(i));
    const Points2 proj = project_checked(kp, s.cameras[i].intrinsics,
                                         s.cameras[i].rotation,
                                         s.cameras[i].translation);
    EXPECT_EQ(s.detections[i].keypoints, proj);
    EXPECT_GE(s.detections[i].confidence.minCoeff(), 0.7);
  }
}

TEST(GenerateScene, ZeroLossAtGroundTruthWithoutOptimizer) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 29;
  const Scene s = generate_scene(m, cfg);
  std::vector<FilteredDetection> dets;
  for (const auto& d : s.detections) dets.push_back(filter_confidence(d, 0.3));
  EXPECT_EQ(loss_2d_multi(m, s.ground_truth, s.cameras, dets), 0.0);
}

TEST(GenerateScene, SameSeedBitIdentical) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 77;
  cfg.pixel_noise_std = 2.0;
  cfg.occlusion_rate = 0.2;
  EXPECT_TRUE(scenes_bit_identical(generate_scene(m, cfg), generate_scene(m, cfg)));
}

TEST(GenerateScene, DifferentSeedsDiffer) {
  const BodyModel m = make_toy_model();
  SceneConfig a, b;
  a.seed = 1;
  b.seed = 2;
  EXPECT_FALSE(scenes_bit_identical(generate_scene(m, a), generate_scene(m, b)));
}

TEST(GenerateScene, FullOcclusionLeavesNoSurvivorsAtDefaultLambda) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 5;
  cfg.occlusion_rate = 1.0;
  const Scene s = generate_scene(m, cfg);
  for (const auto& d : s.detections) {
    EXPECT_LT(d.confidence.maxCoeff(), 0.3);
    EXPECT_EQ(filter_confidence(d, 0.3).survivors, 0);
  }
}

TEST(GenerateScene, AllDepthsPositiveInEveryView) {
  const BodyModel m = make_toy_model();
  for (uint64_t seed : {3ULL, 14ULL, 159ULL}) {
    SceneConfig cfg;
    cfg.seed = seed;
    const Scene s = generate_scene(m, cfg);
    for (int i = 0; i < s.num_views(); ++i) {
      const Points3 kp = keypoints_of(m, s.ground_truth.view_params(i));
      for (Eigen::Index j = 0; j < kp.rows(); ++j) {
        EXPECT_GT(kp(j, 2) + s.cameras[i].translation.z(), 0.0);
      }
    }
  }
}

TEST(GenerateScene, ImpossibleRigGeometryIsAnError) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.rig_radius = 1e-4;  // cameras inside the body even after widening
  cfg.rig_height = 0.0;
  EXPECT_THROW(generate_scene(m, cfg), GeometryError);
}

TEST(SceneIO, RoundTripIsBitExact) {
  const BodyModel m = make_toy_model();
  const auto path = temp_file("canopose_scene_roundtrip.json");
  for (int i = 0; i < 100; ++i) {
    SceneConfig cfg;
    cfg.seed = 1000 + i;
    cfg.pixel_noise_std = (i % 3) * 1.5;
    cfg.occlusion_rate = (i % 5) * 0.2;
    const Scene s = generate_scene(m, cfg);
    write_scene(s, path.string());
    const Scene back = read_scene(path.string());
    ASSERT_TRUE(scenes_bit_identical(s, back)) << "seed " << cfg.seed;
  }
  std::filesystem::remove(path);
}

TEST(SceneIO, TruncatedFileIsSchemaErrorWithoutPartialScene) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 8;
  const Scene s = generate_scene(m, cfg);
  const auto path = temp_file("canopose_scene_truncated.json");
  write_scene(s, path.string());
  // truncate to half
  std::string text;
  {
    std::ifstream in(path);
    std::getline(in, text, '\0');
  }
  std::ofstream(path) << text.substr(0, text.size() / 2);
  EXPECT_THROW(read_scene(path.string()), SchemaError);
  std::filesystem::remove(path);
}

TEST(SceneIO, GroundTruthFreeVariantLoadsFlagged) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 21;
  const Scene s = generate_scene(m, cfg);
  nlohmann::json j = scene_to_json(s);
  j.erase("ground_truth");
  const Scene back = scene_from_json(j);
  EXPECT_FALSE(back.has_ground_truth);
  EXPECT_EQ(back.num_views(), s.num_views());
  EXPECT_EQ(back.detections[2].keypoints, s.detections[2].keypoints);
}

TEST(AblationSuite, SelectionFollowsSurvivorCounts) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 4242;
  cfg.occlusion_rate = 0.45;
  cfg.pixel_noise_std = 1.0;
  const double lambda = 0.3;
  const Scene full = generate_scene(m, cfg);
  std::vector<int> survivors;
  for (const auto& d : full.detections) {
    survivors.push_back(filter_confidence(d, lambda).survivors);
  }

  const auto batch = ablation_suite(
      m, cfg,
      {AblationVariant::all_views, AblationVariant::min_max, AblationVariant::min_2},
      lambda);
  ASSERT_EQ(batch.size(), 3u);

  EXPECT_EQ(batch[0].kept_views, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_TRUE(scenes_bit_identical(batch[0].scene, full));  // identity variant

  // expected min_max / min_2 from the documented rule
  int max_view = 0, min_view = 0;
  for (int i = 1; i < 4; ++i) {
    if (survivors[i] > survivors[max_view]) max_view = i;
    if (survivors[i] < survivors[min_view]) min_view = i;
  }
  std::vector<std::pair<int, int>> order;
  for (int i = 0; i < 4; ++i) order.emplace_back(survivors[i], i);
  std::sort(order.begin(), order.end());
  if (min_view == max_view) min_view = order[1].second;

  std::vector<int> expected_minmax = {max_view, min_view};
  std::sort(expected_minmax.begin(), expected_minmax.end());
  EXPECT_EQ(batch[1].kept_views, expected_minmax);

  std::vector<int> expected_min2 = {order[0].second, order[1].second};
  std::sort(expected_min2.begin(), expected_min2.end());
  EXPECT_EQ(batch[2].kept_views, expected_min2);

  // subset scenes keep per-view data and rebase the reference frame
  const auto& mm = batch[1];
  ASSERT_EQ(mm.scene.num_views(), 2);
  EXPECT_EQ(mm.scene.detections[0].view_id, mm.kept_views[0]);
  const Points3 kp0 = keypoints_of(m, mm.scene.ground_truth.view_params(0));
  Points3 expected_gt = kp0;
  expected_gt.rowwise() += mm.scene.ground_truth.view_translation[0].transpose();
  EXPECT_EQ(mm.scene.gt_keypoints, expected_gt);
}

TEST(AblationSuite, TieBreaksDeterministically) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.seed = 7;  // zero occlusion: every view has all 24 survivors
  const auto batch = ablation_suite(
      m, cfg, {AblationVariant::min_max, AblationVariant::min_2});
  EXPECT_EQ(batch[0].kept_views, (std::vector<int>{0, 1}));
  EXPECT_EQ(batch[1].kept_views, (std::vector<int>{0, 1}));
}

TEST(AblationSuite, FewerThanTwoViewsIsAnError) {
  const BodyModel m = make_toy_model();
  SceneConfig cfg;
  cfg.views = 1;
  EXPECT_THROW(ablation_suite(m, cfg, {AblationVariant::all_views}), SchemaError);
}
