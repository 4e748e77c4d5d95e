#pragma once

#include <random>
#include <string>
#include <vector>

#include "canopose/body_model.hpp"
#include "canopose/observations.hpp"

namespace canopose {

// Ground-truth scene generation: a camera ring around a randomly posed body,
// exact projections, then pixel noise and occlusion with degraded
// confidences. Everything is a pure function of (model, config).
struct SceneConfig {
  int views = 4;
  double rig_radius = 4.0;    // meters
  double rig_height = 0.8;    // meters above the body centroid
  double pose_std = 0.15;     // radians per axis-angle component
  double shape_std = 0.5;
  double pixel_noise_std = 0.0;
  double occlusion_rate = 0.0;         // per keypoint per view
  double conf_visible_min = 0.7;
  double conf_visible_max = 1.0;
  double conf_occluded_min = 0.0;      // kept below the default lambda = 0.3
  double conf_occluded_max = 0.25;
  double focal_length = 1000.0;        // pixels
  double image_size = 1000.0;          // nominal square frame, principal at center
  uint64_t seed = 1;

  void validate() const {
    if (views < 1) throw SchemaError("SceneConfig: views must be >= 1");
    if (!(rig_radius > 0.0)) throw SchemaError("SceneConfig: rig_radius must be > 0");
    if (pose_std < 0.0 || shape_std < 0.0 || pixel_noise_std < 0.0) {
      throw SchemaError("SceneConfig: stds must be >= 0");
    }
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0) {
      throw SchemaError("SceneConfig: occlusion_rate must lie in [0,1]");
    }
    auto range_ok = [](double lo, double hi) {
      return lo >= 0.0 && hi <= 1.0 && lo <= hi;
    };
    if (!range_ok(conf_visible_min, conf_visible_max) ||
        !range_ok(conf_occluded_min, conf_occluded_max)) {
      throw SchemaError("SceneConfig: confidence ranges must be sub-ranges of [0,1]");
    }
    if (!(focal_length > 0.0) || !(image_size > 0.0)) {
      throw SchemaError("SceneConfig: camera parameters must be positive");
    }
  }

  CameraIntrinsics intrinsics() const {
    CameraIntrinsics k;
    k.focal = focal_length;
    k.principal = Vec2(image_size / 2.0, image_size / 2.0);
    return k;
  }
};

struct Scene {
  uint64_t seed = 0;
  SceneConfig config;
  std::vector<CameraView> cameras;       // R = identity, t = canonical t^i
  std::vector<Detection2D> detections;
  bool has_ground_truth = false;
  CanonicalParams ground_truth;          // per-view theta_g^i, t^i; shared body
  Points3 gt_keypoints;                  // first view's camera frame, meters

  int num_views() const { return static_cast<int>(cameras.size()); }
};

namespace detail {

// world -> camera rotation for an eye looking at a target, y-up world,
// camera convention x right / y down / z forward.
inline Mat3 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(Vec3::UnitY());
  const double n = right.norm();
  if (n < 1e-9) {
    throw GeometryError("look_at: camera directly above the target");
  }
  right /= n;
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return r;
}

}  // namespace detail

/// Deterministic scene synthesis. Cameras sit on a ring of the configured
/// radius and height looking at the body centroid; each view is rebaked into
/// the identity-rotation convention (theta_g^i absorbs the camera rotation,
/// t^i the full translation). Occluded keypoints draw their confidence from
/// the occluded range and are perturbed with 10x pixel noise. If the ring
/// geometry puts keypoints behind a camera the radius widens up to 5 times.
inline Scene generate_scene(const BodyModel& model, const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform01(0.0, 1.0);

  Scene scene;
  scene.seed = cfg.seed;
  scene.config = cfg;
  scene.has_ground_truth = true;

  // fixed draw order: shape, body pose, global yaw
  ShapeCoeffs betas;
  for (int s = 0; s < kShapeCoeffs; ++s) betas(s) = cfg.shape_std * normal(rng);
  BodyPose body_pose;
  for (int j = 0; j < kBodyJoints; ++j) {
    for (int c = 0; c < 3; ++c) body_pose(j, c) = cfg.pose_std * normal(rng);
  }
  const double yaw = 2.0 * kPi * uniform01(rng);

  BodyParams gt_world;
  gt_world.betas = betas;
  gt_world.body_pose = body_pose;
  gt_world.global_orient = Vec3(0.0, yaw, 0.0);
  const Mat3 r_world = axis_angle_to_matrix(gt_world.global_orient);
  const Points3 keypoints_world = keypoints_of(model, gt_world);
  const Vec3 centroid = keypoints_world.colwise().mean().transpose();
  const Vec3 rest_root = shaped_rest(model, betas).joints.row(0).transpose();

  scene.ground_truth.betas = betas;
  scene.ground_truth.body_pose = body_pose;

  double radius = cfg.rig_radius;
  bool placed = false;
  for (int attempt = 0; attempt < 5 && !placed; ++attempt, radius *= 1.4) {
    std::vector<Mat3> rotations;
    std::vector<Vec3> translations;
    bool ok = true;
    for (int i = 0; i < cfg.views && ok; ++i) {
      const double azimuth = 2.0 * kPi * i / cfg.views;
      const Vec3 eye = centroid + Vec3(radius * std::sin(azimuth), cfg.rig_height,
                                       radius * std::cos(azimuth));
      const Mat3 r_cam = detail::look_at(eye, centroid);
      const Vec3 t_cam = -r_cam * eye;
      for (Eigen::Index m = 0; m < keypoints_world.rows(); ++m) {
        const Vec3 p = r_cam * keypoints_world.row(m).transpose() + t_cam;
        if (!(p.z() > 0.1)) {
          ok = false;
          break;
        }
      }
      rotations.push_back(r_cam);
      translations.push_back(t_cam);
    }
    if (!ok) continue;
    placed = true;
    scene.ground_truth.view_global_orient.clear();
    scene.ground_truth.view_translation.clear();
    for (int i = 0; i < cfg.views; ++i) {
      scene.ground_truth.view_global_orient.push_back(
          matrix_to_axis_angle(rotations[i] * r_world));
      scene.ground_truth.view_translation.push_back(
          rotations[i] * rest_root + translations[i] - rest_root);
    }
  }
  if (!placed) {
    throw GeometryError("generate_scene: impossible rig geometry (keypoints "
                        "behind a camera even after widening the ring)");
  }

  for (int i = 0; i < cfg.views; ++i) {
    CameraView cam;
    cam.intrinsics = cfg.intrinsics();
    cam.translation = scene.ground_truth.view_translation[i];
    const Points3 kp = keypoints_of(model, scene.ground_truth.view_params(i));
    Points2 pixels =
        project_checked(kp, cam.intrinsics, cam.rotation, cam.translation);

    Detection2D det;
    det.view_id = i;
    det.confidence.resize(model.n_keypoints);
    // fixed per-keypoint draw order: occlusion coin, confidence, 2 normals
    for (int m = 0; m < model.n_keypoints; ++m) {
      const bool occluded = uniform01(rng) < cfg.occlusion_rate;
      if (occluded) {
        det.confidence(m) =
            cfg.conf_occluded_min +
            (cfg.conf_occluded_max - cfg.conf_occluded_min) * uniform01(rng);
        pixels(m, 0) += 10.0 * cfg.pixel_noise_std * normal(rng);
        pixels(m, 1) += 10.0 * cfg.pixel_noise_std * normal(rng);
      } else {
        det.confidence(m) =
            cfg.conf_visible_min +
            (cfg.conf_visible_max - cfg.conf_visible_min) * uniform01(rng);
        pixels(m, 0) += cfg.pixel_noise_std * normal(rng);
        pixels(m, 1) += cfg.pixel_noise_std * normal(rng);
      }
    }
    det.keypoints = std::move(pixels);
    scene.cameras.push_back(cam);
    scene.detections.push_back(std::move(det));
  }

  scene.gt_keypoints = keypoints_of(model, scene.ground_truth.view_params(0));
  scene.gt_keypoints.rowwise() += scene.ground_truth.view_translation[0].transpose();
  return scene;
}

enum class AblationVariant { all_views, min_max, min_2 };

inline const char* ablation_variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::all_views: return "all_views";
    case AblationVariant::min_max: return "min_max";
    case AblationVariant::min_2: return "min_2";
  }
  return "unknown";
}

inline AblationVariant ablation_variant_from_name(const std::string& name) {
  if (name == "all_views") return AblationVariant::all_views;
  if (name == "min_max") return AblationVariant::min_max;
  if (name == "min_2") return AblationVariant::min_2;
  throw SchemaError("unknown ablation variant '" + name + "'");
}

struct AblationScene {
  AblationVariant variant;
  std::vector<int> kept_views;  // original indices, ascending
  Scene scene;
};

namespace detail {

inline Scene subset_scene(const BodyModel& model, const Scene& full,
                          const std::vector<int>& keep) {
  Scene out;
  out.seed = full.seed;
  out.config = full.config;
  out.config.views = static_cast<int>(keep.size());
  out.has_ground_truth = full.has_ground_truth;
  out.ground_truth.betas = full.ground_truth.betas;
  out.ground_truth.body_pose = full.ground_truth.body_pose;
  for (int i : keep) {
    out.cameras.push_back(full.cameras[i]);
    out.detections.push_back(full.detections[i]);
    if (full.has_ground_truth) {
      out.ground_truth.view_global_orient.push_back(full.ground_truth.view_global_orient[i]);
      out.ground_truth.view_translation.push_back(full.ground_truth.view_translation[i]);
    }
  }
  if (full.has_ground_truth) {
    out.gt_keypoints = keypoints_of(model, out.ground_truth.view_params(0));
    out.gt_keypoints.rowwise() += out.ground_truth.view_translation[0].transpose();
  }
  return out;
}

}  // namespace detail

/// View-subset scenes mirroring the visible-keypoint ablation: min_max keeps
/// the views with the most and the fewest surviving keypoints, min_2 the two
/// fewest, counted after confidence filtering at lambda. Ties break to the
/// lower view index; the kept views stay in original order.
inline std::vector<AblationScene> ablation_suite(
    const BodyModel& model, const SceneConfig& base_cfg,
    const std::vector<AblationVariant>& variants, double lambda = 0.3) {
  if (base_cfg.views < 2) {
    throw SchemaError("ablation_suite: need at least 2 views");
  }
  const Scene full = generate_scene(model, base_cfg);
  std::vector<int> survivors;
  for (const Detection2D& d : full.detections) {
    survivors.push_back(filter_confidence(d, lambda).survivors);
  }

  std::vector<AblationScene> out;
  for (AblationVariant v : variants) {
    std::vector<int> keep;
    if (v == AblationVariant::all_views) {
      for (int i = 0; i < full.num_views(); ++i) keep.push_back(i);
    } else {
      // ascending by (count, index); max = last strictly-greatest from the front
      std::vector<std::pair<int, int>> order;
      for (int i = 0; i < full.num_views(); ++i) order.emplace_back(survivors[i], i);
      std::sort(order.begin(), order.end());
      if (v == AblationVariant::min_2) {
        keep = {order[0].second, order[1].second};
      } else {
        int max_view = 0;
        for (int i = 1; i < full.num_views(); ++i) {
          if (survivors[i] > survivors[max_view]) max_view = i;
        }
        int min_view = order[0].second;
        if (min_view == max_view) min_view = order[1].second;
        keep = {max_view, min_view};
      }
      std::sort(keep.begin(), keep.end());
    }
    out.push_back({v, keep, detail::subset_scene(model, full, keep)});
  }
  return out;
}

}  // namespace canopose
