#pragma once

#include <fstream>
#include <string>

#include "canopose/json_util.hpp"
#include "canopose/synth.hpp"

namespace canopose {

inline constexpr int kSceneSchemaVersion = 1;

inline nlohmann::json scene_config_to_json(const SceneConfig& c) {
  return {
      {"views", c.views},
      {"rig_radius", c.rig_radius},
      {"rig_height", c.rig_height},
      {"pose_std", c.pose_std},
      {"shape_std", c.shape_std},
      {"pixel_noise_std", c.pixel_noise_std},
      {"occlusion_rate", c.occlusion_rate},
      {"conf_visible_min", c.conf_visible_min},
      {"conf_visible_max", c.conf_visible_max},
      {"conf_occluded_min", c.conf_occluded_min},
      {"conf_occluded_max", c.conf_occluded_max},
      {"focal_length", c.focal_length},
      {"image_size", c.image_size},
      {"seed", c.seed},
  };
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.views = j.value("views", c.views);
  c.rig_radius = j.value("rig_radius", c.rig_radius);
  c.rig_height = j.value("rig_height", c.rig_height);
  c.pose_std = j.value("pose_std", c.pose_std);
  c.shape_std = j.value("shape_std", c.shape_std);
  c.pixel_noise_std = j.value("pixel_noise_std", c.pixel_noise_std);
  c.occlusion_rate = j.value("occlusion_rate", c.occlusion_rate);
  c.conf_visible_min = j.value("conf_visible_min", c.conf_visible_min);
  c.conf_visible_max = j.value("conf_visible_max", c.conf_visible_max);
  c.conf_occluded_min = j.value("conf_occluded_min", c.conf_occluded_min);
  c.conf_occluded_max = j.value("conf_occluded_max", c.conf_occluded_max);
  c.focal_length = j.value("focal_length", c.focal_length);
  c.image_size = j.value("image_size", c.image_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

inline nlohmann::json canonical_to_json(const CanonicalParams& cp) {
  nlohmann::json views = nlohmann::json::array();
  for (int i = 0; i < cp.num_views(); ++i) {
    views.push_back({{"global_orient", jsonu::vec3(cp.view_global_orient[i])},
                     {"translation", jsonu::vec3(cp.view_translation[i])}});
  }
  return {{"betas", jsonu::vector(cp.betas)},
          {"body_pose", jsonu::points(cp.body_pose)},
          {"views", std::move(views)}};
}

inline CanonicalParams canonical_from_json(const nlohmann::json& j) {
  CanonicalParams cp;
  const VecX betas = jsonu::vector(jsonu::need(j, "betas"), "betas");
  if (betas.size() != kShapeCoeffs) throw SchemaError("canonical: betas must have 10 entries");
  cp.betas = betas;
  const MatX pose = jsonu::points<Points3>(jsonu::need(j, "body_pose"), "body_pose");
  if (pose.rows() != kBodyJoints) throw SchemaError("canonical: body_pose must have 23 rows");
  cp.body_pose = pose;
  for (const auto& v : jsonu::need(j, "views")) {
    cp.view_global_orient.push_back(jsonu::vec3(jsonu::need(v, "global_orient"), "global_orient"));
    cp.view_translation.push_back(jsonu::vec3(jsonu::need(v, "translation"), "translation"));
  }
  cp.validate();
  return cp;
}

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json views = nlohmann::json::array();
  for (int i = 0; i < s.num_views(); ++i) {
    views.push_back({
        {"view_id", s.detections[i].view_id},
        {"camera",
         {{"focal", s.cameras[i].intrinsics.focal},
          {"cx", s.cameras[i].intrinsics.principal.x()},
          {"cy", s.cameras[i].intrinsics.principal.y()},
          {"translation", jsonu::vec3(s.cameras[i].translation)}}},
        {"keypoints", jsonu::points(s.detections[i].keypoints)},
        {"confidence", jsonu::vector(s.detections[i].confidence)},
    });
  }
  nlohmann::json j = {{"schema_version", kSceneSchemaVersion},
                      {"seed", s.seed},
                      {"config", scene_config_to_json(s.config)},
                      {"views", std::move(views)}};
  if (s.has_ground_truth) {
    j["ground_truth"] = {{"canonical", canonical_to_json(s.ground_truth)},
                         {"keypoints_view0", jsonu::points(s.gt_keypoints)}};
  }
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  if (jsonu::need(j, "schema_version").get<int>() != kSceneSchemaVersion) {
    throw SchemaError("scene: unsupported schema_version");
  }
  Scene s;
  s.seed = jsonu::need(j, "seed").get<uint64_t>();
  s.config = scene_config_from_json(jsonu::need(j, "config"));
  for (const auto& v : jsonu::need(j, "views")) {
    CameraView cam;
    const auto& ck = jsonu::need(v, "camera");
    cam.intrinsics.focal = jsonu::need(ck, "focal").get<double>();
    cam.intrinsics.principal =
        Vec2(jsonu::need(ck, "cx").get<double>(), jsonu::need(ck, "cy").get<double>());
    cam.intrinsics.validate();
    cam.translation = jsonu::vec3(jsonu::need(ck, "translation"), "translation");
    Detection2D det;
    det.view_id = jsonu::need(v, "view_id").get<int>();
    det.keypoints = jsonu::points<Points2>(jsonu::need(v, "keypoints"), "keypoints");
    det.confidence = jsonu::vector(jsonu::need(v, "confidence"), "confidence");
    det.validate();
    s.cameras.push_back(cam);
    s.detections.push_back(std::move(det));
  }
  if (j.contains("ground_truth")) {
    s.has_ground_truth = true;
    const auto& gt = j.at("ground_truth");
    s.ground_truth = canonical_from_json(jsonu::need(gt, "canonical"));
    if (s.ground_truth.num_views() != s.num_views()) {
      throw SchemaError("scene: ground-truth view count mismatch");
    }
    s.gt_keypoints = jsonu::points<Points3>(jsonu::need(gt, "keypoints_view0"),
                                            "keypoints_view0");
  }
  return s;
}

/// Lossless scene round-trip: doubles serialize with shortest-round-trip
/// formatting, so read(write(s)) reproduces every numeric field bit-exactly.
inline void write_scene(const Scene& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("write_scene: cannot open '" + path + "'");
  out << scene_to_json(s).dump(1) << "\n";
}

inline Scene read_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("read_scene: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("read_scene: malformed JSON in '" + path + "': " + e.what());
  }
  return scene_from_json(j);
}

}  // namespace canopose
