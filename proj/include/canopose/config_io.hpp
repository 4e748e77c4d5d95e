#pragma once

#include <fstream>
#include <string>

#include "canopose/fitting.hpp"
#include "canopose/json_util.hpp"
#include "canopose/metrics.hpp"
#include "canopose/scene_io.hpp"

namespace canopose {

inline constexpr int kConfigSchemaVersion = 1;

// One configuration document for every command, sections per module.
struct ToolConfig {
  FitConfig fit;
  SceneConfig scene;
  EvalOptions metrics;
};

inline nlohmann::json fit_config_to_json(const FitConfig& c) {
  return {
      {"alpha", c.alpha},
      {"gamma", c.gamma},
      {"lambda", c.lambda},
      {"shape_prior_weight", c.shape_prior_weight},
      {"pose_prior_weight", c.pose_prior_weight},
      {"max_iterations", c.max_iterations},
      {"tol_step", c.tol_step},
      {"tol_gradient", c.tol_gradient},
      {"tol_relative_decrease", c.tol_relative_decrease},
      {"damping_init", c.damping_init},
      {"damping_up", c.damping_up},
      {"damping_down", c.damping_down},
      {"min_surviving_keypoints", c.min_surviving_keypoints},
      {"mean_global_orient", jsonu::vec3(c.mean_global_orient)},
      {"mean_translation", jsonu::vec3(c.mean_translation)},
      {"init_yaw_offsets", c.init_yaw_offsets},
      {"stage2_view_registration", c.stage2_view_registration},
      {"stage2_anchor_refreshes", c.stage2_anchor_refreshes},
      {"stage2_retry_rel_threshold", c.stage2_retry_rel_threshold},
      {"stage2_retry_abs_threshold", c.stage2_retry_abs_threshold},
  };
}

inline FitConfig fit_config_from_json(const nlohmann::json& j) {
  FitConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.shape_prior_weight = j.value("shape_prior_weight", c.shape_prior_weight);
  c.pose_prior_weight = j.value("pose_prior_weight", c.pose_prior_weight);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tol_step = j.value("tol_step", c.tol_step);
  c.tol_gradient = j.value("tol_gradient", c.tol_gradient);
  c.tol_relative_decrease = j.value("tol_relative_decrease", c.tol_relative_decrease);
  c.damping_init = j.value("damping_init", c.damping_init);
  c.damping_up = j.value("damping_up", c.damping_up);
  c.damping_down = j.value("damping_down", c.damping_down);
  c.min_surviving_keypoints = j.value("min_surviving_keypoints", c.min_surviving_keypoints);
  if (j.contains("mean_global_orient")) {
    c.mean_global_orient = jsonu::vec3(j.at("mean_global_orient"), "mean_global_orient");
  }
  if (j.contains("mean_translation")) {
    c.mean_translation = jsonu::vec3(j.at("mean_translation"), "mean_translation");
  }
  if (j.contains("init_yaw_offsets")) {
    c.init_yaw_offsets = j.at("init_yaw_offsets").get<std::vector<double>>();
  }
  c.stage2_view_registration = j.value("stage2_view_registration", c.stage2_view_registration);
  c.stage2_anchor_refreshes = j.value("stage2_anchor_refreshes", c.stage2_anchor_refreshes);
  c.stage2_retry_rel_threshold =
      j.value("stage2_retry_rel_threshold", c.stage2_retry_rel_threshold);
  c.stage2_retry_abs_threshold =
      j.value("stage2_retry_abs_threshold", c.stage2_retry_abs_threshold);
  c.validate();
  return c;
}

inline nlohmann::json eval_options_to_json(const EvalOptions& o) {
  return {{"pck_threshold_mm", o.pck_threshold_mm}, {"auc_min_mm", o.auc_min_mm},
          {"auc_max_mm", o.auc_max_mm},             {"auc_step_mm", o.auc_step_mm},
          {"root_relative", o.root_relative},       {"root_joint", o.root_joint}};
}

inline EvalOptions eval_options_from_json(const nlohmann::json& j) {
  EvalOptions o;
  o.pck_threshold_mm = j.value("pck_threshold_mm", o.pck_threshold_mm);
  o.auc_min_mm = j.value("auc_min_mm", o.auc_min_mm);
  o.auc_max_mm = j.value("auc_max_mm", o.auc_max_mm);
  o.auc_step_mm = j.value("auc_step_mm", o.auc_step_mm);
  o.root_relative = j.value("root_relative", o.root_relative);
  o.root_joint = j.value("root_joint", o.root_joint);
  o.validate();
  return o;
}

inline nlohmann::json tool_config_to_json(const ToolConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"fit", fit_config_to_json(c.fit)},
          {"scene", scene_config_to_json(c.scene)},
          {"metrics", eval_options_to_json(c.metrics)}};
}

inline ToolConfig tool_config_from_json(const nlohmann::json& j) {
  if (j.contains("schema_version") &&
      j.at("schema_version").get<int>() != kConfigSchemaVersion) {
    throw SchemaError("config: unsupported schema_version");
  }
  ToolConfig c;
  if (j.contains("fit")) c.fit = fit_config_from_json(j.at("fit"));
  if (j.contains("scene")) c.scene = scene_config_from_json(j.at("scene"));
  if (j.contains("metrics")) c.metrics = eval_options_from_json(j.at("metrics"));
  return c;
}

/// Loads the unified config document; an empty path yields all defaults.
inline ToolConfig load_tool_config(const std::string& path) {
  if (path.empty()) return ToolConfig{};
  std::ifstream in(path);
  if (!in) throw SchemaError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("config: malformed JSON in '" + path + "': " + e.what());
  }
  return tool_config_from_json(j);
}

/// FNV-1a hash of the canonical serialization; identifies a resolved config
/// in manifests, result files, and metric rows.
inline std::string config_hash(const ToolConfig& c) {
  const std::string dump = tool_config_to_json(c).dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace canopose
