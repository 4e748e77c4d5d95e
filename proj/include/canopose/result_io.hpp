#pragma once

#include <fstream>
#include <string>

#include "canopose/config_io.hpp"
#include "canopose/fitting.hpp"

namespace canopose {

inline constexpr int kResultSchemaVersion = 1;

// Fit result document. Units: meters for translations and 3D keypoints,
// radians for axis-angle entries, pixels for losses and residual traces.

inline nlohmann::json diagnostics_to_json(const SolveDiagnostics& d) {
  return {{"iterations", d.iterations},
          {"accepted_steps", d.accepted_steps},
          {"initial_cost", d.initial_cost},
          {"final_cost", d.final_cost},
          {"final_gradient_norm", d.final_gradient_norm},
          {"termination", termination_name(d.termination)},
          {"cost_trace", d.cost_trace}};
}

inline SolveDiagnostics diagnostics_from_json(const nlohmann::json& j) {
  SolveDiagnostics d;
  d.iterations = jsonu::need(j, "iterations").get<int>();
  d.accepted_steps = jsonu::need(j, "accepted_steps").get<int>();
  d.initial_cost = jsonu::need(j, "initial_cost").get<double>();
  d.final_cost = jsonu::need(j, "final_cost").get<double>();
  d.final_gradient_norm = jsonu::need(j, "final_gradient_norm").get<double>();
  d.cost_trace = jsonu::need(j, "cost_trace").get<std::vector<double>>();
  const std::string term = jsonu::need(j, "termination").get<std::string>();
  for (Termination t : {Termination::gradient, Termination::step,
                        Termination::relative_decrease, Termination::max_iterations,
                        Termination::stalled}) {
    if (term == termination_name(t)) d.termination = t;
  }
  return d;
}

inline nlohmann::json body_params_to_json(const BodyParams& p) {
  return {{"betas", jsonu::vector(p.betas)},
          {"global_orient", jsonu::vec3(p.global_orient)},
          {"body_pose", jsonu::points(p.body_pose)}};
}

inline BodyParams body_params_from_json(const nlohmann::json& j) {
  BodyParams p;
  const VecX betas = jsonu::vector(jsonu::need(j, "betas"), "betas");
  if (betas.size() != kShapeCoeffs) throw SchemaError("body params: betas size");
  p.betas = betas;
  p.global_orient = jsonu::vec3(jsonu::need(j, "global_orient"), "global_orient");
  const auto pose = jsonu::points<Points3>(jsonu::need(j, "body_pose"), "body_pose");
  if (pose.rows() != kBodyJoints) throw SchemaError("body params: body_pose rows");
  p.body_pose = pose;
  return p;
}

struct FitResultFile {
  std::string scene_path;
  uint64_t scene_seed = 0;
  std::string mode;  // "stage1" or "full"
  std::string config_hash;
  std::string manifest;  // file name of the producing manifest
  StageOneResult stage1;
  bool has_stage2 = false;
  ScreenedBody screened;
  MultiViewFitResult stage2;
  int screening_retries = 0;
};

inline nlohmann::json fit_result_to_json(const FitResultFile& r) {
  nlohmann::json stage1 = nlohmann::json::array();
  for (const ViewFitResult& v : r.stage1.views) {
    stage1.push_back({{"view_id", v.view_id},
                      {"params", body_params_to_json(v.params)},
                      {"translation", jsonu::vec3(v.camera.translation)},
                      {"focal", v.camera.intrinsics.focal},
                      {"principal",
                       {v.camera.intrinsics.principal.x(), v.camera.intrinsics.principal.y()}},
                      {"loss_2d", v.final_loss_2d},
                      {"total_loss", v.final_total_loss},
                      {"survivors", v.survivors},
                      {"init_yaw_offset", v.init_yaw_offset},
                      {"diagnostics", diagnostics_to_json(v.diagnostics)}});
  }
  nlohmann::json j = {{"schema_version", kResultSchemaVersion},
                      {"scene_path", r.scene_path},
                      {"scene_seed", r.scene_seed},
                      {"mode", r.mode},
                      {"config_hash", r.config_hash},
                      {"manifest", r.manifest},
                      {"stage1", std::move(stage1)}};
  if (r.has_stage2) {
    nlohmann::json solves = nlohmann::json::array();
    for (const auto& s : r.stage2.solves) solves.push_back(diagnostics_to_json(s));
    nlohmann::json cam_frames = nlohmann::json::array();
    for (const auto& kp : r.stage2.keypoints_camera_frame) {
      cam_frames.push_back(jsonu::points(kp));
    }
    j["screened"] = {{"view_index", r.screened.view_index},
                     {"loss_2d", r.screened.loss_2d}};
    j["screening_retries"] = r.screening_retries;
    j["canonical"] = canonical_to_json(r.stage2.params);
    j["keypoints_body_frame"] = jsonu::points(r.stage2.keypoints_body_frame);
    j["keypoints_camera_frame"] = std::move(cam_frames);
    j["final_loss_2d"] = r.stage2.final_loss_2d;
    j["final_total_loss"] = r.stage2.final_total_loss;
    j["inert_views"] = r.stage2.inert_views;
    j["stage2_solves"] = std::move(solves);
  }
  return j;
}

inline FitResultFile fit_result_from_json(const nlohmann::json& j) {
  if (jsonu::need(j, "schema_version").get<int>() != kResultSchemaVersion) {
    throw SchemaError("result: unsupported schema_version");
  }
  FitResultFile r;
  r.scene_path = jsonu::need(j, "scene_path").get<std::string>();
  r.scene_seed = jsonu::need(j, "scene_seed").get<uint64_t>();
  r.mode = jsonu::need(j, "mode").get<std::string>();
  r.config_hash = jsonu::need(j, "config_hash").get<std::string>();
  r.manifest = j.value("manifest", "");
  for (const auto& v : jsonu::need(j, "stage1")) {
    ViewFitResult view;
    view.view_id = jsonu::need(v, "view_id").get<int>();
    view.params = body_params_from_json(jsonu::need(v, "params"));
    view.camera.translation = jsonu::vec3(jsonu::need(v, "translation"), "translation");
    view.camera.intrinsics.focal = jsonu::need(v, "focal").get<double>();
    const auto& pr = jsonu::need(v, "principal");
    view.camera.intrinsics.principal = Vec2(pr[0].get<double>(), pr[1].get<double>());
    view.final_loss_2d = jsonu::need(v, "loss_2d").get<double>();
    view.final_total_loss = jsonu::need(v, "total_loss").get<double>();
    view.survivors = jsonu::need(v, "survivors").get<int>();
    view.init_yaw_offset = jsonu::need(v, "init_yaw_offset").get<double>();
    view.diagnostics = diagnostics_from_json(jsonu::need(v, "diagnostics"));
    r.stage1.views.push_back(std::move(view));
  }
  if (j.contains("canonical")) {
    r.has_stage2 = true;
    r.screened.view_index = jsonu::need(j.at("screened"), "view_index").get<int>();
    r.screened.loss_2d = jsonu::need(j.at("screened"), "loss_2d").get<double>();
    r.screening_retries = j.value("screening_retries", 0);
    r.stage2.params = canonical_from_json(j.at("canonical"));
    r.stage2.keypoints_body_frame =
        jsonu::points<Points3>(jsonu::need(j, "keypoints_body_frame"), "keypoints_body_frame");
    for (const auto& kp : jsonu::need(j, "keypoints_camera_frame")) {
      r.stage2.keypoints_camera_frame.push_back(
          jsonu::points<Points3>(kp, "keypoints_camera_frame"));
    }
    r.stage2.final_loss_2d = jsonu::need(j, "final_loss_2d").get<double>();
    r.stage2.final_total_loss = jsonu::need(j, "final_total_loss").get<double>();
    r.stage2.inert_views = j.value("inert_views", std::vector<bool>{});
    for (const auto& s : jsonu::need(j, "stage2_solves")) {
      r.stage2.solves.push_back(diagnostics_from_json(s));
    }
    if (!r.stage2.solves.empty()) r.stage2.diagnostics = r.stage2.solves.back();
  }
  return r;
}

inline void write_fit_result(const FitResultFile& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("write_fit_result: cannot open '" + path + "'");
  out << fit_result_to_json(r).dump(1) << "\n";
}

inline FitResultFile read_fit_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("read_fit_result: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("read_fit_result: malformed JSON in '" + path + "': " + e.what());
  }
  return fit_result_from_json(j);
}

}  // namespace canopose
