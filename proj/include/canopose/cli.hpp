#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "canopose/config_io.hpp"
#include "canopose/metrics.hpp"
#include "canopose/model_io.hpp"
#include "canopose/result_io.hpp"
#include "canopose/scene_io.hpp"
#include "canopose/synth.hpp"
#include "canopose/toy_model.hpp"
#include "canopose/version.hpp"

namespace canopose::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kInputError = 3;
inline constexpr int kPartialFailure = 4;
inline constexpr int kFitFailure = 5;

namespace detail {

inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw SchemaError("cannot open '" + tmp + "' for writing");
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string dump17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Deterministic static-chunk parallel map; fn(i) must only touch item i.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next(0);
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct ManifestBuilder {
  nlohmann::json j;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  ManifestBuilder(const std::string& command, const ToolConfig& cfg) {
    j["schema_version"] = 1;
    j["command"] = command;
    j["tool_version"] = kVersion;
    j["config"] = tool_config_to_json(cfg);
    j["config_hash"] = config_hash(cfg);
    j["inputs"] = nlohmann::json::array();
    j["outputs"] = nlohmann::json::array();
    j["failures"] = nlohmann::json::array();
    j["notices"] = nlohmann::json::array();
  }

  void write(const std::string& path) {
    j["duration_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    atomic_write(path, j.dump(1) + "\n");
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string config_path;
  std::string out_dir;
  int count = 1;
  std::optional<uint64_t> seed;  // overrides the scene section's seed
};

inline int cmd_gen_core(const GenArgs& args, const ToolConfig& cfg,
                        const std::string& model_unused = "") {
  (void)model_unused;
  std::filesystem::create_directories(args.out_dir);
  const BodyModel model = make_toy_model();  // generation needs only a body; the toy ships in-library
  detail::ManifestBuilder manifest("gen", cfg);
  manifest.j["args"] = {{"out_dir", args.out_dir},
                        {"count", args.count},
                        {"seed", args.seed ? *args.seed : cfg.scene.seed}};
  const uint64_t seed0 = args.seed ? *args.seed : cfg.scene.seed;
  if (args.count == 0) {
    manifest.j["notices"].push_back("count is 0: no scenes generated");
    std::cerr << "gen: count is 0, writing manifest only\n";
  }
  for (int i = 0; i < args.count; ++i) {
    SceneConfig scfg = cfg.scene;
    scfg.seed = seed0 + static_cast<uint64_t>(i);
    const Scene scene = generate_scene(model, scfg);
    nlohmann::json sj = scene_to_json(scene);
    sj["manifest"] = "gen_manifest.json";
    sj["config_hash"] = config_hash(cfg);
    const std::string name = "scene_" + std::to_string(scfg.seed) + ".json";
    detail::atomic_write((std::filesystem::path(args.out_dir) / name).string(),
                         sj.dump(1) + "\n");
    manifest.j["outputs"].push_back(name);
  }
  manifest.write((std::filesystem::path(args.out_dir) / "gen_manifest.json").string());
  return kOk;
}

inline int cmd_gen(const GenArgs& args) {
  ToolConfig cfg;
  try {
    cfg = load_tool_config(args.config_path);
    cfg.scene.validate();
    if (args.count < 0) throw SchemaError("gen: count must be >= 0");
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    return cmd_gen_core(args, cfg);
  } catch (const Error& e) {
    std::cerr << "gen failed: " << e.what() << "\n";
    return kInputError;
  }
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::vector<std::string> scene_paths;
  std::string model_path;  // empty = bundled toy body
  std::string config_path;
  std::string out_dir;
  std::string mode = "full";  // "stage1" stops after the per-view fits
  int jobs = 1;
  std::optional<double> lambda, alpha, gamma;  // flag overrides
};

inline int cmd_fit_core(const FitArgs& args, const ToolConfig& cfg) {
  std::filesystem::create_directories(args.out_dir);
  BodyModel model =
      args.model_path.empty() ? make_toy_model() : load_model(args.model_path);

  detail::ManifestBuilder manifest("fit", cfg);
  manifest.j["args"] = {{"out_dir", args.out_dir},
                        {"mode", args.mode},
                        {"model", args.model_path},
                        {"jobs", args.jobs}};
  for (const auto& p : args.scene_paths) manifest.j["inputs"].push_back(p);

  const int n = static_cast<int>(args.scene_paths.size());
  std::vector<std::string> outputs(n);
  std::vector<std::string> errors(n);

  detail::parallel_for(n, args.jobs, [&](int i) {
    const std::string& path = args.scene_paths[i];
    try {
      const Scene scene = read_scene(path);
      FitResultFile result;
      result.scene_path = path;
      result.scene_seed = scene.seed;
      result.mode = args.mode;
      result.config_hash = config_hash(cfg);
      result.manifest = "fit_manifest.json";

      if (args.mode == "stage1") {
        const KeypointEvaluator evaluator(model);
        for (int v = 0; v < scene.num_views(); ++v) {
          const FilteredDetection det =
              filter_confidence(scene.detections[v], cfg.fit.lambda);
          result.stage1.views.push_back(fit_single_view(
              model, scene.cameras[v].intrinsics, det, cfg.fit, &evaluator));
        }
      } else {
        const TwoStageResult two =
            fit_two_stage(model, scene.cameras, scene.detections, cfg.fit);
        result.stage1 = two.stage1;
        result.has_stage2 = true;
        result.screened = two.screened;
        result.stage2 = two.stage2;
        result.screening_retries = two.screening_retries;
      }
      const std::string name =
          "result_" + std::filesystem::path(path).stem().string() + ".json";
      detail::atomic_write((std::filesystem::path(args.out_dir) / name).string(),
                           fit_result_to_json(result).dump(1) + "\n");
      outputs[i] = name;
    } catch (const Error& e) {
      errors[i] = e.what();
    } catch (const std::exception& e) {
      errors[i] = std::string("unexpected: ") + e.what();
    }
  });

  int failures = 0;
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      ++failures;
      manifest.j["failures"].push_back(
          {{"input", args.scene_paths[i]}, {"error", errors[i]}});
      std::cerr << "fit: " << args.scene_paths[i] << ": " << errors[i] << "\n";
    } else {
      manifest.j["outputs"].push_back(outputs[i]);
    }
  }
  manifest.write((std::filesystem::path(args.out_dir) / "fit_manifest.json").string());
  if (failures == n && n > 0) return kFitFailure;
  if (failures > 0) return kPartialFailure;
  return kOk;
}

inline int cmd_fit(const FitArgs& args) {
  ToolConfig cfg;
  try {
    cfg = load_tool_config(args.config_path);
    if (args.lambda) cfg.fit.lambda = *args.lambda;
    if (args.alpha) cfg.fit.alpha = *args.alpha;
    if (args.gamma) cfg.fit.gamma = *args.gamma;
    cfg.fit.validate();
    if (args.mode != "full" && args.mode != "stage1") {
      throw SchemaError("fit: mode must be 'full' or 'stage1'");
    }
    if (args.jobs < 1) throw SchemaError("fit: jobs must be >= 1");
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (args.scene_paths.empty()) {
    std::cerr << "fit: no scene files given\n";
    return kInputError;
  }
  if (!args.model_path.empty() && !std::filesystem::exists(args.model_path)) {
    std::cerr << "fit: model file not found: " << args.model_path << "\n";
    return kInputError;
  }
  try {
    return cmd_fit_core(args, cfg);
  } catch (const Error& e) {
    std::cerr << "fit failed: " << e.what() << "\n";
    return kInputError;
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> result_paths;
  std::vector<std::string> scene_paths;
  std::string config_path;
  std::string out_csv;  // summary lands next to it as <out_csv>.summary.json
};

inline const char* kEvalCsvHeader =
    "scene,seed,mpjpe_mm,pa_mpjpe_mm,pck,auc,pck_aligned,auc_aligned,config_hash";

inline int cmd_eval_core(const EvalArgs& args, const ToolConfig& cfg) {
  detail::ManifestBuilder manifest("eval", cfg);
  manifest.j["args"] = {{"out_csv", args.out_csv},
                        {"results", args.result_paths},
                        {"scenes", args.scene_paths}};
  for (const auto& p : args.result_paths) manifest.j["inputs"].push_back(p);
  for (const auto& p : args.scene_paths) manifest.j["inputs"].push_back(p);

  std::map<uint64_t, Scene> scenes_by_seed;
  for (const auto& p : args.scene_paths) {
    const Scene s = read_scene(p);
    if (s.has_ground_truth) scenes_by_seed.emplace(s.seed, s);
  }

  std::ostringstream csv;
  csv << kEvalCsvHeader << "\n";
  std::vector<PoseError> rows;
  int skipped = 0;
  for (const auto& p : args.result_paths) {
    const FitResultFile r = read_fit_result(p);
    const auto it = scenes_by_seed.find(r.scene_seed);
    std::string notice;
    if (!r.has_stage2) {
      notice = "stage1-only result, no final keypoints";
    } else if (it == scenes_by_seed.end()) {
      notice = "no ground-truth scene with seed " + std::to_string(r.scene_seed);
    }
    if (!notice.empty()) {
      ++skipped;
      manifest.j["notices"].push_back(p + ": skipped (" + notice + ")");
      std::cerr << "eval: " << p << ": skipped (" << notice << ")\n";
      continue;
    }
    // meters -> millimeters, both clouds in the first view's camera frame
    const Points3 pred_mm = 1000.0 * r.stage2.keypoints_camera_frame.at(0);
    const Points3 gt_mm = 1000.0 * it->second.gt_keypoints;
    const PoseError e = evaluate_pose(pred_mm, gt_mm, cfg.metrics);
    rows.push_back(e);
    csv << std::filesystem::path(r.scene_path).stem().string() << ","
        << r.scene_seed << "," << detail::dump17(e.mpjpe_mm) << ","
        << detail::dump17(e.pa_mpjpe_mm) << "," << detail::dump17(e.pck) << ","
        << detail::dump17(e.auc) << "," << detail::dump17(e.pck_aligned) << ","
        << detail::dump17(e.auc_aligned) << "," << r.config_hash << "\n";
  }

  detail::atomic_write(args.out_csv, csv.str());
  manifest.j["outputs"].push_back(args.out_csv);

  auto aggregate = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(field(r));
    nlohmann::json out;
    if (v.empty()) return out;
    double sum = 0.0;
    for (double x : v) sum += x;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    out["mean"] = sum / static_cast<double>(n);
    out["median"] = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    return out;
  };
  nlohmann::json summary = {
      {"rows", rows.size()},
      {"skipped", skipped},
      {"config_hash", config_hash(cfg)},
      {"mpjpe_mm", aggregate([](const PoseError& e) { return e.mpjpe_mm; })},
      {"pa_mpjpe_mm", aggregate([](const PoseError& e) { return e.pa_mpjpe_mm; })},
      {"pck", aggregate([](const PoseError& e) { return e.pck; })},
      {"auc", aggregate([](const PoseError& e) { return e.auc; })},
      {"pck_aligned", aggregate([](const PoseError& e) { return e.pck_aligned; })},
      {"auc_aligned", aggregate([](const PoseError& e) { return e.auc_aligned; })},
  };
  const std::string summary_path = args.out_csv + ".summary.json";
  detail::atomic_write(summary_path, summary.dump(1) + "\n");
  manifest.j["outputs"].push_back(summary_path);
  std::cout << summary.dump(1) << "\n";

  const std::string manifest_path =
      (std::filesystem::path(args.out_csv).parent_path() / "eval_manifest.json").string();
  manifest.write(manifest_path);
  return kOk;
}

inline int cmd_eval(const EvalArgs& args) {
  ToolConfig cfg;
  try {
    cfg = load_tool_config(args.config_path);
    cfg.metrics.validate();
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (args.result_paths.empty() || args.out_csv.empty()) {
    std::cerr << "eval: need result files and --out\n";
    return kInputError;
  }
  try {
    return cmd_eval_core(args, cfg);
  } catch (const Error& e) {
    std::cerr << "eval failed: " << e.what() << "\n";
    return kInputError;
  }
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> csv_paths;
  std::vector<std::string> labels;  // empty = file stems
  std::string out_prefix;           // writes <prefix>.csv and <prefix>.txt
};

namespace detail {

struct ReportRow {
  std::string label;
  // column order matches the table: absolute then aligned
  double pck = 0, auc = 0, mpjpe = 0, pck_al = 0, auc_al = 0, pa_mpjpe = 0;
  int scenes = 0;
};

inline ReportRow aggregate_csv(const std::string& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw SchemaError("report: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kEvalCsvHeader) {
    throw SchemaError("report: '" + path + "' is not a metrics CSV (header mismatch)");
  }
  ReportRow row;
  row.label = label;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw SchemaError("report: malformed row in '" + path + "'");
    row.mpjpe += std::stod(cells[2]);
    row.pa_mpjpe += std::stod(cells[3]);
    row.pck += std::stod(cells[4]);
    row.auc += std::stod(cells[5]);
    row.pck_al += std::stod(cells[6]);
    row.auc_al += std::stod(cells[7]);
    ++row.scenes;
  }
  if (row.scenes == 0) throw SchemaError("report: '" + path + "' has no rows");
  const double n = row.scenes;
  row.mpjpe /= n;
  row.pa_mpjpe /= n;
  row.pck /= n;
  row.auc /= n;
  row.pck_al /= n;
  row.auc_al /= n;
  return row;
}

}  // namespace detail

inline int cmd_report_core(const ReportArgs& args, const ToolConfig& cfg) {
  detail::ManifestBuilder manifest("report", cfg);
  manifest.j["args"] = {{"out_prefix", args.out_prefix}, {"labels", args.labels}};
  for (const auto& p : args.csv_paths) manifest.j["inputs"].push_back(p);

  std::vector<detail::ReportRow> rows;
  for (size_t i = 0; i < args.csv_paths.size(); ++i) {
    const std::string label = i < args.labels.size()
                                  ? args.labels[i]
                                  : std::filesystem::path(args.csv_paths[i]).stem().string();
    rows.push_back(detail::aggregate_csv(args.csv_paths[i], label));
  }

  // best per column: higher is better for PCK/AUC, lower for the errors
  auto best_index = [&](auto field, bool higher) {
    size_t best = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
      if (higher ? field(rows[i]) > field(rows[best]) : field(rows[i]) < field(rows[best])) {
        best = i;
      }
    }
    return best;
  };
  const size_t b_pck = best_index([](const auto& r) { return r.pck; }, true);
  const size_t b_auc = best_index([](const auto& r) { return r.auc; }, true);
  const size_t b_mpjpe = best_index([](const auto& r) { return r.mpjpe; }, false);
  const size_t b_pck_al = best_index([](const auto& r) { return r.pck_al; }, true);
  const size_t b_auc_al = best_index([](const auto& r) { return r.auc_al; }, true);
  const size_t b_pa = best_index([](const auto& r) { return r.pa_mpjpe; }, false);

  std::ostringstream csv;
  csv << "label,scenes,pck,auc,mpjpe_mm,pck_aligned,auc_aligned,pa_mpjpe_mm\n";
  for (const auto& r : rows) {
    csv << r.label << "," << r.scenes << "," << detail::dump17(r.pck) << ","
        << detail::dump17(r.auc) << "," << detail::dump17(r.mpjpe) << ","
        << detail::dump17(r.pck_al) << "," << detail::dump17(r.auc_al) << ","
        << detail::dump17(r.pa_mpjpe) << "\n";
  }

  std::ostringstream txt;
  txt << "                         |         absolute          |         aligned\n";
  txt << "label            scenes  |   PCK^    AUC^   MPJPE_v  |   PCK^    AUC^  PA-MPJPE_v\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    char line[256];
    std::snprintf(line, sizeof(line),
                  "%-16s %6d  | %6.2f%s %6.2f%s %8.2f%s | %6.2f%s %6.2f%s %8.2f%s\n",
                  r.label.c_str(), r.scenes, r.pck, i == b_pck ? "*" : " ", r.auc,
                  i == b_auc ? "*" : " ", r.mpjpe, i == b_mpjpe ? "*" : " ", r.pck_al,
                  i == b_pck_al ? "*" : " ", r.auc_al, i == b_auc_al ? "*" : " ",
                  r.pa_mpjpe, i == b_pa ? "*" : " ");
    txt << line;
  }

  detail::atomic_write(args.out_prefix + ".csv", csv.str());
  detail::atomic_write(args.out_prefix + ".txt", txt.str());
  manifest.j["outputs"].push_back(args.out_prefix + ".csv");
  manifest.j["outputs"].push_back(args.out_prefix + ".txt");
  std::cout << txt.str();

  const std::string manifest_path =
      (std::filesystem::path(args.out_prefix).parent_path() / "report_manifest.json")
          .string();
  manifest.write(manifest_path);
  return kOk;
}

inline int cmd_report(const ReportArgs& args) {
  if (args.csv_paths.empty() || args.out_prefix.empty()) {
    std::cerr << "report: need at least one metrics CSV and --out\n";
    return kInputError;
  }
  try {
    return cmd_report_core(args, ToolConfig{});
  } catch (const Error& e) {
    std::cerr << "report failed: " << e.what() << "\n";
    return kInputError;
  }
}

// ---------------------------------------------------------------------------
// rerun: replays a command from its manifest (embedded config + args)

inline int cmd_rerun(const std::string& manifest_path) {
  nlohmann::json m;
  try {
    std::ifstream in(manifest_path);
    if (!in) throw SchemaError("rerun: cannot open '" + manifest_path + "'");
    in >> m;
  } catch (const std::exception& e) {
    std::cerr << "rerun: " << e.what() << "\n";
    return kInputError;
  }
  try {
    const ToolConfig cfg = tool_config_from_json(jsonu::need(m, "config"));
    const std::string command = jsonu::need(m, "command").get<std::string>();
    const auto& a = jsonu::need(m, "args");
    if (command == "gen") {
      GenArgs args;
      args.out_dir = jsonu::need(a, "out_dir").get<std::string>();
      args.count = jsonu::need(a, "count").get<int>();
      args.seed = jsonu::need(a, "seed").get<uint64_t>();
      return cmd_gen_core(args, cfg);
    }
    if (command == "fit") {
      FitArgs args;
      args.out_dir = jsonu::need(a, "out_dir").get<std::string>();
      args.mode = jsonu::need(a, "mode").get<std::string>();
      args.model_path = jsonu::need(a, "model").get<std::string>();
      args.jobs = jsonu::need(a, "jobs").get<int>();
      for (const auto& p : jsonu::need(m, "inputs")) {
        args.scene_paths.push_back(p.get<std::string>());
      }
      return cmd_fit_core(args, cfg);
    }
    if (command == "eval") {
      EvalArgs args;
      args.out_csv = jsonu::need(a, "out_csv").get<std::string>();
      args.result_paths = jsonu::need(a, "results").get<std::vector<std::string>>();
      args.scene_paths = jsonu::need(a, "scenes").get<std::vector<std::string>>();
      return cmd_eval_core(args, cfg);
    }
    if (command == "report") {
      ReportArgs args;
      args.out_prefix = jsonu::need(a, "out_prefix").get<std::string>();
      args.labels = a.value("labels", std::vector<std::string>{});
      for (const auto& p : jsonu::need(m, "inputs")) {
        args.csv_paths.push_back(p.get<std::string>());
      }
      return cmd_report_core(args, ToolConfig{});
    }
    std::cerr << "rerun: unknown command '" << command << "'\n";
    return kInputError;
  } catch (const Error& e) {
    std::cerr << "rerun failed: " << e.what() << "\n";
    return kInputError;
  }
}

}  // namespace canopose::cli
