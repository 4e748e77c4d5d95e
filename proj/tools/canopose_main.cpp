// canopose command-line tool: generate synthetic multi-view scenes, run the
// two-stage fit, evaluate against ground truth, and build comparison reports.

#include <CLI11.hpp>

#include "canopose/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"canopose: multi-view body fitting in a canonical parameter space"};
  app.require_subcommand(1);
  app.set_version_flag("--version", canopose::kVersion);

  canopose::cli::GenArgs gen;
  uint64_t gen_seed = 0;
  auto* cmd_gen = app.add_subcommand("gen", "generate synthetic scenes");
  cmd_gen->add_option("--config", gen.config_path, "config file (JSON)");
  cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
  cmd_gen->add_option("--count", gen.count, "number of scenes (seeds seed..seed+count-1)");
  auto* gen_seed_opt = cmd_gen->add_option("--seed", gen_seed, "base seed override");

  canopose::cli::FitArgs fit;
  double fit_lambda = 0, fit_alpha = 0, fit_gamma = 0;
  auto* cmd_fit = app.add_subcommand("fit", "fit scenes (stage1 or full two-stage)");
  cmd_fit->add_option("scenes", fit.scene_paths, "scene files")->required();
  cmd_fit->add_option("--model", fit.model_path, "body model file (default: bundled toy body)");
  cmd_fit->add_option("--config", fit.config_path, "config file (JSON)");
  cmd_fit->add_option("--out", fit.out_dir, "output directory")->required();
  cmd_fit->add_option("--mode", fit.mode, "stage1 | full")->default_val("full");
  cmd_fit->add_option("--jobs", fit.jobs, "parallel scenes")->default_val(1);
  auto* lam = cmd_fit->add_option("--lambda", fit_lambda, "confidence threshold override");
  auto* alp = cmd_fit->add_option("--alpha", fit_alpha, "2D loss weight override");
  auto* gam = cmd_fit->add_option("--gamma", fit_gamma, "anchor loss weight override");

  canopose::cli::EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate results against ground-truth scenes");
  cmd_eval->add_option("results", eval.result_paths, "fit result files")->required();
  cmd_eval->add_option("--scenes", eval.scene_paths, "ground-truth scene files")->required();
  cmd_eval->add_option("--config", eval.config_path, "config file (JSON)");
  cmd_eval->add_option("--out", eval.out_csv, "metrics CSV path")->required();

  canopose::cli::ReportArgs report;
  auto* cmd_report = app.add_subcommand("report", "aggregate metric CSVs into a comparison table");
  cmd_report->add_option("csvs", report.csv_paths, "metrics CSV files")->required();
  cmd_report->add_option("--labels", report.labels, "row labels (default: file stems)");
  cmd_report->add_option("--out", report.out_prefix, "output prefix (.csv/.txt)")->required();

  std::string manifest_path;
  auto* cmd_rerun = app.add_subcommand("rerun", "replay a command from its manifest");
  cmd_rerun->add_option("manifest", manifest_path, "manifest file")->required();

  CLI11_PARSE(app, argc, argv);

  if (cmd_gen->parsed()) {
    if (gen_seed_opt->count() > 0) gen.seed = gen_seed;
    return canopose::cli::cmd_gen(gen);
  }
  if (cmd_fit->parsed()) {
    if (lam->count() > 0) fit.lambda = fit_lambda;
    if (alp->count() > 0) fit.alpha = fit_alpha;
    if (gam->count() > 0) fit.gamma = fit_gamma;
    return canopose::cli::cmd_fit(fit);
  }
  if (cmd_eval->parsed()) return canopose::cli::cmd_eval(eval);
  if (cmd_report->parsed()) return canopose::cli::cmd_report(report);
  if (cmd_rerun->parsed()) return canopose::cli::cmd_rerun(manifest_path);
  return 1;
}
