#pragma once

#include <vector>

#include "canopose/procrustes.hpp"
#include "canopose/types.hpp"

namespace canopose {

/// Mean per-joint position error: mean Euclidean distance between matching
/// rows, in the input unit (millimeters throughout the evaluation pipeline).
inline double mpjpe(const Points3& pred, const Points3& gt) {
  if (pred.rows() != gt.rows() || pred.rows() == 0) {
    throw SchemaError("mpjpe: shape mismatch");
  }
  return (pred - gt).rowwise().norm().mean();
}

/// MPJPE after similarity Procrustes alignment of pred onto gt.
inline double pa_mpjpe(const Points3& pred, const Points3& gt) {
  if (pred.rows() != gt.rows() || pred.rows() == 0) {
    throw SchemaError("pa_mpjpe: shape mismatch");
  }
  return mpjpe(procrustes_align(pred, gt).aligned, gt);
}

/// Percentage of joints with error strictly below the threshold. The boundary
/// rule is strict: a joint at exactly the threshold counts incorrect.
inline double pck(const Points3& pred, const Points3& gt, double threshold_mm = 150.0) {
  if (pred.rows() != gt.rows() || pred.rows() == 0) {
    throw SchemaError("pck: shape mismatch");
  }
  const VecX err = (pred - gt).rowwise().norm();
  int correct = 0;
  for (Eigen::Index j = 0; j < err.size(); ++j) {
    if (err(j) < threshold_mm) ++correct;
  }
  return 100.0 * correct / static_cast<double>(err.size());
}

inline std::vector<double> default_auc_grid() {
  std::vector<double> grid;
  for (double t = 5.0; t <= 150.0 + 1e-9; t += 5.0) grid.push_back(t);
  return grid;
}

/// Mean PCK over an ascending threshold grid (default 5..150 mm, step 5).
inline double auc(const Points3& pred, const Points3& gt,
                  const std::vector<double>& thresholds = default_auc_grid()) {
  if (thresholds.empty()) {
    throw SchemaError("auc: empty threshold grid");
  }
  for (size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) {
      throw SchemaError("auc: thresholds must be ascending");
    }
  }
  double total = 0.0;
  for (double t : thresholds) total += pck(pred, gt, t);
  return total / static_cast<double>(thresholds.size());
}

struct EvalOptions {
  double pck_threshold_mm = 150.0;
  double auc_min_mm = 5.0;
  double auc_max_mm = 150.0;
  double auc_step_mm = 5.0;
  // Root-relative evaluation subtracts the root joint from both clouds for
  // MPJPE/PCK/AUC. PA-MPJPE is computed from the raw clouds; similarity
  // alignment absorbs per-cloud translations, so relativization cannot
  // change it.
  bool root_relative = true;
  int root_joint = 0;

  std::vector<double> auc_grid() const {
    std::vector<double> grid;
    for (double t = auc_min_mm; t <= auc_max_mm + 1e-9; t += auc_step_mm) {
      grid.push_back(t);
    }
    return grid;
  }

  void validate() const {
    if (!(pck_threshold_mm > 0.0) || !(auc_min_mm > 0.0) ||
        auc_max_mm < auc_min_mm || !(auc_step_mm > 0.0) || root_joint < 0) {
      throw SchemaError("EvalOptions: invalid thresholds");
    }
  }
};

// The full error report for one pose pair. "aligned" columns evaluate the
// Procrustes-aligned prediction, mirroring the absolute/rigid-alignment
// split of the report tables.
struct PoseError {
  VecX per_joint_mm;      // root-relative when the flag is on
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pck = 0.0;
  double auc = 0.0;
  double pck_aligned = 0.0;
  double auc_aligned = 0.0;
};

/// Evaluates prediction vs ground truth (both k x 3, millimeters).
inline PoseError evaluate_pose(const Points3& pred_mm, const Points3& gt_mm,
                               const EvalOptions& opts = {}) {
  opts.validate();
  if (pred_mm.rows() != gt_mm.rows() || pred_mm.rows() == 0) {
    throw SchemaError("evaluate_pose: shape mismatch");
  }
  Points3 p = pred_mm;
  Points3 g = gt_mm;
  if (opts.root_relative) {
    if (opts.root_joint >= p.rows()) {
      throw SchemaError("evaluate_pose: root joint out of range");
    }
    p.rowwise() -= pred_mm.row(opts.root_joint);
    g.rowwise() -= gt_mm.row(opts.root_joint);
  }
  PoseError out;
  out.per_joint_mm = (p - g).rowwise().norm();
  out.mpjpe_mm = mpjpe(p, g);
  out.pa_mpjpe_mm = pa_mpjpe(pred_mm, gt_mm);
  const auto grid = opts.auc_grid();
  out.pck = pck(p, g, opts.pck_threshold_mm);
  out.auc = auc(p, g, grid);
  const Points3 aligned = procrustes_align(pred_mm, gt_mm).aligned;
  out.pck_aligned = pck(aligned, gt_mm, opts.pck_threshold_mm);
  out.auc_aligned = auc(aligned, gt_mm, grid);
  if (out.pa_mpjpe_mm > out.mpjpe_mm + 1e-9) {
    throw GeometryError("evaluate_pose: alignment increased the error "
                        "(degenerate configuration)");
  }
  return out;
}

}  // namespace canopose
