#pragma once

#include <vector>

#include "canopose/body_model.hpp"
#include "canopose/camera.hpp"
#include "canopose/params.hpp"

namespace canopose {

// Detected 2D keypoints for one view, with per-keypoint confidences in [0,1].
struct Detection2D {
  int view_id = 0;
  Points2 keypoints;   // k x 2, pixels
  VecX confidence;     // k, in [0,1]

  void validate() const {
    if (keypoints.rows() != confidence.size()) {
      throw SchemaError("Detection2D: keypoint/confidence count mismatch");
    }
    if (confidence.size() > 0 &&
        (confidence.minCoeff() < 0.0 || confidence.maxCoeff() > 1.0)) {
      throw SchemaError("Detection2D: confidences must lie in [0,1]");
    }
  }
};

// Detection plus thresholded confidences: original value where c >= lambda,
// zero otherwise. Filtered-out keypoints are zero-weighted, not removed.
struct FilteredDetection {
  Detection2D detection;
  VecX filtered_confidence;
  double threshold = 0.0;
  int survivors = 0;
};

// Camera for one view. R is the identity by convention: the body's per-view
// global orientation absorbs the camera rotation, only translation remains.
struct CameraView {
  CameraIntrinsics intrinsics;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

inline FilteredDetection filter_confidence(const Detection2D& d, double lambda) {
  d.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw SchemaError("filter_confidence: lambda must lie in [0,1]");
  }
  FilteredDetection out;
  out.detection = d;
  out.threshold = lambda;
  out.filtered_confidence = VecX::Zero(d.confidence.size());
  for (Eigen::Index j = 0; j < d.confidence.size(); ++j) {
    if (d.confidence(j) >= lambda) {
      out.filtered_confidence(j) = d.confidence(j);
      ++out.survivors;
    }
  }
  return out;
}

/// Confidence-weighted reprojection residuals against already-computed model
/// keypoints. Pair j carries sqrt(c_j) * (detected_j - projected_j) so the
/// squared norm of the vector is the confidence-weighted 2D loss. Keypoints
/// with zero filtered confidence contribute zero regardless of depth; a
/// surviving keypoint behind the camera is a GeometryError naming its index.
inline VecX reprojection_residuals_of(const Points3& keypoints,
                                      const CameraView& cam,
                                      const FilteredDetection& d) {
  const Eigen::Index k = keypoints.rows();
  if (d.detection.keypoints.rows() != k) {
    throw SchemaError("reprojection_residuals: detection/model keypoint mismatch");
  }
  VecX r = VecX::Zero(2 * k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double c = d.filtered_confidence(j);
    if (c == 0.0) continue;
    const Vec3 p = cam.rotation * keypoints.row(j).transpose() + cam.translation;
    if (!(p.z() > 0.0)) {
      throw GeometryError("reprojection_residuals: non-positive depth at keypoint " +
                          std::to_string(j) + " (view " +
                          std::to_string(d.detection.view_id) + ")");
    }
    const double w = std::sqrt(c);
    const double u = cam.intrinsics.focal * p.x() / p.z() + cam.intrinsics.principal.x();
    const double v = cam.intrinsics.focal * p.y() / p.z() + cam.intrinsics.principal.y();
    r(2 * j) = w * (d.detection.keypoints(j, 0) - u);
    r(2 * j + 1) = w * (d.detection.keypoints(j, 1) - v);
  }
  return r;
}

inline VecX reprojection_residuals(const BodyModel& model, const BodyParams& params,
                                   const CameraView& cam, const FilteredDetection& d) {
  return reprojection_residuals_of(keypoints_of(model, params), cam, d);
}

/// Per-view confidence-weighted 2D reprojection loss: the squared norm of
/// reprojection_residuals. Zero iff every surviving keypoint reprojects exactly.
inline double loss_2d_single(const BodyModel& model, const BodyParams& params,
                             const CameraView& cam, const FilteredDetection& d) {
  return reprojection_residuals(model, params, cam, d).squaredNorm();
}

/// Multi-view 2D loss: the per-view losses evaluated at the canonical
/// parameters (shared body, per-view orientation/translation), summed in
/// view order.
inline double loss_2d_multi(const BodyModel& model, const CanonicalParams& canonical,
                            const std::vector<CameraView>& cams,
                            const std::vector<FilteredDetection>& dets) {
  canonical.validate();
  if (cams.size() != dets.size() ||
      static_cast<int>(cams.size()) != canonical.num_views()) {
    throw SchemaError("loss_2d_multi: view list lengths disagree");
  }
  double total = 0.0;
  for (int i = 0; i < canonical.num_views(); ++i) {
    CameraView cam = cams[i];
    cam.translation = canonical.view_translation[i];
    try {
      total += loss_2d_single(model, canonical.view_params(i), cam, dets[i]);
    } catch (const GeometryError& e) {
      throw GeometryError("view " + std::to_string(i) + ": " + e.what());
    }
  }
  return total;
}

}  // namespace canopose
