#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "canopose/body_model.hpp"

namespace canopose {

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline nlohmann::json points_to_json(const Points3& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    rows.push_back({p(i, 0), p(i, 1), p(i, 2)});
  }
  return rows;
}

inline nlohmann::json matrix_to_json(const MatX& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Points3 points_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw SchemaError(std::string(field) + ": expected array");
  Points3 out(static_cast<Eigen::Index>(j.size()), 3);
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != 3) {
      throw SchemaError(std::string(field) + ": row " + std::to_string(i) +
                        " is not a 3-vector");
    }
    for (int c = 0; c < 3; ++c) out(static_cast<Eigen::Index>(i), c) = j[i][c].get<double>();
  }
  return out;
}

inline MatX matrix_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) {
    throw SchemaError(std::string(field) + ": expected non-empty 2D array");
  }
  const size_t cols = j[0].size();
  MatX out(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) {
      throw SchemaError(std::string(field) + ": ragged rows");
    }
    for (size_t c = 0; c < cols; ++c) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          j[i][c].get<double>();
    }
  }
  return out;
}

// [v][axis][coeff] nested array -> (3*n_vertices) x n_coeffs
inline MatX vertex_dirs_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) {
    throw SchemaError(std::string(field) + ": expected non-empty 3D array");
  }
  const size_t n_coeffs = j[0][0].size();
  MatX out(static_cast<Eigen::Index>(3 * j.size()),
           static_cast<Eigen::Index>(n_coeffs));
  for (size_t v = 0; v < j.size(); ++v) {
    if (!j[v].is_array() || j[v].size() != 3) {
      throw SchemaError(std::string(field) + ": vertex " + std::to_string(v) +
                        " is not a 3 x n_coeffs block");
    }
    for (int axis = 0; axis < 3; ++axis) {
      if (j[v][axis].size() != n_coeffs) {
        throw SchemaError(std::string(field) + ": ragged coefficient rows");
      }
      for (size_t s = 0; s < n_coeffs; ++s) {
        out(static_cast<Eigen::Index>(3 * v + axis),
            static_cast<Eigen::Index>(s)) = j[v][axis][s].get<double>();
      }
    }
  }
  return out;
}

inline nlohmann::json vertex_dirs_to_json(const MatX& dirs) {
  nlohmann::json verts = nlohmann::json::array();
  for (Eigen::Index v = 0; v < dirs.rows() / 3; ++v) {
    nlohmann::json block = nlohmann::json::array();
    for (int axis = 0; axis < 3; ++axis) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index s = 0; s < dirs.cols(); ++s) {
        row.push_back(dirs(3 * v + axis, s));
      }
      block.push_back(std::move(row));
    }
    verts.push_back(std::move(block));
  }
  return verts;
}

}  // namespace detail

inline BodyModel model_from_json(const nlohmann::json& j) {
  using detail::matrix_from_json;
  using detail::points_from_json;
  using detail::vertex_dirs_from_json;
  for (const char* field :
       {"schema_version", "n_vertices", "n_joints", "n_keypoints", "template",
        "shape_dirs", "skin_weights", "parents", "joint_regressor",
        "keypoint_regressor"}) {
    if (!j.contains(field)) {
      throw SchemaError(std::string("body model: missing field '") + field + "'");
    }
  }
  if (j["schema_version"].get<int>() != kModelSchemaVersion) {
    throw SchemaError("body model: unsupported schema_version");
  }
  BodyModel m;
  m.n_vertices = j["n_vertices"].get<int>();
  m.n_joints = j["n_joints"].get<int>();
  m.n_keypoints = j["n_keypoints"].get<int>();
  m.template_vertices = points_from_json(j["template"], "template");
  m.shape_dirs = vertex_dirs_from_json(j["shape_dirs"], "shape_dirs");
  m.skin_weights = matrix_from_json(j["skin_weights"], "skin_weights");
  m.parents = j["parents"].get<std::vector<int>>();
  if (!m.parents.empty() && m.parents[0] == 0) m.parents[0] = -1;  // root = self
  m.joint_regressor = matrix_from_json(j["joint_regressor"], "joint_regressor");
  m.keypoint_regressor =
      matrix_from_json(j["keypoint_regressor"], "keypoint_regressor");
  if (j.contains("pose_dirs") && !j["pose_dirs"].is_null()) {
    m.pose_dirs = vertex_dirs_from_json(j["pose_dirs"], "pose_dirs");
  }
  m.validate();
  return m;
}

inline nlohmann::json model_to_json(const BodyModel& m) {
  nlohmann::json j;
  j["schema_version"] = kModelSchemaVersion;
  j["n_vertices"] = m.n_vertices;
  j["n_joints"] = m.n_joints;
  j["n_keypoints"] = m.n_keypoints;
  j["template"] = detail::points_to_json(m.template_vertices);
  j["shape_dirs"] = detail::vertex_dirs_to_json(m.shape_dirs);
  j["skin_weights"] = detail::matrix_to_json(m.skin_weights);
  j["parents"] = m.parents;
  j["joint_regressor"] = detail::matrix_to_json(m.joint_regressor);
  j["keypoint_regressor"] = detail::matrix_to_json(m.keypoint_regressor);
  if (m.pose_dirs.size() != 0) {
    j["pose_dirs"] = detail::vertex_dirs_to_json(m.pose_dirs);
  }
  return j;
}

/// Loads and validates a body model file. Throws SchemaError naming the
/// failing field or invariant.
inline BodyModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw SchemaError("load_model: cannot open '" + path + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("load_model: malformed JSON in '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const BodyModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw SchemaError("save_model: cannot open '" + path + "' for writing");
  }
  out << model_to_json(m).dump(1) << "\n";
}

}  // namespace canopose
