#pragma once

#include <nlohmann/json.hpp>

#include "canopose/types.hpp"

namespace canopose::jsonu {

inline nlohmann::json vec3(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec3(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.size() != 3) {
    throw SchemaError(std::string(field) + ": expected a 3-vector");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json vector(const VecX& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline VecX vector(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw SchemaError(std::string(field) + ": expected array");
  VecX out(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) out(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return out;
}

template <typename PointsT>
nlohmann::json points(const PointsT& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < p.cols(); ++c) row.push_back(p(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename PointsT>
PointsT points(const nlohmann::json& j, const char* field) {
  PointsT out;
  if (!j.is_array()) throw SchemaError(std::string(field) + ": expected array");
  out.resize(static_cast<Eigen::Index>(j.size()), out.cols());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != out.cols()) {
      throw SchemaError(std::string(field) + ": row " + std::to_string(i) +
                        " has wrong width");
    }
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      out(static_cast<Eigen::Index>(i), c) = j[i][c].get<double>();
    }
  }
  return out;
}

inline const nlohmann::json& need(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) {
    throw SchemaError(std::string("missing field '") + field + "'");
  }
  return j.at(field);
}

}  // namespace canopose::jsonu
