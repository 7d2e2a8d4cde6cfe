#pragma once

#include <string>
#include <vector>

#include "h4d/body_model.hpp"
#include "h4d/json_io.hpp"

namespace h4d {

namespace detail {

inline Json flat(const RowMatrix& a) {
  return Json(std::vector<double>(a.data(), a.data() + a.size()));
}

inline RowMatrix unflat(const Json& obj, const char* key, Eigen::Index rows, Eigen::Index cols) {
  const std::vector<double> v = get_numbers(obj, key);
  if (static_cast<Eigen::Index>(v.size()) != rows * cols)
    throw ParseError(key, "expected " + std::to_string(rows * cols) + " values, found " +
                              std::to_string(v.size()));
  return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

}  // namespace detail

inline Json model_to_json(const BodyModel& m) {
  Json j;
  j["n_vertices"] = m.n_vertices;
  j["n_joints"] = m.n_joints;
  j["template"] = detail::flat(m.template_vertices);
  j["shape_blend"] = detail::flat(m.shape_blend);
  j["pose_blend"] = detail::flat(m.pose_blend);
  j["joint_weight_matrix"] = detail::flat(m.joint_weights);
  j["skinning_weights"] = detail::flat(m.skinning_weights);
  j["parents"] = m.parents;
  return j;
}

/// Parses and validates. The shape-blend width is inferred from the array
/// length (10 for standard models).
inline BodyModel model_from_json(const Json& j) {
  BodyModel m;
  m.n_vertices = get_field<int>(j, "n_vertices");
  m.n_joints = get_field<int>(j, "n_joints");
  const int N = m.n_vertices;
  const int k = m.n_joints;
  if (N <= 0) throw ParseError("n_vertices", "must be positive");
  if (k <= 0) throw ParseError("n_joints", "must be positive");
  m.template_vertices = detail::unflat(j, "template", N, 3);
  const std::size_t n_shape = get_numbers(j, "shape_blend").size();
  if (n_shape == 0 || n_shape % (3 * static_cast<std::size_t>(N)) != 0)
    throw ParseError("shape_blend", "length is not a multiple of 3 * n_vertices");
  m.shape_blend = detail::unflat(j, "shape_blend", 3 * N, static_cast<Eigen::Index>(n_shape / (3 * N)));
  m.pose_blend = detail::unflat(j, "pose_blend", 3 * N, kPoseFeaturesPerJoint * (k - 1));
  m.joint_weights = detail::unflat(j, "joint_weight_matrix", N, k);
  m.skinning_weights = detail::unflat(j, "skinning_weights", N, k);
  const std::vector<double> parents = get_numbers(j, "parents");
  if (static_cast<int>(parents.size()) != k) throw ParseError("parents", "length != n_joints");
  for (double p : parents) {
    if (p != static_cast<int>(p)) throw ParseError("parents", "entries must be integers");
    m.parents.push_back(static_cast<int>(p));
  }
  validate(m);
  return m;
}

inline std::string serialize_model(const BodyModel& m) { return dump_json(model_to_json(m)) + "\n"; }

inline void save_model(const BodyModel& m, const std::string& path) {
  write_text_file(path, serialize_model(m));
}

inline BodyModel load_model(const std::string& path) {
  return model_from_json(parse_json(read_text_file(path), path));
}

}  // namespace h4d
