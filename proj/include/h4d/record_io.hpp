#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "h4d/json_io.hpp"
#include "h4d/records.hpp"

namespace h4d {

// JSON field names and layouts of the JSONL files exchanged by the tools.
// Writers emit exactly the schema fields; readers ignore anything else.

inline Json bbox_to_json(const BBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

inline BBox bbox_from_json(const Json& obj, const char* key = "bbox") {
  const std::vector<double> v = get_numbers(obj, key);
  if (v.size() != 4) throw ParseError(key, "expected [x, y, w, h]");
  return {v[0], v[1], v[2], v[3]};
}

inline Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& obj, const char* key) {
  const std::vector<double> v = get_numbers(obj, key);
  if (v.size() != 3) throw ParseError(key, "expected 3 numbers");
  return {v[0], v[1], v[2]};
}

inline Json smpl_to_json(const SmplParams& s) {
  if (s.pose.size() != kNumJoints) throw DimensionMismatch("smpl record needs 24 rotations");
  std::vector<double> go, bp;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) go.push_back(s.pose.rotations[0](r, c));
  for (int i = 1; i < kNumJoints; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) bp.push_back(s.pose.rotations[i](r, c));
  Json j;
  j["global_orient"] = go;
  j["body_pose"] = bp;
  j["betas"] = std::vector<double>(s.shape.beta.data(), s.shape.beta.data() + s.shape.beta.size());
  return j;
}

inline SmplParams smpl_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("smpl", "expected an object");
  const std::vector<double> go = get_numbers(j, "global_orient");
  const std::vector<double> bp = get_numbers(j, "body_pose");
  const std::vector<double> betas = get_numbers(j, "betas");
  if (go.size() != 9) throw ParseError("global_orient", "expected 9 numbers");
  if (bp.size() != 9 * (kNumJoints - 1)) throw ParseError("body_pose", "expected 207 numbers");
  if (betas.size() != kNumBetas) throw ParseError("betas", "expected 10 numbers");
  SmplParams s;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) s.pose.rotations[0](r, c) = go[3 * r + c];
  for (int i = 1; i < kNumJoints; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s.pose.rotations[i](r, c) = bp[9 * (i - 1) + 3 * r + c];
  s.shape.beta = Eigen::Map<const Eigen::VectorXd>(betas.data(), kNumBetas);
  check_pose(s.pose);
  return s;
}

inline Json keypoints_to_json(const Keypoints2D& k) {
  Json a = Json::array();
  for (int i = 0; i < k.size(); ++i) a.push_back(Json::array({k.uv(0, i), k.uv(1, i), k.conf[i]}));
  return a;
}

inline Keypoints2D keypoints_from_json(const Json& obj, const char* key = "kp2d") {
  Keypoints2D k;
  if (!has_value(obj, key)) {
    k.uv.resize(2, 0);
    k.conf.resize(0);
    return k;
  }
  const Json& a = obj.at(key);
  if (!a.is_array()) throw ParseError(key, "expected an array of [u, v, conf]");
  k.uv.resize(2, static_cast<Eigen::Index>(a.size()));
  k.conf.resize(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Json& p = a[i];
    if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number())
      throw ParseError(key, "entry " + std::to_string(i) + " is not [u, v, conf]");
    k.uv(0, i) = p[0].get<double>();
    k.uv(1, i) = p[1].get<double>();
    k.conf[i] = p[2].get<double>();
    if (k.conf[i] < 0.0 || k.conf[i] > 1.0) throw ParseError(key, "confidence outside [0, 1]");
  }
  return k;
}

inline Json points3_to_json(const Eigen::Matrix3Xd& X) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < X.cols(); ++i) a.push_back(Json::array({X(0, i), X(1, i), X(2, i)}));
  return a;
}

inline Eigen::Matrix3Xd points3_from_json(const Json& obj, const char* key) {
  const Json& a = obj.at(key);
  if (!a.is_array()) throw ParseError(key, "expected an array of [x, y, z]");
  Eigen::Matrix3Xd X(3, static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_array() || a[i].size() != 3) throw ParseError(key, "entry is not [x, y, z]");
    for (int c = 0; c < 3; ++c) X(c, i) = a[i][c].get<double>();
  }
  return X;
}

// --- detections -------------------------------------------------------------

inline Json detection_to_json(const Detection& d) {
  Json j;
  j["bbox"] = bbox_to_json(d.bbox);
  j["kp2d"] = keypoints_to_json(d.keypoints);
  j["smpl"] = d.smpl ? smpl_to_json(*d.smpl) : Json(nullptr);
  j["cam_t"] = d.cam_t ? vec3_to_json(*d.cam_t) : Json(nullptr);
  j["embedding"] = d.embedding ? Json(std::vector<double>(d.embedding->data(), d.embedding->data() + d.embedding->size()))
                               : Json(nullptr);
  j["score"] = d.score;
  return j;
}

inline constexpr double kEmbeddingNormTol = 1e-6;

inline Detection detection_from_json(const Json& j) {
  Detection d;
  d.bbox = bbox_from_json(j);
  if (!(d.bbox.w > 0 && d.bbox.h > 0)) throw InvariantViolation("bbox", "width and height must be positive");
  d.keypoints = keypoints_from_json(j);
  if (has_value(j, "smpl")) d.smpl = smpl_from_json(j.at("smpl"));
  if (has_value(j, "cam_t")) d.cam_t = vec3_from_json(j, "cam_t");
  if (has_value(j, "embedding")) {
    const std::vector<double> e = get_numbers(j, "embedding");
    d.embedding = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
    if (std::abs(d.embedding->norm() - 1.0) > kEmbeddingNormTol)
      throw InvariantViolation("embedding", "embedding must have unit L2 norm");
  }
  d.score = has_value(j, "score") ? get_field<double>(j, "score") : 1.0;
  return d;
}

inline Json detection_frame_to_json(const DetectionFrame& f) {
  Json j;
  j["frame"] = f.frame;
  j["detections"] = Json::array();
  for (const Detection& d : f.detections) j["detections"].push_back(detection_to_json(d));
  return j;
}

inline DetectionFrame detection_frame_from_json(const Json& j) {
  DetectionFrame f;
  f.frame = get_field<long long>(j, "frame");
  if (!j.contains("detections") || !j.at("detections").is_array()) throw ParseError("detections", "expected an array");
  for (const Json& d : j.at("detections")) f.detections.push_back(detection_from_json(d));
  return f;
}

// --- tracks -----------------------------------------------------------------

inline Json track_record_to_json(const TrackRecord& t) {
  Json j;
  j["id"] = t.id;
  j["smpl"] = t.smpl ? smpl_to_json(*t.smpl) : Json(nullptr);
  j["cam_t"] = t.cam_t ? vec3_to_json(*t.cam_t) : Json(nullptr);
  j["bbox"] = bbox_to_json(t.bbox);
  j["amodal"] = t.amodal;
  if (t.keypoints) j["kp2d"] = keypoints_to_json(*t.keypoints);
  if (t.joints3d) j["joints3d"] = points3_to_json(*t.joints3d);
  return j;
}

inline TrackRecord track_record_from_json(const Json& j) {
  TrackRecord t;
  t.id = get_field<int>(j, "id");
  if (has_value(j, "smpl")) t.smpl = smpl_from_json(j.at("smpl"));
  if (has_value(j, "cam_t")) t.cam_t = vec3_from_json(j, "cam_t");
  t.bbox = bbox_from_json(j);
  t.amodal = has_value(j, "amodal") ? get_field<bool>(j, "amodal") : false;
  if (has_value(j, "kp2d")) t.keypoints = keypoints_from_json(j);
  if (has_value(j, "joints3d")) t.joints3d = points3_from_json(j, "joints3d");
  return t;
}

inline Json track_frame_to_json(const TrackFrame& f) {
  Json j;
  j["frame"] = f.frame;
  j["tracks"] = Json::array();
  for (const TrackRecord& t : f.tracks) j["tracks"].push_back(track_record_to_json(t));
  return j;
}

inline TrackFrame track_frame_from_json(const Json& j) {
  TrackFrame f;
  f.frame = get_field<long long>(j, "frame");
  if (!j.contains("tracks") || !j.at("tracks").is_array()) throw ParseError("tracks", "expected an array");
  std::set<int> ids;
  for (const Json& t : j.at("tracks")) {
    f.tracks.push_back(track_record_from_json(t));
    if (!ids.insert(f.tracks.back().id).second)
      throw InvariantViolation("id", "duplicate id " + std::to_string(f.tracks.back().id) + " in frame " +
                                         std::to_string(f.frame));
  }
  return f;
}

// --- files ------------------------------------------------------------------

namespace detail {
template <typename Frame>
void check_increasing(const std::vector<Frame>& frames, const std::string& path) {
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].frame <= frames[i - 1].frame)
      throw ParseError("frame", path + ": frames must be strictly increasing (line " + std::to_string(i + 1) + ")");
}

template <typename Frame, typename F>
std::vector<Frame> read_frames(const std::string& path, F&& parse) {
  std::vector<Frame> out;
  for (const Json& j : read_jsonl_file(path)) out.push_back(parse(j));
  check_increasing(out, path);
  return out;
}
}  // namespace detail

inline std::vector<DetectionFrame> read_detections(const std::string& path) {
  return detail::read_frames<DetectionFrame>(path, detection_frame_from_json);
}

inline std::vector<TrackFrame> read_tracks(const std::string& path) {
  return detail::read_frames<TrackFrame>(path, track_frame_from_json);
}

inline std::string detections_to_jsonl(const std::vector<DetectionFrame>& frames) {
  std::string out;
  for (const DetectionFrame& f : frames) out += dump_json(detection_frame_to_json(f)) + "\n";
  return out;
}

inline std::string tracks_to_jsonl(const std::vector<TrackFrame>& frames) {
  std::string out;
  for (const TrackFrame& f : frames) out += dump_json(track_frame_to_json(f)) + "\n";
  return out;
}

inline void write_detections(const std::string& path, const std::vector<DetectionFrame>& frames) {
  write_text_file(path, detections_to_jsonl(frames));
}

inline void write_tracks(const std::string& path, const std::vector<TrackFrame>& frames) {
  write_text_file(path, tracks_to_jsonl(frames));
}

}  // namespace h4d
