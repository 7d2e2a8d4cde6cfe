#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "h4d/body_model.hpp"
#include "h4d/camera.hpp"
#include "h4d/json_io.hpp"
#include "h4d/random.hpp"
#include "h4d/record_io.hpp"
#include "h4d/records.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

/// Frames [start, start + length) during which a person produces no detection.
struct OcclusionWindow {
  int person = 0;
  long long start = 0;
  long long length = 0;

  bool covers(int p, long long frame) const { return p == person && frame >= start && frame < start + length; }
};

struct SceneConfig {
  int n_people = 2;
  long long n_frames = 100;
  double motion_amplitude = 0.3;  // radians of per-joint sway
  double speed = 0.01;            // root speed, m/frame
  Intrinsics intrinsics{1000.0, 640.0, 360.0};
  double kp_noise_px = 0.0;
  double loc_noise_m = 0.0;
  double app_noise = 0.0;
  double dropout = 0.0;
  std::vector<OcclusionWindow> occlusions;
  int embedding_dim = 64;
  bool detections_with_smpl = true;  // otherwise detections carry keypoints only
  std::uint64_t seed = 0;

  void check() const {
    if (n_people < 0) throw InvariantViolation("n_people", "must be non-negative");
    if (n_frames < 1) throw InvariantViolation("n_frames", "must be at least 1");
    if (!(dropout >= 0.0 && dropout <= 1.0)) throw InvariantViolation("dropout", "must lie in [0, 1]");
    if (!(motion_amplitude >= 0.0 && speed >= 0.0 && kp_noise_px >= 0.0 && loc_noise_m >= 0.0 && app_noise >= 0.0))
      throw InvariantViolation("noise", "amplitudes and noise levels must be non-negative");
    if (embedding_dim < 1) throw InvariantViolation("embedding_dim", "must be positive");
    for (const OcclusionWindow& w : occlusions)
      if (w.person < 0 || w.length < 0) throw InvariantViolation("occlusions", "invalid window");
  }
};

struct SyntheticScene {
  std::vector<TrackFrame> ground_truth;
  std::vector<DetectionFrame> detections;
};

// Region the root trajectories bounce inside (camera frame, meters).
inline constexpr double kSceneHalfWidth = 2.5;
inline constexpr double kSceneNear = 4.5;
inline constexpr double kSceneFar = 9.0;

namespace detail {

struct PersonScript {
  std::vector<Mat3> base;                 // per-joint base rotation
  std::vector<Vec3> amp, freq, phase;     // per-joint sway parameters (per axis)
  ShapeParams shape;
  Vec3 location;                          // current root joint position
  Vec3 velocity;
  Eigen::VectorXd appearance;
};

inline Eigen::VectorXd random_unit(Rng& rng, int dim) {
  Eigen::VectorXd e(dim);
  for (int i = 0; i < dim; ++i) e[i] = rng.normal();
  return e / e.norm();
}

inline PersonScript make_person(Rng& rng, const SceneConfig& cfg, int p) {
  PersonScript s;
  s.base.resize(kNumJoints);
  s.amp.resize(kNumJoints);
  s.freq.resize(kNumJoints);
  s.phase.resize(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3 aa;
    for (int c = 0; c < 3; ++c) aa[c] = rng.normal(0.0, j == 0 ? 0.05 : 0.15);
    if (j == 0) aa.y() += rng.uniform(-0.6, 0.6);  // facing direction
    s.base[j] = axis_angle_to_rotmat(aa);
    for (int c = 0; c < 3; ++c) {
      s.amp[j][c] = cfg.motion_amplitude * rng.uniform(0.3, 1.0) * (j == 0 ? 0.2 : 1.0);
      s.freq[j][c] = rng.uniform(0.01, 0.05);
      s.phase[j][c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  s.shape = ShapeParams::zero();
  for (int l = 0; l < kNumBetas; ++l) s.shape.beta[l] = rng.normal(0.0, 0.5);

  const double lane = cfg.n_people > 0 ? 2.0 * kSceneHalfWidth * 0.8 / cfg.n_people : 0.0;
  const double x0 = -kSceneHalfWidth * 0.8 + lane * (p + 0.5);
  s.location = Vec3(x0 + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(5.0, 8.0));
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.velocity = Vec3(std::cos(heading), 0.0, std::sin(heading)) * cfg.speed;
  s.appearance = random_unit(rng, cfg.embedding_dim);
  return s;
}

// Pose at frame t: base rotations composed with sinusoidal sway, passed
// through the 6D encoding.
inline PoseParams pose_at(const PersonScript& s, long long t) {
  PoseParams pose = PoseParams::identity();
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3 aa;
    for (int c = 0; c < 3; ++c)
      aa[c] = s.amp[j][c] * std::sin(2.0 * std::numbers::pi * s.freq[j][c] * static_cast<double>(t) + s.phase[j][c]);
    pose.rotations[j] = rot6d_to_rotmat(rotmat_to_rot6d(s.base[j] * axis_angle_to_rotmat(aa)));
  }
  return pose;
}

inline void advance(PersonScript& s) {
  s.location += s.velocity;
  if (std::abs(s.location.x()) > kSceneHalfWidth) {
    s.velocity.x() = -s.velocity.x();
    s.location.x() = std::copysign(2.0 * kSceneHalfWidth, s.location.x()) - s.location.x();
  }
  if (s.location.z() < kSceneNear || s.location.z() > kSceneFar) {
    s.velocity.z() = -s.velocity.z();
    s.location.z() = s.location.z() < kSceneNear ? 2.0 * kSceneNear - s.location.z() : 2.0 * kSceneFar - s.location.z();
  }
}

inline BBox bounding_box(const Eigen::Matrix2Xd& uv) {
  const Eigen::Vector2d lo = uv.rowwise().minCoeff();
  const Eigen::Vector2d hi = uv.rowwise().maxCoeff();
  return {lo.x(), lo.y(), hi.x() - lo.x(), hi.y() - lo.y()};
}

}  // namespace detail

/// Generates ground-truth tracks and a corrupted detection stream.
/// Every random variate is drawn whether or not it is used, so changing a
/// noise level never changes the underlying scene.
inline SyntheticScene generate(const SceneConfig& cfg, const BodyModel& model) {
  cfg.check();
  if (model.n_joints != kNumJoints || model.n_betas() != kNumBetas)
    throw DimensionMismatch("synthetic scenes need a 24-joint, 10-beta body model");
  Rng rng(cfg.seed);
  std::vector<detail::PersonScript> people;
  for (int p = 0; p < cfg.n_people; ++p) people.push_back(detail::make_person(rng, cfg, p));

  SyntheticScene scene;
  for (long long t = 0; t < cfg.n_frames; ++t) {
    TrackFrame gt{t, {}};
    DetectionFrame det{t, {}};
    for (int p = 0; p < cfg.n_people; ++p) {
      detail::PersonScript& s = people[p];
      SmplParams smpl{detail::pose_at(s, t), s.shape};
      const MeshAndJoints mj = forward(model, smpl.pose, smpl.shape);
      // The root joint is fixed under the pose, so it sits at location.
      const Vec3 cam_t = s.location - mj.joints.col(0);
      const Eigen::Matrix3Xd mesh = mj.mesh.colwise() + cam_t;
      const Eigen::Matrix3Xd joints = mj.joints.colwise() + cam_t;

      TrackRecord rec;
      rec.id = p;
      rec.smpl = smpl;
      rec.cam_t = cam_t;
      rec.bbox = detail::bounding_box(project(mesh, cfg.intrinsics, CameraPose()));
      rec.keypoints = Keypoints2D{project(joints, cfg.intrinsics, CameraPose()), Eigen::VectorXd::Ones(joints.cols())};
      rec.joints3d = joints;

      Detection d;
      d.bbox = rec.bbox;
      d.keypoints = *rec.keypoints;
      for (Eigen::Index i = 0; i < d.keypoints.uv.cols(); ++i)
        for (int c = 0; c < 2; ++c) d.keypoints.uv(c, i) += cfg.kp_noise_px * rng.normal();
      Vec3 noisy_t = cam_t;
      for (int c = 0; c < 3; ++c) noisy_t[c] += cfg.loc_noise_m * rng.normal();
      Eigen::VectorXd e = s.appearance;
      for (int i = 0; i < cfg.embedding_dim; ++i) e[i] += cfg.app_noise * rng.normal();
      d.embedding = e / e.norm();
      if (cfg.detections_with_smpl) {
        d.smpl = smpl;
        d.cam_t = noisy_t;
      }
      d.score = 0.9;
      const bool dropped = rng.uniform() < cfg.dropout;
      const bool occluded = std::any_of(cfg.occlusions.begin(), cfg.occlusions.end(),
                                        [&](const OcclusionWindow& w) { return w.covers(p, t); });
      if (!dropped && !occluded) det.detections.push_back(std::move(d));
      gt.tracks.push_back(std::move(rec));
      detail::advance(s);
    }
    // Detection order carries no identity information.
    for (std::size_t i = det.detections.size(); i > 1; --i)
      std::swap(det.detections[i - 1], det.detections[rng.next() % i]);
    scene.ground_truth.push_back(std::move(gt));
    scene.detections.push_back(std::move(det));
  }
  return scene;
}

// --- configuration file -----------------------------------------------------

inline Json intrinsics_to_json(const Intrinsics& K) { return Json{{"f", K.focal}, {"cx", K.cx}, {"cy", K.cy}}; }

inline Intrinsics intrinsics_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("intrinsics", "expected an object {f, cx, cy}");
  const double f = get_field<double>(j, "f");
  if (!(f > 0.0)) throw InvariantViolation("f", "focal length must be positive");
  return Intrinsics(f, get_field<double>(j, "cx"), get_field<double>(j, "cy"));
}

inline Json scene_config_to_json(const SceneConfig& c) {
  Json j;
  j["n_people"] = c.n_people;
  j["n_frames"] = c.n_frames;
  j["motion_amplitude"] = c.motion_amplitude;
  j["speed"] = c.speed;
  j["intrinsics"] = intrinsics_to_json(c.intrinsics);
  j["kp_noise_px"] = c.kp_noise_px;
  j["loc_noise_m"] = c.loc_noise_m;
  j["app_noise"] = c.app_noise;
  j["dropout"] = c.dropout;
  j["occlusions"] = Json::array();
  for (const OcclusionWindow& w : c.occlusions)
    j["occlusions"].push_back(Json{{"person", w.person}, {"start", w.start}, {"length", w.length}});
  j["embedding_dim"] = c.embedding_dim;
  j["detections_with_smpl"] = c.detections_with_smpl;
  j["seed"] = c.seed;
  return j;
}

/// Missing fields keep their defaults.
inline SceneConfig scene_config_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("config", "expected an object");
  SceneConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (has_value(j, key)) field = get_field<std::decay_t<decltype(field)>>(j, key);
  };
  opt("n_people", c.n_people);
  opt("n_frames", c.n_frames);
  opt("motion_amplitude", c.motion_amplitude);
  opt("speed", c.speed);
  if (has_value(j, "intrinsics")) c.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  opt("kp_noise_px", c.kp_noise_px);
  opt("loc_noise_m", c.loc_noise_m);
  opt("app_noise", c.app_noise);
  opt("dropout", c.dropout);
  if (has_value(j, "occlusions")) {
    if (!j.at("occlusions").is_array()) throw ParseError("occlusions", "expected an array");
    for (const Json& w : j.at("occlusions"))
      c.occlusions.push_back({get_field<int>(w, "person"), get_field<long long>(w, "start"),
                              get_field<long long>(w, "length")});
  }
  opt("embedding_dim", c.embedding_dim);
  opt("detections_with_smpl", c.detections_with_smpl);
  opt("seed", c.seed);
  c.check();
  return c;
}

}  // namespace h4d
