#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "h4d/assignment.hpp"
#include "h4d/body_model.hpp"
#include "h4d/camera.hpp"
#include "h4d/fitting.hpp"
#include "h4d/joint_evaluator.hpp"
#include "h4d/json_io.hpp"
#include "h4d/predictor.hpp"
#include "h4d/records.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

enum class PoseDistanceKind { geodesic, frobenius };
enum class PredictorKind { baseline, masked_transformer };

struct TrackerConfig {
  double w_pose = 1.0;
  double w_loc = 1.0;
  double w_app = 1.0;
  double c_max = 3.0;
  int max_age = 24;
  double birth_threshold = 0.5;
  double appearance_ema = 0.9;
  PredictorKind predictor = PredictorKind::baseline;
  PoseDistanceKind pose_distance = PoseDistanceKind::geodesic;
  FitConfig fit;  // used when a detection carries keypoints only

  void check() const {
    if (w_pose < 0 || w_loc < 0 || w_app < 0) throw InvariantViolation("weights", "cost weights must be >= 0");
    if (max_age < 1) throw InvariantViolation("max_age", "must be >= 1");
    if (!(appearance_ema >= 0.0 && appearance_ema <= 1.0))
      throw InvariantViolation("appearance_ema", "must lie in [0, 1]");
    if (std::isnan(c_max)) throw InvariantViolation("c_max", "must be a number");
    fit.check();
  }
};

/// A detection in 3D: pose, root location in the camera frame, appearance.
struct Lifted3D {
  PoseParams pose;
  ShapeParams shape;
  Vec3 cam_t = Vec3::Zero();
  Vec3 location = Vec3::Zero();
  std::optional<Eigen::VectorXd> appearance;
};

/// Parameters come from the detection when it carries SMPL and a
/// translation, otherwise from fitting its keypoints.
inline Lifted3D lift(const Detection& det, const Intrinsics& K, const JointEvaluator& joints,
                     const FitConfig& fit_cfg = {}) {
  Lifted3D out;
  if (det.smpl && det.cam_t) {
    out.pose = det.smpl->pose;
    out.shape = det.smpl->shape;
    out.cam_t = *det.cam_t;
  } else if (!det.keypoints.empty()) {
    const FitResult r = fit(det.keypoints.uv, det.keypoints.conf, K, joints, fit_cfg);
    out.pose = r.pose;
    out.shape = r.shape;
    out.cam_t = r.t;
  } else {
    throw UnliftableDetection("detection has neither SMPL parameters with a translation nor keypoints");
  }
  out.location = out.cam_t + joints.joint(out.pose, out.shape, 0);
  if (!out.location.allFinite() || !(out.location.z() > 0.0))
    throw UnliftableDetection("lifted location must be finite and in front of the camera");
  if (det.embedding) {
    const double n = det.embedding->norm();
    if (!(n > 0.0)) throw UnliftableDetection("zero appearance embedding");
    out.appearance = *det.embedding / n;
  }
  return out;
}

inline Lifted3D lift(const Detection& det, const Intrinsics& K, const BodyModel& model, const FitConfig& fit_cfg = {}) {
  return lift(det, K, JointEvaluator(model), fit_cfg);
}

/// Mean geodesic angle over joints (radians).
inline double pose_distance(const PoseParams& a, const PoseParams& b) {
  if (a.size() != b.size() || a.size() == 0) throw DimensionMismatch("pose_distance: pose sizes differ");
  double s = 0.0;
  for (int j = 0; j < a.size(); ++j) s += geodesic_angle(a.rotations[j], b.rotations[j]);
  return s / a.size();
}

/// Mean entrywise (Frobenius) distance over joints.
inline double pose_distance_frobenius(const PoseParams& a, const PoseParams& b) {
  if (a.size() != b.size() || a.size() == 0) throw DimensionMismatch("pose_distance: pose sizes differ");
  double s = 0.0;
  for (int j = 0; j < a.size(); ++j) s += (a.rotations[j] - b.rotations[j]).norm();
  return s / a.size();
}

/// What a tracklet expects to see next; compared against lifted detections.
struct TrackPrediction {
  PoseParams pose;
  Vec3 location = Vec3::Zero();
  std::optional<Eigen::VectorXd> appearance;
};

inline double association_cost(const TrackPrediction& p, const Lifted3D& d, const TrackerConfig& cfg) {
  const double dp = cfg.pose_distance == PoseDistanceKind::geodesic ? pose_distance(p.pose, d.pose)
                                                                     : pose_distance_frobenius(p.pose, d.pose);
  double c = cfg.w_pose * dp + cfg.w_loc * (p.location - d.location).norm();
  // The appearance term needs both embeddings.
  if (p.appearance && d.appearance) {
    if (p.appearance->size() != d.appearance->size()) throw DimensionMismatch("appearance embedding sizes differ");
    c += cfg.w_app * (1.0 - p.appearance->dot(*d.appearance));
  }
  return c;
}

/// |T| x |D| costs; entries above the gate are kForbidden.
inline Eigen::MatrixXd association_cost(const std::vector<TrackPrediction>& tracks, const std::vector<Lifted3D>& dets,
                                       const TrackerConfig& cfg) {
  Eigen::MatrixXd C(static_cast<Eigen::Index>(tracks.size()), static_cast<Eigen::Index>(dets.size()));
  for (std::size_t i = 0; i < tracks.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j) {
      const double c = association_cost(tracks[i], dets[j], cfg);
      C(i, j) = c > cfg.c_max ? kForbidden : c;
    }
  return C;
}

enum class TrackStatus { active, missed, dead };

struct Tracklet {
  int id = 0;
  TrackHistory history;          // most recent kMaxHistory slots
  TrackHistory anchors;          // last two observed slots
  std::optional<Eigen::VectorXd> appearance;
  int missed_count = 0;
  TrackStatus status = TrackStatus::active;
  TrackPrediction prediction;
  ShapeParams shape;
  Vec3 root_offset = Vec3::Zero();  // location - cam_t
  BBox last_bbox;
  Vec3 last_location = Vec3::Zero();  // at last_bbox

  /// Predictor input: the recent window, with the latest observations
  /// prepended when a long gap has pushed them out.
  TrackHistory window() const {
    TrackHistory w = history;
    for (auto it = anchors.rbegin(); it != anchors.rend(); ++it) {
      if (!w.empty() && it->frame >= w.front().frame) continue;
      if (static_cast<int>(w.size()) == kMaxHistory) {
        // Drop the oldest unobserved slot to make room.
        auto gap = std::find_if(w.begin(), w.end(), [](const HistorySlot& s) { return !s.observed; });
        if (gap == w.end()) break;
        w.erase(gap);
      }
      w.insert(w.begin(), *it);
    }
    return w;
  }

  void push(HistorySlot s) {
    if (s.observed) {
      anchors.push_back(s);
      if (anchors.size() > 2) anchors.erase(anchors.begin());
    }
    history.push_back(std::move(s));
    if (static_cast<int>(history.size()) > kMaxHistory) history.erase(history.begin());
  }
};

/// Sequential tracker over one video stream.
class Tracker {
 public:
  Tracker(const BodyModel& model, const Intrinsics& K, TrackerConfig cfg = {},
          std::optional<PredictorWeights> weights = std::nullopt)
      : joints_(model), K_(K), cfg_(std::move(cfg)) {
    cfg_.check();
    if (cfg_.predictor == PredictorKind::masked_transformer) {
      if (!weights) throw InputError("tracker: the masked-transformer predictor needs weights");
      transformer_ = std::make_shared<const MaskedPosePredictor>(std::move(*weights));
    }
  }

  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  int births() const { return next_id_; }
  const TrackerConfig& config() const { return cfg_; }

  TrackFrame step(const DetectionFrame& frame) {
    if (last_frame_ && frame.frame <= *last_frame_) throw NonMonotoneFrame(frame.frame, *last_frame_);
    last_frame_ = frame.frame;

    std::vector<TrackPrediction> preds;
    for (Tracklet& t : tracklets_) {
      t.prediction = predict(t, frame.frame);
      preds.push_back(t.prediction);
    }
    std::vector<Lifted3D> lifted;
    for (const Detection& d : frame.detections) lifted.push_back(lift(d, K_, joints_, cfg_.fit));

    const Assignment a = assign(association_cost(preds, lifted, cfg_));

    TrackFrame out{frame.frame, {}};
    for (auto [ti, di] : a.matches) {
      Tracklet& t = tracklets_[ti];
      observe(t, frame, frame.detections[di], lifted[di]);
      out.tracks.push_back(observed_record(t, frame.detections[di], lifted[di]));
    }
    std::vector<char> alive(tracklets_.size(), 1);
    for (int ti : a.unmatched_rows) {
      Tracklet& t = tracklets_[ti];
      ++t.missed_count;
      if (t.missed_count > cfg_.max_age) {
        t.status = TrackStatus::dead;
        alive[ti] = 0;
        continue;
      }
      t.status = TrackStatus::missed;
      t.push({frame.frame, t.prediction.pose, t.prediction.location, false});
      out.tracks.push_back(amodal_record(t));
    }
    std::vector<Tracklet> kept;
    for (std::size_t i = 0; i < tracklets_.size(); ++i)
      if (alive[i]) kept.push_back(std::move(tracklets_[i]));
    tracklets_ = std::move(kept);

    for (int di : a.unmatched_cols) {
      const Detection& d = frame.detections[di];
      if (!(d.score >= cfg_.birth_threshold)) continue;
      Tracklet t;
      t.id = next_id_++;
      t.appearance = lifted[di].appearance;
      observe(t, frame, d, lifted[di]);
      out.tracks.push_back(observed_record(t, d, lifted[di]));
      tracklets_.push_back(std::move(t));
    }
    std::sort(tracklets_.begin(), tracklets_.end(), [](const Tracklet& x, const Tracklet& y) { return x.id < y.id; });
    std::sort(out.tracks.begin(), out.tracks.end(), [](const TrackRecord& x, const TrackRecord& y) { return x.id < y.id; });
    return out;
  }

 private:
  TrackPrediction predict(const Tracklet& t, long long frame) const {
    const TrackHistory w = t.window();
    const PosePrediction p = transformer_ ? transformer_->predict_frames(w, {frame})[0]
                                          : baseline_predict_frames(w, {frame})[0];
    return {p.pose, p.location, t.appearance};
  }

  void observe(Tracklet& t, const DetectionFrame& frame, const Detection& d, const Lifted3D& l) const {
    t.missed_count = 0;
    t.status = TrackStatus::active;
    t.push({frame.frame, l.pose, l.location, true});
    if (l.appearance) {
      if (t.appearance) {
        Eigen::VectorXd e = cfg_.appearance_ema * *t.appearance + (1.0 - cfg_.appearance_ema) * *l.appearance;
        const double n = e.norm();
        t.appearance = n > 0.0 ? Eigen::VectorXd(e / n) : *l.appearance;
      } else {
        t.appearance = l.appearance;
      }
    }
    t.shape = l.shape;
    t.root_offset = l.location - l.cam_t;
    t.last_bbox = d.bbox;
    t.last_location = l.location;
  }

  static TrackRecord observed_record(const Tracklet& t, const Detection& d, const Lifted3D& l) {
    TrackRecord r;
    r.id = t.id;
    r.smpl = SmplParams{l.pose, l.shape};
    r.cam_t = l.cam_t;
    r.bbox = d.bbox;
    r.amodal = false;
    return r;
  }

  // The box follows the predicted root: shifted by its projected motion and
  // scaled by the change in depth.
  TrackRecord amodal_record(const Tracklet& t) const {
    TrackRecord r;
    r.id = t.id;
    r.smpl = SmplParams{t.prediction.pose, t.shape};
    r.cam_t = Vec3(t.prediction.location - t.root_offset);
    r.amodal = true;
    r.bbox = t.last_bbox;
    const Vec3& p0 = t.last_location;
    const Vec3& p1 = t.prediction.location;
    if (p0.z() > kMinDepth && p1.z() > kMinDepth) {
      const double s = p0.z() / p1.z();
      const Eigen::Vector2d c0(t.last_bbox.x + 0.5 * t.last_bbox.w, t.last_bbox.y + 0.5 * t.last_bbox.h);
      const Eigen::Vector2d c1 = project_point(p1, K_) + s * (c0 - project_point(p0, K_));
      r.bbox.w = t.last_bbox.w * s;
      r.bbox.h = t.last_bbox.h * s;
      r.bbox.x = c1.x() - 0.5 * r.bbox.w;
      r.bbox.y = c1.y() - 0.5 * r.bbox.h;
    }
    return r;
  }

  JointEvaluator joints_;
  Intrinsics K_;
  TrackerConfig cfg_;
  std::shared_ptr<const MaskedPosePredictor> transformer_;
  std::vector<Tracklet> tracklets_;
  std::optional<long long> last_frame_;
  int next_id_ = 0;
};

inline std::vector<TrackFrame> run_tracker(const std::vector<DetectionFrame>& stream, const BodyModel& model,
                                           const Intrinsics& K, const TrackerConfig& cfg = {},
                                           std::optional<PredictorWeights> weights = std::nullopt) {
  Tracker tracker(model, K, cfg, std::move(weights));
  std::vector<TrackFrame> out;
  out.reserve(stream.size());
  for (const DetectionFrame& f : stream) out.push_back(tracker.step(f));
  return out;
}

// --- configuration file -----------------------------------------------------

inline Json tracker_config_to_json(const TrackerConfig& c) {
  Json j;
  j["w_pose"] = c.w_pose;
  j["w_loc"] = c.w_loc;
  j["w_app"] = c.w_app;
  j["c_max"] = c.c_max;
  j["max_age"] = c.max_age;
  j["birth_threshold"] = c.birth_threshold;
  j["appearance_ema"] = c.appearance_ema;
  j["predictor"] = c.predictor == PredictorKind::baseline ? "baseline" : "masked-transformer";
  j["pose_distance"] = c.pose_distance == PoseDistanceKind::geodesic ? "geodesic" : "frobenius";
  j["fit"] = Json{{"max_iters", c.fit.max_iters}, {"tol", c.fit.tol},
                  {"initial_damping", c.fit.initial_damping}, {"w_kp2d", c.fit.w_kp2d},
                  {"w_pose_reg", c.fit.w_pose_reg}, {"w_shape_reg", c.fit.w_shape_reg},
                  {"sigma", c.fit.sigma}};
  return j;
}

inline FitConfig fit_config_from_json(const Json& j, FitConfig c = {}) {
  if (!j.is_object()) throw ParseError("fit", "expected an object");
  auto opt = [&](const char* key, auto& field) {
    if (has_value(j, key)) field = get_field<std::decay_t<decltype(field)>>(j, key);
  };
  opt("max_iters", c.max_iters);
  opt("tol", c.tol);
  opt("initial_damping", c.initial_damping);
  opt("w_kp2d", c.w_kp2d);
  opt("w_pose_reg", c.w_pose_reg);
  opt("w_shape_reg", c.w_shape_reg);
  opt("sigma", c.sigma);
  c.check();
  return c;
}

/// Missing fields keep their defaults. A `predictor_weights` path, if any,
/// is read by the caller.
inline TrackerConfig tracker_config_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("config", "expected an object");
  TrackerConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (has_value(j, key)) field = get_field<std::decay_t<decltype(field)>>(j, key);
  };
  opt("w_pose", c.w_pose);
  opt("w_loc", c.w_loc);
  opt("w_app", c.w_app);
  opt("c_max", c.c_max);
  opt("max_age", c.max_age);
  opt("birth_threshold", c.birth_threshold);
  opt("appearance_ema", c.appearance_ema);
  if (has_value(j, "predictor")) {
    const std::string p = get_field<std::string>(j, "predictor");
    if (p == "baseline")
      c.predictor = PredictorKind::baseline;
    else if (p == "masked-transformer")
      c.predictor = PredictorKind::masked_transformer;
    else
      throw ParseError("predictor", "expected \"baseline\" or \"masked-transformer\"");
  }
  if (has_value(j, "pose_distance")) {
    const std::string p = get_field<std::string>(j, "pose_distance");
    if (p == "geodesic")
      c.pose_distance = PoseDistanceKind::geodesic;
    else if (p == "frobenius")
      c.pose_distance = PoseDistanceKind::frobenius;
    else
      throw ParseError("pose_distance", "expected \"geodesic\" or \"frobenius\"");
  }
  if (has_value(j, "fit")) c.fit = fit_config_from_json(j.at("fit"));
  c.check();
  return c;
}

}  // namespace h4d
