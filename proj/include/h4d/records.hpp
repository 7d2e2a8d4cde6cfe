#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"

namespace h4d {

/// Axis-aligned box, top-left corner plus size, in pixels.
struct BBox {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

  double area() const { return w > 0 && h > 0 ? w * h : 0.0; }
  bool operator==(const BBox&) const = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Pose and shape as carried in files: 24 rotations (row-major on the wire)
/// and 10 shape coefficients.
struct SmplParams {
  PoseParams pose = PoseParams::identity();
  ShapeParams shape = ShapeParams::zero();
};

struct Keypoints2D {
  Eigen::Matrix2Xd uv;
  Eigen::VectorXd conf;

  int size() const { return static_cast<int>(uv.cols()); }
  bool empty() const { return uv.cols() == 0; }
};

/// One person observation in one frame.
struct Detection {
  BBox bbox;
  Keypoints2D keypoints;                 // may be empty
  std::optional<SmplParams> smpl;
  std::optional<Vec3> cam_t;             // meters
  std::optional<Eigen::VectorXd> embedding;  // unit L2 norm
  double score = 1.0;
};

struct DetectionFrame {
  long long frame = 0;
  std::vector<Detection> detections;
};

struct TrackRecord {
  int id = 0;
  std::optional<SmplParams> smpl;
  std::optional<Vec3> cam_t;
  BBox bbox;
  bool amodal = false;
  // Ground-truth files also carry keypoints and camera-frame joints.
  std::optional<Keypoints2D> keypoints;
  std::optional<Eigen::Matrix3Xd> joints3d;
};

struct TrackFrame {
  long long frame = 0;
  std::vector<TrackRecord> tracks;
};

}  // namespace h4d
