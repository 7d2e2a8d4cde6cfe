#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "h4d/errors.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

struct Intrinsics {
  double focal = 1000.0;  // pixels
  double cx = 0.0;
  double cy = 0.0;

  Intrinsics() = default;
  Intrinsics(double f, double cx_, double cy_) : focal(f), cx(cx_), cy(cy_) {
    if (!(f > 0.0)) throw InputError("intrinsics: focal length must be positive");
  }
};

/// Camera extrinsics. Rotation is carried for completeness and is always the
/// identity; the body's global orientation absorbs it.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  CameraPose() = default;
  explicit CameraPose(const Vec3& t) : translation(t) {}
};

inline constexpr double kMinDepth = 1e-4;

/// Pinhole projection of camera-space R p + t. Throws BehindCamera for the
/// first point with depth <= z_min.
inline Eigen::Matrix2Xd project(const Eigen::Matrix3Xd& points, const Intrinsics& K,
                                const CameraPose& cam, double z_min = kMinDepth) {
  Eigen::Matrix2Xd uv(2, points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Vec3 p = cam.rotation * points.col(i) + cam.translation;
    if (!(p.z() > z_min)) throw BehindCamera(static_cast<std::size_t>(i));
    uv(0, i) = K.focal * p.x() / p.z() + K.cx;
    uv(1, i) = K.focal * p.y() / p.z() + K.cy;
  }
  return uv;
}

inline Eigen::Vector2d project_point(const Vec3& p, const Intrinsics& K, double z_min = kMinDepth) {
  if (!(p.z() > z_min)) throw BehindCamera(0);
  return {K.focal * p.x() / p.z() + K.cx, K.focal * p.y() / p.z() + K.cy};
}

/// d(u, v) / d(camera-space point).
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p, const Intrinsics& K) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> J;
  J << K.focal * iz, 0.0, -K.focal * p.x() * iz * iz,
       0.0, K.focal * iz, -K.focal * p.y() * iz * iz;
  return J;
}

/// Translation aligning model-space joints with 2D keypoints. The projection
/// equations multiplied through by depth are linear in t, which gives a
/// closed-form weighted least-squares start; up to ten Gauss-Newton steps on
/// the true reprojection error then refine it.
inline CameraPose estimate_translation(const Eigen::Matrix3Xd& joints3d,
                                       const Eigen::Matrix2Xd& keypoints2d,
                                       const Eigen::VectorXd& conf, const Intrinsics& K) {
  const Eigen::Index m = joints3d.cols();
  if (keypoints2d.cols() != m || conf.size() != m)
    throw DimensionMismatch("estimate_translation: joints, keypoints and conf differ in length");
  int n_valid = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (conf[i] > 0.0) ++n_valid;
  if (n_valid < 2)
    throw InsufficientConstraints("estimate_translation needs at least 2 keypoints with conf > 0");

  // f t_x - (u - c_x) t_z = (u - c_x) Z - f X, and likewise for y.
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double w = conf[i];
    if (!(w > 0.0)) continue;
    const Vec3 P = joints3d.col(i);
    const double du = keypoints2d(0, i) - K.cx;
    const double dv = keypoints2d(1, i) - K.cy;
    const Vec3 ru(K.focal, 0.0, -du);
    const Vec3 rv(0.0, K.focal, -dv);
    A += w * (ru * ru.transpose() + rv * rv.transpose());
    b += w * (ru * (du * P.z() - K.focal * P.x()) + rv * (dv * P.z() - K.focal * P.y()));
  }
  Eigen::FullPivLU<Mat3> lu(A);
  if (lu.rank() < 3) throw InsufficientConstraints("estimate_translation: rank-deficient system");
  Vec3 t = lu.solve(b);

  for (int it = 0; it < 10; ++it) {
    Mat3 H = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    bool ok = true;
    for (Eigen::Index i = 0; i < m && ok; ++i) {
      const double w = conf[i];
      if (!(w > 0.0)) continue;
      const Vec3 p = joints3d.col(i) + t;
      if (!(p.z() > kMinDepth)) {
        ok = false;
        break;
      }
      const Eigen::Vector2d r = project_point(p, K) - keypoints2d.col(i);
      const Eigen::Matrix<double, 2, 3> J = projection_jacobian(p, K);
      H += w * J.transpose() * J;
      g += w * J.transpose() * r;
    }
    if (!ok) break;
    const Vec3 step = H.ldlt().solve(-g);
    if (!step.allFinite()) break;
    t += step;
    if (step.norm() < 1e-14 * (1.0 + t.norm())) break;
  }
  return CameraPose(t);
}

}  // namespace h4d
