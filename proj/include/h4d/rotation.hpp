#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "h4d/errors.hpp"

namespace h4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
// d vec(R) / d a, with vec(R) row-major (index 3*row + col).
using Rot6dJacobian = Eigen::Matrix<double, 9, 6>;

/// Continuous 6D rotation encoding: two 3-vectors (a1, a2) which are
/// orthonormalized into the first two columns of a rotation matrix.
struct Rotation6D {
  Vec6 a = Vec6::Zero();

  Rotation6D() = default;
  explicit Rotation6D(const Vec6& v) : a(v) {}
  Rotation6D(double a0, double a1, double a2, double a3, double a4, double a5) {
    a << a0, a1, a2, a3, a4, a5;
  }
  Vec3 first() const { return a.head<3>(); }
  Vec3 second() const { return a.tail<3>(); }

  static Rotation6D identity() { return Rotation6D(1, 0, 0, 0, 1, 0); }
};

inline constexpr double kRot6dEps = 1e-8;

/// Gram-Schmidt decode. Columns of the result are (b1, b2, b1 x b2).
inline Mat3 rot6d_to_rotmat(const Rotation6D& r) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = a1.norm();
  if (!(n1 > kRot6dEps)) throw DegenerateInput("rot6d: first vector is (near) zero");
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double nu = u.norm();
  if (!(nu > kRot6dEps))
    throw DegenerateInput("rot6d: second vector is parallel to the first");
  const Vec3 b2 = u / nu;
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

inline Rotation6D rotmat_to_rot6d(const Mat3& R) {
  Vec6 a;
  a << R.col(0), R.col(1);
  return Rotation6D(a);
}

namespace detail {
inline Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}
}  // namespace detail

/// Analytic Jacobian of rot6d_to_rotmat.
inline Rot6dJacobian rot6d_jacobian(const Rotation6D& r) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = a1.norm();
  if (!(n1 > kRot6dEps)) throw DegenerateInput("rot6d: first vector is (near) zero");
  const Vec3 b1 = a1 / n1;
  const double d12 = b1.dot(a2);
  const Vec3 u = a2 - d12 * b1;
  const double nu = u.norm();
  if (!(nu > kRot6dEps))
    throw DegenerateInput("rot6d: second vector is parallel to the first");
  const Vec3 b2 = u / nu;
  const Mat3 I = Mat3::Identity();

  // 3x6 blocks: derivative of each column w.r.t. (a1, a2).
  Eigen::Matrix<double, 3, 6> db1 = Eigen::Matrix<double, 3, 6>::Zero();
  db1.leftCols<3>() = (I - b1 * b1.transpose()) / n1;

  Eigen::Matrix<double, 3, 6> du;
  du.leftCols<3>() = -(b1 * a2.transpose() + d12 * I) * db1.leftCols<3>();
  du.rightCols<3>() = I - b1 * b1.transpose();

  const Eigen::Matrix<double, 3, 6> db2 = (I - b2 * b2.transpose()) / nu * du;
  const Eigen::Matrix<double, 3, 6> db3 =
      -detail::skew(b2) * db1 + detail::skew(b1) * db2;

  Rot6dJacobian J;
  for (int row = 0; row < 3; ++row) {
    J.row(3 * row + 0) = db1.row(row);
    J.row(3 * row + 1) = db2.row(row);
    J.row(3 * row + 2) = db3.row(row);
  }
  return J;
}

/// Rodrigues formula; zero vector gives identity.
inline Mat3 axis_angle_to_rotmat(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

/// Largest violation of R^T R = I and det R = 1.
inline double rotation_error(const Mat3& R) {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(R.determinant() - 1.0));
}

inline bool is_rotation(const Mat3& R, double tol = 1e-6) {
  return R.allFinite() && rotation_error(R) <= tol;
}

/// Geodesic angle between two rotations, in radians.
inline double geodesic_angle(const Mat3& a, const Mat3& b) {
  const double c = ((a * b.transpose()).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace h4d
