#pragma once

#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

/// Unconstrained optimization variables: one 6D block per joint, the shape
/// coefficients and the camera translation, flattened in that order.
struct SmplVariables {
  std::vector<Rotation6D> rot6d;
  Eigen::VectorXd beta;
  Vec3 t = Vec3::Zero();

  static SmplVariables identity(int n_joints = kNumJoints, int n_betas = kNumBetas,
                                const Vec3& t = Vec3::Zero()) {
    SmplVariables v;
    v.rot6d.assign(n_joints, Rotation6D::identity());
    v.beta = Eigen::VectorXd::Zero(n_betas);
    v.t = t;
    return v;
  }

  static SmplVariables from(const PoseParams& pose, const ShapeParams& shape, const Vec3& t) {
    SmplVariables v;
    for (const Mat3& R : pose.rotations) v.rot6d.push_back(rotmat_to_rot6d(R));
    v.beta = shape.beta;
    v.t = t;
    return v;
  }

  int n_joints() const { return static_cast<int>(rot6d.size()); }
  int n_betas() const { return static_cast<int>(beta.size()); }
  static int flat_size(int k, int b) { return 6 * k + b + 3; }
  int flat_size() const { return flat_size(n_joints(), n_betas()); }
  int beta_offset() const { return 6 * n_joints(); }
  int t_offset() const { return 6 * n_joints() + n_betas(); }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(flat_size());
    for (int i = 0; i < n_joints(); ++i) x.segment<6>(6 * i) = rot6d[i].a;
    x.segment(beta_offset(), n_betas()) = beta;
    x.segment<3>(t_offset()) = t;
    return x;
  }

  static SmplVariables unflatten(const Eigen::VectorXd& x, int n_joints, int n_betas) {
    if (x.size() != flat_size(n_joints, n_betas)) throw DimensionMismatch("variable vector has wrong length");
    SmplVariables v;
    v.rot6d.resize(n_joints);
    for (int i = 0; i < n_joints; ++i) v.rot6d[i].a = x.segment<6>(6 * i);
    v.beta = x.segment(6 * n_joints, n_betas);
    v.t = x.segment<3>(6 * n_joints + n_betas);
    return v;
  }

  PoseParams pose() const {
    PoseParams p;
    p.rotations.reserve(rot6d.size());
    for (const Rotation6D& r : rot6d) p.rotations.push_back(rot6d_to_rotmat(r));
    return p;
  }
  ShapeParams shape() const { return ShapeParams(beta); }
};

/// Chains a gradient over rotation-matrix entries (9 per joint, row-major)
/// to the 6D blocks.
inline Eigen::VectorXd chain_rot6d(const std::vector<Rotation6D>& rot6d, const Eigen::VectorXd& d_entries) {
  Eigen::VectorXd g(6 * rot6d.size());
  for (std::size_t i = 0; i < rot6d.size(); ++i)
    g.segment<6>(6 * i) = rot6d_jacobian(rot6d[i]).transpose() * d_entries.segment<9>(9 * i);
  return g;
}

}  // namespace h4d
