#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"
#include "h4d/camera.hpp"
#include "h4d/joint_evaluator.hpp"
#include "h4d/smpl_variables.hpp"

namespace h4d {

struct FitConfig {
  int max_iters = 100;
  double tol = 1e-8;             // stop when an accepted step lowers the cost by less
  double initial_damping = 1e-3;
  double max_damping = 1e8;
  double w_kp2d = 1.0;
  double w_pose_reg = 1e-3;
  double w_shape_reg = 1e-2;
  double sigma = 100.0;          // Geman-McClure scale, pixels

  void check() const {
    if (max_iters < 1) throw InputError("fit: max_iters must be >= 1");
    if (w_kp2d < 0 || w_pose_reg < 0 || w_shape_reg < 0) throw InputError("fit: weights must be >= 0");
    if (!(sigma > 0)) throw InputError("fit: sigma must be positive");
    if (!(initial_damping > 0)) throw InputError("fit: damping must be positive");
  }
};

struct FitResult {
  PoseParams pose;
  ShapeParams shape;
  Vec3 t = Vec3::Zero();
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double mean_reprojection_error = 0.0;  // pixels, over keypoints with conf > 0
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;      // cost after every accepted step, starting with the initial cost
};

inline constexpr int kMinFitKeypoints = 6;

/// Identity rotations and zero shape. The translation comes from aligning
/// the rest joints with the keypoints when any are supplied, else (0, 0, 5).
inline SmplVariables init_params(const JointEvaluator& joints, const Eigen::Matrix2Xd* keypoints = nullptr,
                                 const Eigen::VectorXd* conf = nullptr, const Intrinsics* K = nullptr) {
  SmplVariables v = SmplVariables::identity(joints.n_joints(), joints.n_betas(), Vec3(0.0, 0.0, 5.0));
  if (keypoints && conf && K) {
    const Eigen::Matrix3Xd rest = joints.joints(v.pose(), v.shape());
    v.t = estimate_translation(rest, *keypoints, *conf, *K).translation;
  }
  return v;
}

inline SmplVariables init_params(const BodyModel& model, const Eigen::Matrix2Xd* keypoints = nullptr,
                                 const Eigen::VectorXd* conf = nullptr, const Intrinsics* K = nullptr) {
  return init_params(JointEvaluator(model), keypoints, conf, K);
}

namespace detail {

class ReprojectionProblem {
 public:
  ReprojectionProblem(const JointEvaluator& joints, const Eigen::Matrix2Xd& kp, const Eigen::VectorXd& conf,
                      const Intrinsics& K, const FitConfig& cfg)
      : joints_(joints), kp_(kp), conf_(conf), K_(K), cfg_(cfg) {
    for (Eigen::Index i = 0; i < conf.size(); ++i)
      if (conf[i] > 0.0) active_.push_back(static_cast<int>(i));
  }

  int n_active() const { return static_cast<int>(active_.size()); }
  int n_residuals(int k, int B) const { return 2 * n_active() + 6 * k + B; }

  // Residuals and (optionally) their Jacobian. Returns false when a joint
  // falls behind the camera or a 6D block degenerates.
  bool evaluate(const SmplVariables& v, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const int k = v.n_joints();
    const int B = v.n_betas();
    PoseParams pose;
    try {
      pose = v.pose();
    } catch (const DegenerateInput&) {
      return false;
    }
    JointEvaluator::Jacobian jac;
    if (J)
      jac = joints_.joints_and_jacobian(pose, v.shape());
    else
      jac.joints = joints_.joints(pose, v.shape());

    const int nr = n_residuals(k, B);
    r.resize(nr);
    if (J) J->setZero(nr, v.flat_size());

    std::vector<Rot6dJacobian> rj;
    if (J)
      for (const Rotation6D& a : v.rot6d) rj.push_back(rot6d_jacobian(a));

    const double s = cfg_.sigma;
    const double sw = std::sqrt(cfg_.w_kp2d);
    int row = 0;
    for (int i : active_) {
      const Vec3 p = jac.joints.col(i) + v.t;
      if (!(p.z() > kMinDepth)) return false;
      const Eigen::Vector2d e = project_point(p, K_) - kp_.col(i);
      const double sc = sw * std::sqrt(conf_[i]);
      Eigen::Matrix<double, 2, 3> dproj;
      if (J) dproj = projection_jacobian(p, K_);
      for (int c = 0; c < 2; ++c, ++row) {
        const double den = s * s + e[c] * e[c];
        r[row] = sc * s * e[c] / std::sqrt(den);
        if (!J) continue;
        const double dr_de = sc * s * s * s / (den * std::sqrt(den));
        const Eigen::RowVector3d dr_dp = dr_de * dproj.row(c);
        const Eigen::RowVectorXd dr_dentries = dr_dp * jac.d_joints.middleRows(3 * i, 3);
        for (int q = 0; q < k; ++q)
          J->block<1, 6>(row, 6 * q) = dr_dentries.segment<9>(9 * q) * rj[q];
        J->block(row, v.beta_offset(), 1, B) = dr_dentries.tail(B);
        J->block<1, 3>(row, v.t_offset()) = dr_dp;
      }
    }
    const double sp = std::sqrt(cfg_.w_pose_reg);
    const Vec6 id = Rotation6D::identity().a;
    for (int q = 0; q < k; ++q) {
      r.segment<6>(row) = sp * (v.rot6d[q].a - id);
      if (J) J->block<6, 6>(row, 6 * q) = sp * Eigen::Matrix<double, 6, 6>::Identity();
      row += 6;
    }
    const double ss = std::sqrt(cfg_.w_shape_reg);
    r.segment(row, B) = ss * v.beta;
    if (J) J->block(row, v.beta_offset(), B, B) = ss * Eigen::MatrixXd::Identity(B, B);
    return r.allFinite();
  }

  double mean_reprojection_error(const SmplVariables& v) const {
    const Eigen::Matrix3Xd X = joints_.joints(v.pose(), v.shape());
    double s = 0.0;
    for (int i : active_) s += (project_point(Vec3(X.col(i) + v.t), K_) - kp_.col(i)).norm();
    return active_.empty() ? 0.0 : s / static_cast<double>(active_.size());
  }

 private:
  const JointEvaluator& joints_;
  const Eigen::Matrix2Xd& kp_;
  const Eigen::VectorXd& conf_;
  Intrinsics K_;
  FitConfig cfg_;
  std::vector<int> active_;
};

}  // namespace detail

/// Levenberg-Marquardt fit of pose (6D blocks), shape and translation to 2D
/// keypoints with a Geman-McClure reprojection kernel and quadratic priors
/// pulling the 6D blocks towards identity and the shape towards zero.
inline FitResult fit(const Eigen::Matrix2Xd& keypoints2d, const Eigen::VectorXd& conf, const Intrinsics& K,
                     const JointEvaluator& joints, const FitConfig& cfg = {},
                     const std::optional<SmplVariables>& init = std::nullopt) {
  cfg.check();
  const int k = joints.n_joints();
  const int B = joints.n_betas();
  if (keypoints2d.cols() != k || conf.size() != k)
    throw DimensionMismatch("fit: expected one keypoint per model joint");
  int n_valid = 0;
  for (Eigen::Index i = 0; i < conf.size(); ++i) {
    if (conf[i] < 0.0 || !std::isfinite(conf[i])) throw InputError("fit: confidences must be finite and >= 0");
    if (conf[i] > 0.0) {
      ++n_valid;
      if (!keypoints2d.col(i).allFinite()) throw InputError("fit: non-finite keypoint");
    }
  }
  if (n_valid < kMinFitKeypoints)
    throw InsufficientConstraints("fit needs at least 6 keypoints with conf > 0, got " + std::to_string(n_valid));

  SmplVariables v = init ? *init : init_params(joints, &keypoints2d, &conf, &K);
  if (v.n_joints() != k || v.n_betas() != B) throw DimensionMismatch("fit: initial parameters do not match model");

  detail::ReprojectionProblem problem(joints, keypoints2d, conf, K, cfg);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  if (!problem.evaluate(v, r, &J)) throw NumericalFailure("fit: initial parameters are infeasible");

  FitResult res;
  double cost = r.squaredNorm();
  res.initial_cost = cost;
  res.cost_history.push_back(cost);
  double lambda = cfg.initial_damping;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    res.iterations = iter;
    const Eigen::VectorXd g = J.transpose() * r;
    const Eigen::MatrixXd H = J.transpose() * J;
    if (g.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + cost)) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    double decrease = 0.0;
    Eigen::VectorXd r_new;
    SmplVariables v_new;
    while (true) {
      Eigen::MatrixXd A = H;
      A.diagonal().array() += lambda;
      const Eigen::VectorXd delta = A.ldlt().solve(-g);
      const double predicted = -(2.0 * delta.dot(g) + delta.dot(H * delta));
      if (delta.allFinite()) {
        v_new = SmplVariables::unflatten(v.flatten() + delta, k, B);
        if (problem.evaluate(v_new, r_new, nullptr)) {
          const double new_cost = r_new.squaredNorm();
          if (new_cost < cost) {
            decrease = cost - new_cost;
            accepted = true;
            lambda = std::max(lambda / 10.0, 1e-12);
            break;
          }
        }
      }
      if (delta.allFinite() && predicted < cfg.tol) break;  // nothing left to gain
      lambda *= 10.0;
      if (lambda > cfg.max_damping)
        throw NumericalFailure("fit: damping exceeded " + std::to_string(cfg.max_damping) +
                               " without an accepted step");
    }
    if (!accepted) {
      res.converged = true;
      break;
    }

    // Accepted steps are strictly decreasing and keep valid rotations.
    for (const Rotation6D& a : v_new.rot6d)
      if (!is_rotation(rot6d_to_rotmat(a), 1e-9)) throw NumericalFailure("fit: iterate left SO(3)");
    v = std::move(v_new);
    problem.evaluate(v, r, &J);
    cost = r.squaredNorm();
    if (!(cost <= res.cost_history.back())) throw NumericalFailure("fit: accepted step increased the cost");
    res.cost_history.push_back(cost);
    if (decrease < cfg.tol) {
      res.converged = true;
      break;
    }
  }

  res.pose = v.pose();
  res.shape = v.shape();
  res.t = v.t;
  res.final_cost = cost;
  res.mean_reprojection_error = problem.mean_reprojection_error(v);
  return res;
}

inline FitResult fit(const Eigen::Matrix2Xd& keypoints2d, const Eigen::VectorXd& conf, const Intrinsics& K,
                     const BodyModel& model, const FitConfig& cfg = {},
                     const std::optional<SmplVariables>& init = std::nullopt) {
  return fit(keypoints2d, conf, K, JointEvaluator(model), cfg, init);
}

}  // namespace h4d
