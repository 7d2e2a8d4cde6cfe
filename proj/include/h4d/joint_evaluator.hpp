#pragma once

#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"

namespace h4d {

/// Joints (X = M W) and their derivatives, evaluated without building the
/// mesh. Because skinning is linear in the posed vertices, each joint is
///   X_j = sum_m  A_m.R * p_jm + c_jm * A_m.t
/// with c_jm = sum_n W_nj w_nm and p_jm = sum_n W_nj w_nm v_n(beta, pose),
/// where the vertex sums are precomputed once per model.
class JointEvaluator {
 public:
  struct Jacobian {
    Eigen::Matrix3Xd joints;  // 3 x k
    // Rows: 3j + axis. Columns: 9 entries of each local rotation (row-major),
    // joint by joint, followed by the shape coefficients.
    Eigen::MatrixXd d_joints;
  };

  explicit JointEvaluator(const BodyModel& model) : k_(model.n_joints), n_betas_(model.n_betas()),
                                                    parents_(model.parents) {
    validate(model);
    const int N = model.n_vertices;
    const int P = model.n_pose_features();
    pairs_.resize(k_);
    // Sparse accumulation over vertices touching both joint j's regressor
    // and joint m's skinning weights.
    std::vector<std::vector<int>> pair_index(k_, std::vector<int>(k_, -1));
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j < k_; ++j) {
        const double wj = model.joint_weights(n, j);
        if (wj == 0.0) continue;
        for (int m = 0; m < k_; ++m) {
          const double wm = model.skinning_weights(n, m);
          if (wm == 0.0) continue;
          int& idx = pair_index[j][m];
          if (idx < 0) {
            idx = static_cast<int>(pairs_[j].size());
            Pair p;
            p.m = m;
            p.c = 0.0;
            p.S.setZero();
            p.B = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, n_betas_);
            p.Q = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, P);
            pairs_[j].push_back(std::move(p));
          }
          Pair& p = pairs_[j][idx];
          const double w = wj * wm;
          p.c += w;
          for (int c = 0; c < 3; ++c) {
            p.S[c] += w * model.template_vertices(n, c);
            p.B.row(c) += w * model.shape_blend.row(3 * n + c);
            p.Q.row(c) += w * model.pose_blend.row(3 * n + c);
          }
        }
      }
    }
    J0_ = model.joint_weights.transpose() * model.template_vertices;
    // Rest-joint shape derivatives: dJ_m / dbeta, stored as (3m + c) x B.
    JB_ = Eigen::MatrixXd::Zero(3 * k_, n_betas_);
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < k_; ++m) {
        const double w = model.joint_weights(n, m);
        if (w == 0.0) continue;
        for (int c = 0; c < 3; ++c) JB_.row(3 * m + c) += w * model.shape_blend.row(3 * n + c);
      }
  }

  int n_joints() const { return k_; }
  int n_betas() const { return n_betas_; }

  Eigen::Matrix3Xd joints(const PoseParams& pose, const ShapeParams& shape) const {
    const State s = prepare(pose, shape);
    Eigen::Matrix3Xd X(3, k_);
    for (int j = 0; j < k_; ++j) X.col(j) = joint_from(s, j);
    return X;
  }

  Vec3 joint(const PoseParams& pose, const ShapeParams& shape, int j) const {
    return joint_from(prepare(pose, shape, j), j);
  }

  Jacobian joints_and_jacobian(const PoseParams& pose, const ShapeParams& shape) const {
    const State s = prepare(pose, shape);
    const int k = k_;
    const int B = n_betas_;
    Jacobian out;
    out.joints.resize(3, k);
    out.d_joints = Eigen::MatrixXd::Zero(3 * k, 9 * k + B);

    // dJ/dbeta and dt/dbeta propagated down the tree.
    std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> dt(k);
    for (int m = 0; m < k; ++m) {
      const Eigen::Matrix<double, 3, Eigen::Dynamic> dJ = JB_.middleRows(3 * m, 3);
      const Mat3 I_minus_R = Mat3::Identity() - pose.rotations[m];
      if (parents_[m] < 0)
        dt[m] = I_minus_R * dJ;
      else
        dt[m] = dt[parents_[m]] + s.A[parents_[m]].R * I_minus_R * dJ;
    }

    std::vector<Vec3> world(k);   // R_m p_jm + c_jm t_m per m
    std::vector<double> coef(k);  // c_jm per m
    for (int j = 0; j < k; ++j) {
      std::fill(world.begin(), world.end(), Vec3::Zero());
      std::fill(coef.begin(), coef.end(), 0.0);
      Vec3 X = Vec3::Zero();
      auto dbeta = out.d_joints.block(3 * j, 9 * k, 3, B);
      for (std::size_t q = 0; q < pairs_[j].size(); ++q) {
        const Pair& p = pairs_[j][q];
        const auto& A = s.A[p.m];
        const Vec3& pjm = s.p[j][q];
        const Vec3 w = A.R * pjm + p.c * A.t;
        world[p.m] += w;
        coef[p.m] += p.c;
        X += w;
        dbeta += A.R * p.B + p.c * dt[p.m];
        // Pose-blend contribution of every non-root joint.
        const Eigen::Matrix<double, 3, Eigen::Dynamic> RQ = A.R * p.Q;
        for (int i = 1; i < k; ++i)
          out.d_joints.block(3 * j, 9 * i, 3, 9) += RQ.middleCols(9 * (i - 1), 9);
      }
      out.joints.col(j) = X;

      // Subtree sums, children always have larger indices than parents.
      std::vector<Vec3> y(world);
      std::vector<double> C(coef);
      for (int m = k - 1; m >= 1; --m) {
        y[parents_[m]] += y[m];
        C[parents_[m]] += C[m];
      }
      for (int i = 0; i < k; ++i) {
        if (C[i] == 0.0 && y[i].isZero(0.0)) continue;
        const auto& Ai = s.A[i];
        const Mat3 Rp = parents_[i] < 0 ? Mat3::Identity() : Mat3(s.A[parents_[i]].R);
        const Vec3 z = Ai.R.transpose() * (y[i] - C[i] * Ai.t) - C[i] * s.J.row(i).transpose();
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            out.d_joints.block<3, 1>(3 * j, 9 * i + 3 * r + c) += Rp.col(r) * z[c];
      }
    }
    return out;
  }

 private:
  struct Pair {
    int m;
    double c;
    Vec3 S;
    Eigen::Matrix<double, 3, Eigen::Dynamic> B;
    Eigen::Matrix<double, 3, Eigen::Dynamic> Q;
  };
  struct State {
    RestJoints J;
    std::vector<detail::Rigid> A;
    std::vector<std::vector<Vec3>> p;
  };

  // only_joint >= 0 restricts the blended offsets to that joint's pairs.
  State prepare(const PoseParams& pose, const ShapeParams& shape, int only_joint = -1) const {
    if (pose.size() != k_) throw DimensionMismatch("pose size does not match model");
    if (shape.beta.size() != n_betas_) throw DimensionMismatch("shape size does not match model");
    State s;
    s.J.resize(k_, 3);
    const Eigen::VectorXd dJ = JB_ * shape.beta;
    for (int m = 0; m < k_; ++m) s.J.row(m) = J0_.row(m) + dJ.segment<3>(3 * m).transpose();
    s.A = detail::skinning_transforms(parents_, pose, s.J);
    const Eigen::VectorXd f = detail::pose_features(pose);
    s.p.resize(k_);
    for (int j = 0; j < k_; ++j) {
      if (only_joint >= 0 && j != only_joint) continue;
      s.p[j].reserve(pairs_[j].size());
      for (const Pair& p : pairs_[j]) s.p[j].push_back(p.S + p.B * shape.beta + p.Q * f);
    }
    return s;
  }

  Vec3 joint_from(const State& s, int j) const {
    Vec3 X = Vec3::Zero();
    for (std::size_t q = 0; q < pairs_[j].size(); ++q) {
      const Pair& p = pairs_[j][q];
      X += s.A[p.m].R * s.p[j][q] + p.c * s.A[p.m].t;
    }
    return X;
  }

  int k_;
  int n_betas_;
  std::vector<int> parents_;
  std::vector<std::vector<Pair>> pairs_;
  Eigen::MatrixXd J0_;  // k x 3
  Eigen::MatrixXd JB_;  // 3k x B
};

}  // namespace h4d
