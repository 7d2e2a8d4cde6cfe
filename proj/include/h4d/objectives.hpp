#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"
#include "h4d/camera.hpp"
#include "h4d/joint_evaluator.hpp"
#include "h4d/smpl_variables.hpp"

namespace h4d {

// ---------------------------------------------------------------------------
// Losses on their direct arguments.

/// Squared Frobenius distance over all rotation entries plus squared
/// distance of the shape coefficients.
inline double loss_smpl(const PoseParams& pose, const ShapeParams& shape, const PoseParams& pose_gt,
                        const ShapeParams& shape_gt) {
  if (pose.size() != pose_gt.size() || shape.beta.size() != shape_gt.beta.size())
    throw DimensionMismatch("loss_smpl: parameter shapes differ");
  double s = (shape.beta - shape_gt.beta).squaredNorm();
  for (int i = 0; i < pose.size(); ++i) s += (pose.rotations[i] - pose_gt.rotations[i]).squaredNorm();
  return s;
}

namespace detail {
inline Eigen::Matrix3Xd root_aligned(const Eigen::Matrix3Xd& X) {
  return X.colwise() - Vec3(X.col(0));
}
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

/// Mean over joints of the L1 distance after moving joint 0 of both sets to
/// the origin.
inline double loss_kp3d(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& X_gt) {
  if (X.cols() != X_gt.cols() || X.cols() == 0) throw DimensionMismatch("loss_kp3d: joint counts differ");
  const Eigen::Matrix3Xd d = detail::root_aligned(X) - detail::root_aligned(X_gt);
  return d.cwiseAbs().sum() / static_cast<double>(X.cols());
}

/// d loss_kp3d / d X (a subgradient where a difference is exactly zero).
inline Eigen::Matrix3Xd loss_kp3d_grad(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& X_gt) {
  const Eigen::Index k = X.cols();
  const Eigen::Matrix3Xd d = detail::root_aligned(X) - detail::root_aligned(X_gt);
  Eigen::Matrix3Xd s = d.unaryExpr([](double v) { return detail::sign(v); }) / static_cast<double>(k);
  Eigen::Matrix3Xd g = s;
  g.col(0) -= s.rowwise().sum();
  return g;
}

/// Mean over keypoints of conf_i * |x_i - x*_i|_1.
inline double loss_kp2d(const Eigen::Matrix2Xd& x_proj, const Eigen::Matrix2Xd& x_gt, const Eigen::VectorXd& conf) {
  if (x_proj.cols() != x_gt.cols() || conf.size() != x_proj.cols() || x_proj.cols() == 0)
    throw DimensionMismatch("loss_kp2d: keypoint counts differ");
  double s = 0.0;
  for (Eigen::Index i = 0; i < x_proj.cols(); ++i)
    if (conf[i] != 0.0) s += conf[i] * (x_proj.col(i) - x_gt.col(i)).cwiseAbs().sum();
  return s / static_cast<double>(x_proj.cols());
}

inline Eigen::Matrix2Xd loss_kp2d_grad(const Eigen::Matrix2Xd& x_proj, const Eigen::Matrix2Xd& x_gt,
                                       const Eigen::VectorXd& conf) {
  const double inv = 1.0 / static_cast<double>(x_proj.cols());
  Eigen::Matrix2Xd g = Eigen::Matrix2Xd::Zero(2, x_proj.cols());
  for (Eigen::Index i = 0; i < x_proj.cols(); ++i) {
    if (conf[i] == 0.0) continue;
    for (int c = 0; c < 2; ++c) g(c, i) = conf[i] * inv * detail::sign(x_proj(c, i) - x_gt(c, i));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adversarial prior.

/// Per-factor realism scores. Factors 0..22 see one body-joint rotation
/// each (joints 1..23), factor 23 the whole body pose, factor 24 the shape.
/// Only rotations 1.. of the pose are read.
class FactorScorer {
 public:
  static constexpr int kNumFactors = 25;
  static constexpr int kBodyPoseFactor = 23;
  static constexpr int kShapeFactor = 24;

  virtual ~FactorScorer() = default;
  virtual double score(int factor, const PoseParams& pose, const Eigen::VectorXd& beta) const = 0;
  /// Gradient of one score w.r.t. the body-pose rotation entries (9 per
  /// joint for joints 1.., row-major) and the shape coefficients.
  virtual void score_gradient(int factor, const PoseParams& pose, const Eigen::VectorXd& beta,
                              Eigen::VectorXd& d_body_pose, Eigen::VectorXd& d_beta) const = 0;
  virtual int size() const { return kNumFactors; }
};

/// Fixed score per factor; zero gradient.
class ConstantScorer : public FactorScorer {
 public:
  explicit ConstantScorer(double value) { values_.fill(value); }
  explicit ConstantScorer(const std::array<double, kNumFactors>& values) : values_(values) {}
  double score(int factor, const PoseParams&, const Eigen::VectorXd&) const override { return values_.at(factor); }
  void score_gradient(int, const PoseParams& pose, const Eigen::VectorXd& beta, Eigen::VectorXd& d_body_pose,
                      Eigen::VectorXd& d_beta) const override {
    d_body_pose = Eigen::VectorXd::Zero(9 * (pose.size() - 1));
    d_beta = Eigen::VectorXd::Zero(beta.size());
  }

 private:
  std::array<double, kNumFactors> values_;
};

/// Reference scorer: exp(-E) with E half the mean squared z-score of the
/// factor's features under a diagonal Gaussian fit to a pose corpus.
/// Scores lie in (0, 1].
class GaussianFactorScorer : public FactorScorer {
 public:
  struct Sample {
    PoseParams pose;
    Eigen::VectorXd beta;
  };

  static GaussianFactorScorer fit(const std::vector<Sample>& corpus, double min_sigma = 1e-3) {
    if (corpus.empty()) throw InputError("GaussianFactorScorer::fit: empty corpus");
    const int k = corpus.front().pose.size();
    const int B = static_cast<int>(corpus.front().beta.size());
    const Eigen::Index P = 9 * (k - 1);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(P + B);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(P + B);
    for (const Sample& s : corpus) {
      const Eigen::VectorXd f = features(s.pose, s.beta);
      sum += f;
      sq += f.cwiseProduct(f);
    }
    const double n = static_cast<double>(corpus.size());
    GaussianFactorScorer g;
    g.n_joints_ = k;
    g.mean_ = sum / n;
    const Eigen::VectorXd var = (sq / n - g.mean_.cwiseProduct(g.mean_)).cwiseMax(0.0);
    g.inv_var_ = (var.array().sqrt().max(min_sigma)).square().inverse().matrix();
    return g;
  }

  double score(int factor, const PoseParams& pose, const Eigen::VectorXd& beta) const override {
    const auto [off, len] = range(factor);
    const Eigen::VectorXd d = features(pose, beta).segment(off, len) - mean_.segment(off, len);
    const double energy = 0.5 * d.cwiseProduct(d).dot(inv_var_.segment(off, len)) / len;
    return std::exp(-energy);
  }

  void score_gradient(int factor, const PoseParams& pose, const Eigen::VectorXd& beta, Eigen::VectorXd& d_body_pose,
                      Eigen::VectorXd& d_beta) const override {
    const auto [off, len] = range(factor);
    const Eigen::VectorXd f = features(pose, beta);
    const Eigen::VectorXd d = f.segment(off, len) - mean_.segment(off, len);
    const double s = score(factor, pose, beta);
    Eigen::VectorXd full = Eigen::VectorXd::Zero(f.size());
    full.segment(off, len) = -s * d.cwiseProduct(inv_var_.segment(off, len)) / len;
    const Eigen::Index P = 9 * (n_joints_ - 1);
    d_body_pose = full.head(P);
    d_beta = full.tail(f.size() - P);
  }

 private:
  static Eigen::VectorXd features(const PoseParams& pose, const Eigen::VectorXd& beta) {
    const int k = pose.size();
    Eigen::VectorXd f(9 * (k - 1) + beta.size());
    for (int i = 1; i < k; ++i)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f[9 * (i - 1) + 3 * r + c] = pose.rotations[i](r, c);
    f.tail(beta.size()) = beta;
    return f;
  }

  std::pair<Eigen::Index, Eigen::Index> range(int factor) const {
    const Eigen::Index P = 9 * (n_joints_ - 1);
    if (factor >= 0 && factor < kBodyPoseFactor) return {9 * factor, 9};
    if (factor == kBodyPoseFactor) return {0, P};
    if (factor == kShapeFactor) return {P, mean_.size() - P};
    throw InputError("GaussianFactorScorer: factor index out of range");
  }

  int n_joints_ = kNumJoints;
  Eigen::VectorXd mean_;
  Eigen::VectorXd inv_var_;
};

/// Generator side of the least-squares adversarial prior: sum_k (D_k - 1)^2.
inline double loss_adv_generator(const PoseParams& pose, const Eigen::VectorXd& beta, const FactorScorer& scorers) {
  if (scorers.size() != FactorScorer::kNumFactors)
    throw DimensionMismatch("loss_adv_generator: expected 25 factor scorers");
  double s = 0.0;
  for (int f = 0; f < scorers.size(); ++f) {
    const double d = scorers.score(f, pose, beta) - 1.0;
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Losses as functions of the optimization variables (6D blocks, beta, t).

struct GroundTruthBundle {
  std::optional<PoseParams> pose;
  std::optional<ShapeParams> shape;
  std::optional<Eigen::Matrix3Xd> joints3d;
  std::optional<Eigen::Matrix2Xd> keypoints2d;
  std::optional<Eigen::VectorXd> conf;

  bool empty() const { return !pose && !shape && !joints3d && !keypoints2d; }
};

enum class LossId { smpl, kp3d, kp2d, adv };

struct LossProblem {
  const JointEvaluator* joints = nullptr;  // kp3d, kp2d
  Intrinsics intrinsics;                   // kp2d
  GroundTruthBundle gt;
  const FactorScorer* scorer = nullptr;    // adv
  int n_joints = kNumJoints;
  int n_betas = kNumBetas;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw InputError(what);
}

inline Eigen::VectorXd conf_or_ones(const GroundTruthBundle& gt, Eigen::Index n) {
  return gt.conf ? *gt.conf : Eigen::VectorXd::Ones(n);
}

// Value and gradient; grad may be null.
inline double loss_eval(LossId id, const LossProblem& pb, const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
  require(!pb.gt.empty() || id == LossId::adv, "loss: ground-truth bundle is empty");
  const SmplVariables v = SmplVariables::unflatten(x, pb.n_joints, pb.n_betas);
  const PoseParams pose = v.pose();
  const int k = pb.n_joints;
  const int B = pb.n_betas;
  if (grad) *grad = Eigen::VectorXd::Zero(x.size());

  switch (id) {
    case LossId::smpl: {
      require(pb.gt.pose && pb.gt.shape, "loss_smpl needs pose and shape annotations");
      const double value = loss_smpl(pose, v.shape(), *pb.gt.pose, *pb.gt.shape);
      if (grad) {
        Eigen::VectorXd d(9 * k);
        for (int i = 0; i < k; ++i) {
          const Mat3 D = 2.0 * (pose.rotations[i] - pb.gt.pose->rotations[i]);
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) d[9 * i + 3 * r + c] = D(r, c);
        }
        grad->head(6 * k) = chain_rot6d(v.rot6d, d);
        grad->segment(6 * k, B) = 2.0 * (v.beta - pb.gt.shape->beta);
      }
      return value;
    }
    case LossId::kp3d:
    case LossId::kp2d: {
      require(pb.joints != nullptr, "loss: joint evaluator missing");
      JointEvaluator::Jacobian jac;
      if (grad)
        jac = pb.joints->joints_and_jacobian(pose, v.shape());
      else
        jac.joints = pb.joints->joints(pose, v.shape());
      const Eigen::Matrix3Xd& X = jac.joints;

      Eigen::Matrix3Xd dX;  // d loss / d X (model frame)
      double value = 0.0;
      if (id == LossId::kp3d) {
        require(pb.gt.joints3d.has_value(), "loss_kp3d needs 3D joints");
        value = loss_kp3d(X, *pb.gt.joints3d);
        if (grad) dX = loss_kp3d_grad(X, *pb.gt.joints3d);
      } else {
        require(pb.gt.keypoints2d.has_value(), "loss_kp2d needs 2D keypoints");
        const Eigen::Matrix2Xd& kp = *pb.gt.keypoints2d;
        const Eigen::VectorXd conf = conf_or_ones(pb.gt, kp.cols());
        const Eigen::Matrix2Xd x_proj = project(X, pb.intrinsics, CameraPose(v.t));
        value = loss_kp2d(x_proj, kp, conf);
        if (grad) {
          const Eigen::Matrix2Xd g2 = loss_kp2d_grad(x_proj, kp, conf);
          dX.resize(3, X.cols());
          for (Eigen::Index i = 0; i < X.cols(); ++i)
            dX.col(i) = projection_jacobian(X.col(i) + v.t, pb.intrinsics).transpose() * g2.col(i);
          grad->segment<3>(v.t_offset()) = dX.rowwise().sum();
        }
      }
      if (grad) {
        const Eigen::Map<const Eigen::VectorXd> dx(dX.data(), dX.size());
        const Eigen::VectorXd d = jac.d_joints.transpose() * dx;
        grad->head(6 * k) = chain_rot6d(v.rot6d, d.head(9 * k));
        grad->segment(6 * k, B) = d.tail(B);
      }
      return value;
    }
    case LossId::adv: {
      require(pb.scorer != nullptr, "loss_adv needs a factor scorer");
      const FactorScorer& sc = *pb.scorer;
      double value = 0.0;
      Eigen::VectorXd d_pose = Eigen::VectorXd::Zero(9 * (k - 1));
      Eigen::VectorXd d_beta = Eigen::VectorXd::Zero(B);
      for (int f = 0; f < sc.size(); ++f) {
        const double r = sc.score(f, pose, v.beta) - 1.0;
        value += r * r;
        if (grad) {
          Eigen::VectorXd gp, gb;
          sc.score_gradient(f, pose, v.beta, gp, gb);
          d_pose += 2.0 * r * gp;
          d_beta += 2.0 * r * gb;
        }
      }
      if (grad) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(9 * k);
        d.tail(9 * (k - 1)) = d_pose;
        grad->head(6 * k) = chain_rot6d(v.rot6d, d);
        grad->segment(6 * k, B) = d_beta;
      }
      return value;
    }
  }
  return 0.0;
}

}  // namespace detail

inline double evaluate_loss(LossId id, const LossProblem& pb, const Eigen::VectorXd& x) {
  return detail::loss_eval(id, pb, x, nullptr);
}

/// Analytic gradient w.r.t. the flattened (6D blocks, beta, t) variables.
inline Eigen::VectorXd loss_gradient(LossId id, const LossProblem& pb, const Eigen::VectorXd& x) {
  Eigen::VectorXd g;
  detail::loss_eval(id, pb, x, &g);
  return g;
}

}  // namespace h4d
