#include <gtest/gtest.h>

#include "h4d/objectives.hpp"
#include "test_util.hpp"

namespace h4d {
namespace {

using testing::random_pose;
using testing::random_shape;

TEST(LossSmplTest, HandValues) {
  const PoseParams id = PoseParams::identity();
  EXPECT_EQ(loss_smpl(id, ShapeParams::zero(), id, ShapeParams::zero()), 0.0);
  ShapeParams e1 = ShapeParams::zero();
  e1.beta[0] = 1.0;
  EXPECT_DOUBLE_EQ(loss_smpl(id, e1, id, ShapeParams::zero()), 1.0);
  PoseParams flipped = id;
  flipped.global_orient() = Eigen::Vector3d(-1, -1, 1).asDiagonal();
  EXPECT_DOUBLE_EQ(loss_smpl(id, ShapeParams::zero(), flipped, ShapeParams::zero()), 8.0);
}

TEST(LossSmplTest, SymmetricInArguments) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const PoseParams a = random_pose(rng), b = random_pose(rng);
    const ShapeParams sa = random_shape(rng), sb = random_shape(rng);
    EXPECT_DOUBLE_EQ(loss_smpl(a, sa, b, sb), loss_smpl(b, sb, a, sa));
  }
}

TEST(LossKp3dTest, HandValues) {
  Rng rng(2);
  const Eigen::Matrix3Xd X = Eigen::Matrix3Xd::Random(3, 24);
  EXPECT_EQ(loss_kp3d(X, X), 0.0);
  EXPECT_NEAR(loss_kp3d(Eigen::Matrix3Xd(X.colwise() + Vec3(1, -2, 3)), X), 0.0, 1e-12);
  Eigen::Matrix3Xd A = Eigen::Matrix3Xd::Zero(3, 2), B = Eigen::Matrix3Xd::Zero(3, 2);
  A.col(1) = Vec3(0.1, 0.2, 0.0);
  EXPECT_NEAR(loss_kp3d(A, B), 0.15, 1e-15);
}

TEST(LossKp3dTest, InvariantToCommonOffset) {
  Rng rng(3);
  const Eigen::Matrix3Xd X = Eigen::Matrix3Xd::Random(3, 24);
  const Eigen::Matrix3Xd Y = Eigen::Matrix3Xd::Random(3, 24);
  const Vec3 o(0.3, 5, -2);
  EXPECT_NEAR(loss_kp3d(X.colwise() + o, Y.colwise() + o), loss_kp3d(X, Y), 1e-12);
}

TEST(LossKp2dTest, HandValues) {
  Eigen::Matrix2Xd x(2, 2), y(2, 2);
  x << 0, 0, 0, 0;
  y << 2, 0, 0, 4;
  EXPECT_DOUBLE_EQ(loss_kp2d(x, y, Eigen::Vector2d(1.0, 0.5)), 2.0);
  EXPECT_EQ(loss_kp2d(x, y, Eigen::Vector2d(0.0, 0.0)), 0.0);
  EXPECT_EQ(loss_kp2d(y, y, Eigen::Vector2d(1.0, 1.0)), 0.0);
}

TEST(LossKp2dTest, ZeroConfidenceEntriesHaveExactlyZeroGradient) {
  Rng rng(4);
  Eigen::Matrix2Xd x = Eigen::Matrix2Xd::Random(2, 24) * 100;
  Eigen::Matrix2Xd y = Eigen::Matrix2Xd::Random(2, 24) * 100;
  Eigen::VectorXd conf = Eigen::VectorXd::Ones(24);
  conf[3] = conf[7] = conf[20] = 0.0;
  const Eigen::Matrix2Xd g = loss_kp2d_grad(x, y, conf);
  for (int i : {3, 7, 20}) {
    EXPECT_EQ(g(0, i), 0.0);
    EXPECT_EQ(g(1, i), 0.0);
  }
  EXPECT_NE(g(0, 0), 0.0);
}

TEST(LossAdvTest, FixedPointsAndSingleFactor) {
  const PoseParams id = PoseParams::identity();
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(10);
  EXPECT_EQ(loss_adv_generator(id, b, ConstantScorer(1.0)), 0.0);
  EXPECT_EQ(loss_adv_generator(id, b, ConstantScorer(0.0)), 25.0);
  std::array<double, 25> v;
  v.fill(1.0);
  v[7] = 0.5;
  EXPECT_EQ(loss_adv_generator(id, b, ConstantScorer(v)), 0.25);
}

std::vector<GaussianFactorScorer::Sample> corpus(Rng& rng, int n) {
  std::vector<GaussianFactorScorer::Sample> c;
  for (int i = 0; i < n; ++i) c.push_back({random_pose(rng, 0.5), random_shape(rng).beta});
  return c;
}

TEST(GaussianScorerTest, ScoresInUnitIntervalAndPeakAtMean) {
  Rng rng(5);
  const GaussianFactorScorer sc = GaussianFactorScorer::fit(corpus(rng, 200));
  for (int i = 0; i < 20; ++i) {
    const PoseParams p = random_pose(rng, 1.5);
    const ShapeParams s = random_shape(rng, 2.0);
    for (int f = 0; f < 25; ++f) {
      const double v = sc.score(f, p, s.beta);
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GaussianScorerTest, BetaOnlyReachesShapeFactor) {
  Rng rng(6);
  const GaussianFactorScorer sc = GaussianFactorScorer::fit(corpus(rng, 100));
  const PoseParams p = random_pose(rng);
  const ShapeParams s1 = random_shape(rng), s2 = random_shape(rng);
  for (int f = 0; f < 24; ++f) EXPECT_EQ(sc.score(f, p, s1.beta), sc.score(f, p, s2.beta));
  EXPECT_NE(sc.score(24, p, s1.beta), sc.score(24, p, s2.beta));
}

// --- Gradients w.r.t. (6D blocks, beta, t) against central differences.

class GradientTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = make_mini_model(0);
    joints_ = std::make_unique<JointEvaluator>(model_);
    Rng rng(77);
    scorer_ = std::make_unique<GaussianFactorScorer>(GaussianFactorScorer::fit(corpus(rng, 100)));
  }

  // Random annotations and a random evaluation point with the body in front of the camera.
  std::pair<LossProblem, Eigen::VectorXd> draw(Rng& rng) {
    LossProblem pb;
    pb.joints = joints_.get();
    pb.intrinsics = Intrinsics(1000, 500, 500);
    pb.scorer = scorer_.get();
    const PoseParams gt_pose = random_pose(rng, 0.5);
    const ShapeParams gt_shape = random_shape(rng);
    const Vec3 gt_t(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(4, 8));
    pb.gt.pose = gt_pose;
    pb.gt.shape = gt_shape;
    const Eigen::Matrix3Xd Xgt = joints_->joints(gt_pose, gt_shape);
    pb.gt.joints3d = Xgt;
    pb.gt.keypoints2d = project(Xgt, pb.intrinsics, CameraPose(gt_t));
    Eigen::VectorXd conf(24);
    for (int i = 0; i < 24; ++i) conf[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.2, 1.0);
    pb.gt.conf = conf;

    SmplVariables v;
    for (int i = 0; i < 24; ++i) {
      Rotation6D r = rotmat_to_rot6d(testing::random_rotation(rng, 0.6));
      for (int c = 0; c < 6; ++c) r.a[c] = r.a[c] * rng.uniform(0.7, 1.3) + 0.1 * rng.normal();
      v.rot6d.push_back(r);
    }
    v.beta = random_shape(rng).beta;
    v.t = gt_t + Vec3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0, 0.3));
    return {pb, v.flatten()};
  }

  // Max over coordinates of |analytic - numeric| / max(|numeric|, scale).
  static double relative_error(LossId id, const LossProblem& pb, const Eigen::VectorXd& x) {
    const Eigen::VectorXd g = loss_gradient(id, pb, x);
    const double h = 1e-5;
    Eigen::VectorXd num(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Eigen::VectorXd hi = x, lo = x;
      hi[i] += h;
      lo[i] -= h;
      num[i] = (evaluate_loss(id, pb, hi) - evaluate_loss(id, pb, lo)) / (2 * h);
    }
    return (g - num).norm() / std::max(num.norm(), 1e-12);
  }

  BodyModel model_;
  std::unique_ptr<JointEvaluator> joints_;
  std::unique_ptr<GaussianFactorScorer> scorer_;
};

TEST_F(GradientTest, SmplGradientVanishesAtMinimum) {
  Rng rng(8);
  auto [pb, x] = draw(rng);
  const SmplVariables at_gt = SmplVariables::from(*pb.gt.pose, *pb.gt.shape, Vec3(0, 0, 5));
  EXPECT_LT(loss_gradient(LossId::smpl, pb, at_gt.flatten()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST_F(GradientTest, AllLossesMatchFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto [pb, x] = draw(rng);
    for (LossId id : {LossId::smpl, LossId::kp3d, LossId::kp2d, LossId::adv})
      EXPECT_LE(relative_error(id, pb, x), 1e-4) << "loss " << static_cast<int>(id) << " trial " << trial;
  }
}

TEST_F(GradientTest, Kp2dGradientIgnoresZeroConfidenceKeypoints) {
  Rng rng(10);
  auto [pb, x] = draw(rng);
  // Moving an unconfident keypoint's annotation must not change the gradient.
  LossProblem moved = pb;
  int idx = -1;
  for (int i = 0; i < 24; ++i)
    if ((*pb.gt.conf)[i] == 0.0) idx = i;
  if (idx < 0) {
    (*pb.gt.conf)[5] = 0.0;
    moved = pb;
    idx = 5;
  }
  (*moved.gt.keypoints2d)(0, idx) += 300.0;
  EXPECT_EQ(loss_gradient(LossId::kp2d, pb, x), loss_gradient(LossId::kp2d, moved, x));
}

TEST_F(GradientTest, AdvLossOnlyFeelsShapeThroughShapeFactor) {
  Rng rng(11);
  auto [pb, x] = draw(rng);
  const Eigen::VectorXd g = loss_gradient(LossId::adv, pb, x);
  EXPECT_EQ(g.head<6>(), Vec6::Zero());        // global orientation is not a factor
  EXPECT_EQ(g.tail<3>(), Vec3::Zero());        // nor the camera
  EXPECT_NE(g.segment(6 * 24, 10).norm(), 0.0);
}

TEST(GroundTruthBundleTest, EmptyBundleRejected) {
  LossProblem pb;
  EXPECT_THROW(evaluate_loss(LossId::kp3d, pb, SmplVariables::identity().flatten()), InputError);
}

}  // namespace
}  // namespace h4d
