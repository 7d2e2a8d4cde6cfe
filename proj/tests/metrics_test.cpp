#include <gtest/gtest.h>

#include <cmath>

#include "h4d/metrics.hpp"
#include "test_util.hpp"

namespace h4d {
namespace {

// Horn's closed-form absolute orientation with unit quaternions, plus the
// least-squares scale for mapping X onto Y.
Eigen::Matrix3Xd horn_align(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& Y) {
  const Vec3 mx = X.rowwise().mean(), my = Y.rowwise().mean();
  const Eigen::Matrix3Xd a = X.colwise() - mx, b = Y.colwise() - my;
  const Mat3 S = a * b.transpose();
  const double Sxx = S(0, 0), Sxy = S(0, 1), Sxz = S(0, 2), Syx = S(1, 0), Syy = S(1, 1), Syz = S(1, 2), Szx = S(2, 0),
               Szy = S(2, 1), Szz = S(2, 2);
  Eigen::Matrix4d N;
  N << Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx,  //
      Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz,    //
      Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy,   //
      Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  const Mat3 R = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
  const Eigen::Matrix3Xd ra = R * a;
  const double s = (b.array() * ra.array()).sum() / a.squaredNorm();
  return ((s * R) * X).colwise() + (my - s * R * mx);
}

Eigen::Matrix3Xd random_points(Rng& rng, int n) {
  Eigen::Matrix3Xd X(3, n);
  for (int i = 0; i < n; ++i) X.col(i) = Vec3(rng.normal(), rng.normal(), rng.normal());
  return X;
}

TEST(MpjpeTest, HandCases) {
  Rng rng(1);
  const Eigen::Matrix3Xd X = random_points(rng, 5);
  EXPECT_EQ(mpjpe(X, X), 0.0);
  Eigen::Matrix3Xd a(3, 2), b(3, 2);
  a << 0, 0.03, 0, 0.04, 0, 0;
  b << 0, 0, 0, 0, 0, 0;
  EXPECT_NEAR(mpjpe(a, b), 25.0, 1e-12);
  EXPECT_NEAR(mpjpe(X.colwise() + Vec3(1, -2, 3), X), 0.0, 1e-12);
  EXPECT_THROW(mpjpe(X, X.leftCols(3)), DimensionMismatch);
}

TEST(PaMpjpeTest, RemovesSimilarity) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Matrix3Xd Xgt = random_points(rng, 24);
    const Mat3 R = testing::random_rotation(rng);
    const double s = rng.uniform(0.2, 5.0);
    const Eigen::Matrix3Xd X = ((s * R) * Xgt).colwise() + Vec3(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LT(pa_mpjpe(X, Xgt), 1e-8);
  }
}

TEST(PaMpjpeTest, NeverExceedsMpjpe) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Matrix3Xd a = random_points(rng, 3 + trial % 20), b = random_points(rng, 3 + trial % 20);
    const double pa = pa_mpjpe(a, b);
    EXPECT_GE(pa, 0.0);
    EXPECT_LE(pa, mpjpe(a, b) + 1e-9);
  }
}

TEST(PaMpjpeTest, MatchesHornOracle) {
  Eigen::Matrix3Xd X(3, 3), Y(3, 3);
  X << 0, 1, 0, 0, 0, 2, 0, 0, 0;
  Y << 1, 1, 0.5, 2, 3.1, 2, 0.2, 0, 0.9;
  const Eigen::Matrix3Xd aligned = horn_align(X, Y);
  const double expected = 1000.0 * (aligned - Y).colwise().norm().mean();
  EXPECT_NEAR(pa_mpjpe(X, Y), expected, 1e-9);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Matrix3Xd a = random_points(rng, 3 + trial % 10), b = random_points(rng, 3 + trial % 10);
    EXPECT_NEAR(pa_mpjpe(a, b), 1000.0 * (horn_align(a, b) - b).colwise().norm().mean(), 1e-8);
  }
}

TEST(PaMpjpeTest, CollinearInputRejected) {
  Eigen::Matrix3Xd X(3, 4), Y(3, 4);
  X << 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3;
  Y << 0, 1, 0, 2, 0, 0, 1, 1, 1, 0, 0, 3;
  EXPECT_THROW(pa_mpjpe(X, Y), DegenerateConfiguration);
  EXPECT_THROW(pa_mpjpe(Y, X), DegenerateConfiguration);
}

TEST(PckTest, HandCases) {
  Eigen::Matrix2Xd gt(2, 2), pred(2, 2);
  gt << 0, 0, 0, 0;
  pred << 1, 100, 0, 0;
  const Eigen::VectorXd conf = Eigen::VectorXd::Ones(2);
  EXPECT_EQ(pck(gt, gt, conf, 0.05, 100.0), 1.0);
  EXPECT_EQ(pck(pred, gt, conf, 0.1, 100.0), 0.5);
  EXPECT_THROW(pck(pred, gt, Eigen::VectorXd::Zero(2), 0.1, 100.0), NoValidKeypoints);
  EXPECT_THROW(pck(pred, gt, conf, 0.1, 0.0), InputError);
}

TEST(PckTest, MonotoneInThreshold) {
  Rng rng(5);
  Eigen::Matrix2Xd a(2, 30), b(2, 30);
  for (int i = 0; i < 30; ++i) {
    a.col(i) = Eigen::Vector2d(rng.normal(0, 20), rng.normal(0, 20));
    b.col(i) = Eigen::Vector2d(rng.normal(0, 20), rng.normal(0, 20));
  }
  const Eigen::VectorXd conf = Eigen::VectorXd::Ones(30);
  double prev = 0.0;
  for (double tau = 0.01; tau < 1.0; tau += 0.01) {
    const double v = pck(a, b, conf, tau, 100.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

// --- tracking ---------------------------------------------------------------

BBox box_for(int person) { return {100.0 * person, 50.0, 60.0, 150.0}; }

std::vector<TrackFrame> two_tracks(int frames) {
  std::vector<TrackFrame> out;
  for (int t = 0; t < frames; ++t) {
    TrackFrame f{t, {}};
    for (int p = 0; p < 2; ++p) {
      TrackRecord r;
      r.id = p;
      r.bbox = box_for(p);
      r.bbox.x += 3.0 * t;
      f.tracks.push_back(r);
    }
    out.push_back(f);
  }
  return out;
}

TEST(TrackingMetricsTest, PerfectTracker) {
  const auto gt = two_tracks(10);
  const TrackingMetrics m = eval_tracking(gt, gt);
  EXPECT_EQ(m.counts.idsw, 0);
  EXPECT_EQ(m.mota, 1.0);
  EXPECT_EQ(m.idf1, 1.0);
  EXPECT_DOUBLE_EQ(m.hota, 1.0);
  for (double h : m.hota_per_alpha) EXPECT_DOUBLE_EQ(h, 1.0);
}

TEST(TrackingMetricsTest, SingleIdSwitch) {
  const auto gt = two_tracks(10);
  auto pred = gt;
  for (int t = 5; t < 10; ++t) pred[t].tracks[1].id = 7;  // sixth frame onwards
  const TrackingMetrics m = eval_tracking(pred, gt);
  EXPECT_EQ(m.counts.idsw, 1);
  EXPECT_EQ(m.counts.gt_dets, 20);
  EXPECT_DOUBLE_EQ(m.mota, 0.95);
  EXPECT_DOUBLE_EQ(m.idf1, 0.75);
}

TEST(TrackingMetricsTest, EmptyPredictions) {
  const auto gt = two_tracks(10);
  std::vector<TrackFrame> pred;
  const TrackingMetrics m = eval_tracking(pred, gt);
  EXPECT_EQ(m.counts.fn, 20);
  EXPECT_EQ(m.counts.fp, 0);
  EXPECT_EQ(m.mota, 0.0);
  EXPECT_EQ(m.idf1, 0.0);
  EXPECT_EQ(m.hota, 0.0);
}

TEST(TrackingMetricsTest, HotaSplitTrackHandCase) {
  // One person over four frames, predicted as two halves: detection is
  // perfect and each half associates with Jaccard 2 / (4 + 2 - 2) = 0.5.
  std::vector<TrackFrame> gt, pred;
  for (int t = 0; t < 4; ++t) {
    TrackRecord g;
    g.id = 0;
    g.bbox = box_for(0);
    gt.push_back({t, {g}});
    TrackRecord p = g;
    p.id = t < 2 ? 10 : 11;
    pred.push_back({t, {p}});
  }
  const TrackingMetrics m = eval_tracking(pred, gt);
  EXPECT_DOUBLE_EQ(m.deta, 1.0);
  EXPECT_DOUBLE_EQ(m.assa, 0.5);
  EXPECT_NEAR(m.hota, std::sqrt(0.5), 1e-15);
  EXPECT_EQ(m.counts.idsw, 1);
}

TEST(TrackingMetricsTest, InvariantToPredictedIdRelabeling) {
  Rng rng(6);
  const auto gt = two_tracks(12);
  auto pred = gt;
  for (auto& f : pred)
    for (auto& r : f.tracks) {
      r.bbox.x += rng.normal(0, 8);
      r.bbox.w += rng.normal(0, 5);
      if (f.frame == 7) r.id = 1 - r.id;
    }
  pred[3].tracks.pop_back();
  auto relabeled = pred;
  for (auto& f : relabeled)
    for (auto& r : f.tracks) r.id = 1000 - 3 * r.id;
  const TrackingMetrics a = eval_tracking(pred, gt), b = eval_tracking(relabeled, gt);
  EXPECT_EQ(a.mota, b.mota);
  EXPECT_EQ(a.idf1, b.idf1);
  EXPECT_EQ(a.hota, b.hota);
  EXPECT_EQ(a.counts.idsw, b.counts.idsw);
}

TEST(TrackingMetricsTest, InjectedErrorsLowerMota) {
  const auto gt = two_tracks(10);
  auto with_fp = gt;
  TrackRecord ghost;
  ghost.id = 99;
  ghost.bbox = {900, 400, 40, 40};
  with_fp[4].tracks.push_back(ghost);
  const double perfect = eval_tracking(gt, gt).mota;
  const double fp = eval_tracking(with_fp, gt).mota;
  EXPECT_LT(fp, perfect);
  EXPECT_LE(perfect, 1.0);
  auto with_sw = with_fp;
  for (int t = 6; t < 10; ++t) with_sw[t].tracks[0].id = 42;
  EXPECT_LT(eval_tracking(with_sw, gt).mota, fp);
}

TEST(TrackingMetricsTest, SequenceCountsSumBeforeRatios) {
  const auto gt = two_tracks(10);
  auto pred = gt;
  for (int t = 5; t < 10; ++t) pred[t].tracks[1].id = 7;
  TrackingCounts total = tracking_counts(pred, gt);
  total += tracking_counts(gt, gt);
  const TrackingMetrics m = finalize(total);
  EXPECT_EQ(m.counts.sequences, 2);
  EXPECT_DOUBLE_EQ(m.mota, 1.0 - 1.0 / 40.0);
  EXPECT_DOUBLE_EQ(m.idf1, 2.0 * 35 / (2.0 * 35 + 5 + 5));
}

TEST(TrackingMetricsTest, DuplicateIdsRejected) {
  auto gt = two_tracks(2);
  gt[1].tracks[1].id = 0;
  EXPECT_THROW(eval_tracking(gt, gt), InvariantViolation);
}

TEST(TrackingReportTest, HasSchemaAndColumns) {
  const auto gt = two_tracks(3);
  const Json j = tracking_report(eval_tracking(gt, gt), 0.5);
  EXPECT_EQ(j.at("schema"), 1);
  for (const char* key : {"IDs", "MOTA", "IDF1", "HOTA"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST(PoseEvalTest, IdenticalFilesScorePerfect) {
  Rng rng(7);
  std::vector<PoseFrame> frames;
  for (int t = 0; t < 3; ++t) {
    PoseFrame f{t, {}};
    for (int p = 0; p < 2; ++p) {
      PoseRecord r;
      r.bbox = box_for(p);
      r.joints3d = random_points(rng, 24);
      r.keypoints = Keypoints2D{Eigen::Matrix2Xd::Random(2, 24) * 100.0, Eigen::VectorXd::Ones(24)};
      f.people.push_back(r);
    }
    frames.push_back(f);
  }
  const PoseEvalSummary s = eval_pose(frames, frames);
  EXPECT_EQ(s.matched, 6);
  const Json j = pose_report(s);
  EXPECT_EQ(j.at("MPJPE").get<double>(), 0.0);
  EXPECT_LT(j.at("PA-MPJPE").get<double>(), 1e-8);
  EXPECT_EQ(j.at("PCK@0.05").get<double>(), 1.0);
  EXPECT_EQ(j.at("PCK@0.1").get<double>(), 1.0);
  EXPECT_EQ(j.at("n_joints"), 24);
}

}  // namespace
}  // namespace h4d
