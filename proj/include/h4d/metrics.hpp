#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "h4d/assignment.hpp"
#include "h4d/errors.hpp"
#include "h4d/json_io.hpp"
#include "h4d/records.hpp"

namespace h4d {

inline constexpr int kMetricsSchema = 1;

// --- pose -------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() == 0)
    throw DimensionMismatch(std::string(what) + ": point sets differ in shape or are empty");
}
}  // namespace detail

/// Mean joint error after aligning both roots (joint 0), in millimeters.
inline double mpjpe(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& X_gt) {
  detail::check_same_shape(X, X_gt, "mpjpe");
  const Eigen::Matrix3Xd a = X.colwise() - X.col(0);
  const Eigen::Matrix3Xd b = X_gt.colwise() - X_gt.col(0);
  return 1000.0 * (a - b).colwise().norm().mean();
}

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& X) const { return ((scale * rotation) * X).colwise() + translation; }
};

/// Least-squares similarity taking X onto Y (Umeyama).
inline Similarity umeyama(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& Y) {
  detail::check_same_shape(X, Y, "umeyama");
  const double n = static_cast<double>(X.cols());
  const Vec3 mx = X.rowwise().mean(), my = Y.rowwise().mean();
  const Eigen::Matrix3Xd xc = X.colwise() - mx, yc = Y.colwise() - my;
  for (const Eigen::Matrix3Xd* P : {&xc, &yc}) {
    const Eigen::JacobiSVD<Eigen::Matrix3d> sv(*P * P->transpose());
    const Vec3 s = sv.singularValues();
    if (!(s[1] > 1e-12 * std::max(s[0], 1e-300)))
      throw DegenerateConfiguration("Procrustes alignment needs at least 3 non-collinear points");
  }
  const Mat3 sigma = yc * xc.transpose() / n;
  const Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double var_x = xc.squaredNorm() / n;
  s.scale = svd.singularValues().dot(d) / var_x;
  s.translation = my - s.scale * s.rotation * mx;
  return s;
}

/// Mean joint error after similarity alignment of X onto X_gt, millimeters.
inline double pa_mpjpe(const Eigen::Matrix3Xd& X, const Eigen::Matrix3Xd& X_gt) {
  const Eigen::Matrix3Xd aligned = umeyama(X, X_gt).apply(X);
  return 1000.0 * (aligned - X_gt).colwise().norm().mean();
}

struct PckCount {
  long long hits = 0;
  long long valid = 0;
};

inline PckCount pck_count(const Eigen::Matrix2Xd& x, const Eigen::Matrix2Xd& x_gt, const Eigen::VectorXd& conf,
                          double tau, double norm_len) {
  detail::check_same_shape(x, x_gt, "pck");
  if (conf.size() != x.cols()) throw DimensionMismatch("pck: one confidence per keypoint");
  if (!(norm_len > 0.0)) throw InputError("pck: normalization length must be positive");
  PckCount c;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    if (!(conf[i] > 0.0)) continue;
    ++c.valid;
    if ((x.col(i) - x_gt.col(i)).norm() < tau * norm_len) ++c.hits;
  }
  return c;
}

/// Fraction of confident keypoints within tau * norm_len pixels.
inline double pck(const Eigen::Matrix2Xd& x, const Eigen::Matrix2Xd& x_gt, const Eigen::VectorXd& conf, double tau,
                  double norm_len) {
  const PckCount c = pck_count(x, x_gt, conf, tau, norm_len);
  if (c.valid == 0) throw NoValidKeypoints("pck: no keypoint has conf > 0");
  return static_cast<double>(c.hits) / static_cast<double>(c.valid);
}

// --- tracking ---------------------------------------------------------------

inline constexpr int kHotaAlphas = 19;  // 0.05, 0.10, ..., 0.95

inline double hota_alpha(int a) { return 0.05 * (a + 1); }

/// Raw counts of one or more sequences; sums across sequences before the
/// final ratios are taken.
struct TrackingCounts {
  long long sequences = 0;
  long long gt_dets = 0;
  long long pred_dets = 0;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long idsw = 0;
  long long idtp = 0;
  long long idfp = 0;
  long long idfn = 0;
  std::array<double, kHotaAlphas> hota_tp{}, hota_fn{}, hota_fp{}, hota_ass{};

  TrackingCounts& operator+=(const TrackingCounts& o) {
    sequences += o.sequences;
    gt_dets += o.gt_dets;
    pred_dets += o.pred_dets;
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    idsw += o.idsw;
    idtp += o.idtp;
    idfp += o.idfp;
    idfn += o.idfn;
    for (int a = 0; a < kHotaAlphas; ++a) {
      hota_tp[a] += o.hota_tp[a];
      hota_fn[a] += o.hota_fn[a];
      hota_fp[a] += o.hota_fp[a];
      hota_ass[a] += o.hota_ass[a];
    }
    return *this;
  }
};

struct TrackingMetrics {
  TrackingCounts counts;
  double mota = 0.0;
  double idf1 = 0.0;
  double hota = 0.0;
  double deta = 0.0;
  double assa = 0.0;
  std::array<double, kHotaAlphas> hota_per_alpha{};
};

inline TrackingMetrics finalize(const TrackingCounts& c) {
  TrackingMetrics m;
  m.counts = c;
  m.mota = 1.0 - static_cast<double>(c.fn + c.fp + c.idsw) / static_cast<double>(std::max<long long>(c.gt_dets, 1));
  const long long id_den = 2 * c.idtp + c.idfp + c.idfn;
  m.idf1 = id_den > 0 ? 2.0 * static_cast<double>(c.idtp) / static_cast<double>(id_den) : 0.0;
  for (int a = 0; a < kHotaAlphas; ++a) {
    const double det = c.hota_tp[a] / std::max(1.0, c.hota_tp[a] + c.hota_fn[a] + c.hota_fp[a]);
    const double ass = c.hota_ass[a] / std::max(1.0, c.hota_tp[a]);
    m.hota_per_alpha[a] = std::sqrt(det * ass);
    m.deta += det / kHotaAlphas;
    m.assa += ass / kHotaAlphas;
    m.hota += m.hota_per_alpha[a] / kHotaAlphas;
  }
  return m;
}

namespace detail {

struct FrameBoxes {
  std::vector<int> ids;  // dense indices
  std::vector<BBox> boxes;
};

inline Eigen::MatrixXd iou_matrix(const FrameBoxes& g, const FrameBoxes& p) {
  Eigen::MatrixXd s(static_cast<Eigen::Index>(g.boxes.size()), static_cast<Eigen::Index>(p.boxes.size()));
  for (std::size_t i = 0; i < g.boxes.size(); ++i)
    for (std::size_t j = 0; j < p.boxes.size(); ++j) s(i, j) = iou(g.boxes[i], p.boxes[j]);
  return s;
}

// Aligns both streams on frame index and maps ids to dense indices.
struct Aligned {
  std::vector<FrameBoxes> gt, pred;
  int n_gt_ids = 0, n_pred_ids = 0;
};

inline Aligned align(const std::vector<TrackFrame>& pred, const std::vector<TrackFrame>& gt) {
  std::map<long long, std::pair<const TrackFrame*, const TrackFrame*>> frames;
  for (const TrackFrame& f : gt) frames[f.frame].first = &f;
  for (const TrackFrame& f : pred) frames[f.frame].second = &f;
  std::map<int, int> gid, pid;
  Aligned out;
  auto add = [](const TrackFrame* f, std::map<int, int>& ids, FrameBoxes& fb) {
    if (!f) return;
    for (const TrackRecord& r : f->tracks) {
      auto it = ids.find(r.id);
      if (it == ids.end()) it = ids.emplace(r.id, static_cast<int>(ids.size())).first;
      if (std::find(fb.ids.begin(), fb.ids.end(), it->second) != fb.ids.end())
        throw InvariantViolation("id", "duplicate id " + std::to_string(r.id) + " in frame " + std::to_string(f->frame));
      fb.ids.push_back(it->second);
      fb.boxes.push_back(r.bbox);
    }
  };
  for (const auto& [frame, fp] : frames) {
    out.gt.emplace_back();
    out.pred.emplace_back();
    add(fp.first, gid, out.gt.back());
    add(fp.second, pid, out.pred.back());
  }
  out.n_gt_ids = static_cast<int>(gid.size());
  out.n_pred_ids = static_cast<int>(pid.size());
  return out;
}

constexpr double kEps = std::numeric_limits<double>::epsilon();

inline void clear_mot(const Aligned& s, double alpha, TrackingCounts& c) {
  std::vector<int> prev_step(s.n_gt_ids, -1);  // matched in the previous frame
  std::vector<int> last_match(s.n_gt_ids, -1);  // matched at any earlier frame
  for (std::size_t t = 0; t < s.gt.size(); ++t) {
    const FrameBoxes& g = s.gt[t];
    const FrameBoxes& p = s.pred[t];
    c.gt_dets += static_cast<long long>(g.ids.size());
    c.pred_dets += static_cast<long long>(p.ids.size());
    const Eigen::MatrixXd sim = iou_matrix(g, p);
    // Continuing last frame's pairing outranks any new pairing.
    Eigen::MatrixXd score = sim;
    for (Eigen::Index i = 0; i < score.rows(); ++i)
      for (Eigen::Index j = 0; j < score.cols(); ++j) {
        if (sim(i, j) < alpha - kEps)
          score(i, j) = 0.0;
        else if (prev_step[g.ids[i]] == p.ids[j])
          score(i, j) += 1000.0;
      }
    std::fill(prev_step.begin(), prev_step.end(), -1);
    long long matched = 0;
    for (auto [i, j] : match_max_score(score, kEps)) {
      const int gi = g.ids[i], pj = p.ids[j];
      if (last_match[gi] >= 0 && last_match[gi] != pj) ++c.idsw;
      last_match[gi] = pj;
      prev_step[gi] = pj;
      ++matched;
    }
    c.tp += matched;
    c.fn += static_cast<long long>(g.ids.size()) - matched;
    c.fp += static_cast<long long>(p.ids.size()) - matched;
  }
}

inline void identity(const Aligned& s, double alpha, TrackingCounts& c) {
  Eigen::MatrixXd pairs = Eigen::MatrixXd::Zero(s.n_gt_ids, s.n_pred_ids);
  long long n_gt = 0, n_pred = 0;
  for (std::size_t t = 0; t < s.gt.size(); ++t) {
    const Eigen::MatrixXd sim = iou_matrix(s.gt[t], s.pred[t]);
    for (Eigen::Index i = 0; i < sim.rows(); ++i)
      for (Eigen::Index j = 0; j < sim.cols(); ++j)
        if (sim(i, j) >= alpha - kEps) pairs(s.gt[t].ids[i], s.pred[t].ids[j]) += 1.0;
    n_gt += static_cast<long long>(s.gt[t].ids.size());
    n_pred += static_cast<long long>(s.pred[t].ids.size());
  }
  long long idtp = 0;
  for (auto [i, j] : match_max_score(pairs, 0.5)) idtp += static_cast<long long>(pairs(i, j));
  c.idtp += idtp;
  c.idfn += n_gt - idtp;
  c.idfp += n_pred - idtp;
}

inline void hota(const Aligned& s, TrackingCounts& c) {
  const int G = s.n_gt_ids, P = s.n_pred_ids;
  Eigen::MatrixXd potential = Eigen::MatrixXd::Zero(G, P);
  Eigen::VectorXd gt_count = Eigen::VectorXd::Zero(G), pred_count = Eigen::VectorXd::Zero(P);
  std::vector<Eigen::MatrixXd> sims;
  for (std::size_t t = 0; t < s.gt.size(); ++t) {
    const FrameBoxes& g = s.gt[t];
    const FrameBoxes& p = s.pred[t];
    sims.push_back(iou_matrix(g, p));
    const Eigen::MatrixXd& sim = sims.back();
    const Eigen::VectorXd row_sum = sim.rowwise().sum();
    const Eigen::RowVectorXd col_sum = sim.colwise().sum();
    for (Eigen::Index i = 0; i < sim.rows(); ++i)
      for (Eigen::Index j = 0; j < sim.cols(); ++j) {
        const double den = row_sum[i] + col_sum[j] - sim(i, j);
        if (den > kEps) potential(g.ids[i], p.ids[j]) += sim(i, j) / den;
      }
    for (int id : g.ids) gt_count[id] += 1.0;
    for (int id : p.ids) pred_count[id] += 1.0;
  }
  Eigen::MatrixXd global(G, P);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < P; ++j) global(i, j) = potential(i, j) / (gt_count[i] + pred_count[j] - potential(i, j));

  std::vector<Eigen::MatrixXd> matches(kHotaAlphas, Eigen::MatrixXd::Zero(G, P));
  std::array<double, kHotaAlphas> tp{};
  for (std::size_t t = 0; t < s.gt.size(); ++t) {
    const FrameBoxes& g = s.gt[t];
    const FrameBoxes& p = s.pred[t];
    const double ng = static_cast<double>(g.ids.size()), np = static_cast<double>(p.ids.size());
    if (g.ids.empty() || p.ids.empty()) {
      for (int a = 0; a < kHotaAlphas; ++a) {
        c.hota_fn[a] += ng;
        c.hota_fp[a] += np;
      }
      continue;
    }
    const Eigen::MatrixXd& sim = sims[t];
    Eigen::MatrixXd score(sim.rows(), sim.cols());
    for (Eigen::Index i = 0; i < sim.rows(); ++i)
      for (Eigen::Index j = 0; j < sim.cols(); ++j) score(i, j) = global(g.ids[i], p.ids[j]) * sim(i, j);
    const auto m = match_max_score(score, -1.0);  // keep every assigned pair; thresholded below
    for (int a = 0; a < kHotaAlphas; ++a) {
      double n = 0.0;
      for (auto [i, j] : m) {
        if (sim(i, j) < hota_alpha(a) - kEps) continue;
        n += 1.0;
        matches[a](g.ids[i], p.ids[j]) += 1.0;
      }
      tp[a] += n;
      c.hota_tp[a] += n;
      c.hota_fn[a] += ng - n;
      c.hota_fp[a] += np - n;
    }
  }
  for (int a = 0; a < kHotaAlphas; ++a) {
    double num = 0.0;
    for (int i = 0; i < G; ++i)
      for (int j = 0; j < P; ++j) {
        const double mc = matches[a](i, j);
        if (mc == 0.0) continue;
        num += mc * mc / std::max(1.0, gt_count[i] + pred_count[j] - mc);
      }
    c.hota_ass[a] += num;
  }
}

}  // namespace detail

/// Counts for one sequence: CLEAR (IoU >= alpha with carry-over of the
/// previous frame's pairs), global identity matching, and HOTA.
inline TrackingCounts tracking_counts(const std::vector<TrackFrame>& pred, const std::vector<TrackFrame>& gt,
                                      double alpha = 0.5) {
  const detail::Aligned s = detail::align(pred, gt);
  TrackingCounts c;
  c.sequences = 1;
  detail::clear_mot(s, alpha, c);
  detail::identity(s, alpha, c);
  detail::hota(s, c);
  return c;
}

inline TrackingMetrics eval_tracking(const std::vector<TrackFrame>& pred, const std::vector<TrackFrame>& gt,
                                     double alpha = 0.5) {
  return finalize(tracking_counts(pred, gt, alpha));
}

inline Json tracking_report(const TrackingMetrics& m, double alpha) {
  const TrackingCounts& c = m.counts;
  Json j;
  j["schema"] = kMetricsSchema;
  j["IDs"] = c.idsw;
  j["MOTA"] = m.mota;
  j["IDF1"] = m.idf1;
  j["HOTA"] = m.hota;
  j["DetA"] = m.deta;
  j["AssA"] = m.assa;
  j["alpha"] = alpha;
  j["sequences"] = c.sequences;
  j["counts"] = Json{{"GT", c.gt_dets}, {"pred", c.pred_dets}, {"TP", c.tp},     {"FP", c.fp},
                     {"FN", c.fn},      {"IDSW", c.idsw},      {"IDTP", c.idtp}, {"IDFP", c.idfp},
                     {"IDFN", c.idfn}};
  return j;
}

// --- pose evaluation over files ----------------------------------------------

/// One person in one frame, as read from a fit or track file.
struct PoseRecord {
  BBox bbox;
  std::optional<Keypoints2D> keypoints;
  std::optional<Eigen::Matrix3Xd> joints3d;
};

struct PoseFrame {
  long long frame = 0;
  std::vector<PoseRecord> people;
};

struct PoseEvalSummary {
  long long gt_people = 0;
  long long pred_people = 0;
  long long matched = 0;
  long long with_joints = 0;
  double mpjpe_sum = 0.0;
  double pa_mpjpe_sum = 0.0;
  PckCount pck05, pck10;
  int n_joints = 0;
};

/// Pairs people by box overlap (maximum total IoU, IoU >= alpha) per frame,
/// then accumulates joint errors and PCK against the ground truth.
inline PoseEvalSummary eval_pose(const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt,
                                 double alpha = 0.5) {
  std::map<long long, const PoseFrame*> by_frame;
  for (const PoseFrame& f : pred) by_frame[f.frame] = &f;
  PoseEvalSummary s;
  for (const PoseFrame& f : pred) s.pred_people += static_cast<long long>(f.people.size());
  for (const PoseFrame& g : gt) {
    s.gt_people += static_cast<long long>(g.people.size());
    auto it = by_frame.find(g.frame);
    if (it == by_frame.end()) continue;
    const PoseFrame& p = *it->second;
    Eigen::MatrixXd score(static_cast<Eigen::Index>(g.people.size()), static_cast<Eigen::Index>(p.people.size()));
    for (std::size_t i = 0; i < g.people.size(); ++i)
      for (std::size_t j = 0; j < p.people.size(); ++j) {
        const double v = iou(g.people[i].bbox, p.people[j].bbox);
        score(i, j) = v >= alpha - detail::kEps ? v : 0.0;
      }
    for (auto [i, j] : match_max_score(score, 0.0)) {
      ++s.matched;
      const PoseRecord& gr = g.people[i];
      const PoseRecord& pr = p.people[j];
      if (gr.joints3d && pr.joints3d) {
        if (s.n_joints == 0) s.n_joints = static_cast<int>(gr.joints3d->cols());
        s.mpjpe_sum += mpjpe(*pr.joints3d, *gr.joints3d);
        s.pa_mpjpe_sum += pa_mpjpe(*pr.joints3d, *gr.joints3d);
        ++s.with_joints;
      }
      if (gr.keypoints && pr.keypoints) {
        const double norm_len = std::max(gr.bbox.w, gr.bbox.h);
        for (auto [tau, acc] : {std::pair{0.05, &s.pck05}, std::pair{0.1, &s.pck10}}) {
          const PckCount c = pck_count(pr.keypoints->uv, gr.keypoints->uv, gr.keypoints->conf, tau, norm_len);
          acc->hits += c.hits;
          acc->valid += c.valid;
        }
      }
    }
  }
  return s;
}

inline Json pose_report(const PoseEvalSummary& s) {
  auto ratio = [](double num, long long den) { return den > 0 ? Json(num / static_cast<double>(den)) : Json(nullptr); };
  Json j;
  j["schema"] = kMetricsSchema;
  j["MPJPE"] = ratio(s.mpjpe_sum, s.with_joints);
  j["PA-MPJPE"] = ratio(s.pa_mpjpe_sum, s.with_joints);
  j["PCK@0.05"] = ratio(static_cast<double>(s.pck05.hits), s.pck05.valid);
  j["PCK@0.1"] = ratio(static_cast<double>(s.pck10.hits), s.pck10.valid);
  j["n_joints"] = s.n_joints;
  j["counts"] = Json{{"gt_people", s.gt_people}, {"pred_people", s.pred_people}, {"matched", s.matched},
                     {"with_joints", s.with_joints}, {"keypoints", s.pck05.valid}};
  return j;
}

}  // namespace h4d
