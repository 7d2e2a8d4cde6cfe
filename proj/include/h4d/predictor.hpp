#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "h4d/body_model.hpp"
#include "h4d/errors.hpp"
#include "h4d/json_io.hpp"
#include "h4d/random.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

inline constexpr int kPoseTokenDim = 6 * kNumJoints;   // 144
inline constexpr int kTokenDim = kPoseTokenDim + 3;    // pose + location
inline constexpr int kMaxHistory = 12;
inline constexpr int kMaxHorizon = 4;

/// One frame of a track. Unobserved slots keep a payload (e.g. an earlier
/// prediction) that the predictor never reads.
struct HistorySlot {
  long long frame = 0;
  PoseParams pose = PoseParams::identity();
  Vec3 location = Vec3::Zero();
  bool observed = true;
};

using TrackHistory = std::vector<HistorySlot>;

inline void check_history(const TrackHistory& h) {
  if (static_cast<int>(h.size()) > kMaxHistory)
    throw InvariantViolation("history", "at most " + std::to_string(kMaxHistory) + " slots");
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i].frame <= h[i - 1].frame) throw InvariantViolation("history", "frames must be strictly increasing");
}

struct PosePrediction {
  long long frame = 0;
  PoseParams pose;
  Vec3 location = Vec3::Zero();
};

// --- baseline ---------------------------------------------------------------

/// Holds the last observed pose; extrapolates the location linearly (per
/// frame) from the last two observed slots, or holds it with only one.
inline std::vector<PosePrediction> baseline_predict_frames(const TrackHistory& h, const std::vector<long long>& frames) {
  const HistorySlot* last = nullptr;
  const HistorySlot* prev = nullptr;
  for (auto it = h.rbegin(); it != h.rend(); ++it) {
    if (!it->observed) continue;
    if (!last) {
      last = &*it;
    } else {
      prev = &*it;
      break;
    }
  }
  if (!last) throw InputError("baseline_predict: history has no observed slot");
  Vec3 velocity = Vec3::Zero();
  if (prev) velocity = (last->location - prev->location) / static_cast<double>(last->frame - prev->frame);
  std::vector<PosePrediction> out;
  for (long long f : frames)
    out.push_back({f, last->pose, last->location + velocity * static_cast<double>(f - last->frame)});
  return out;
}

inline std::vector<PosePrediction> baseline_predict(const TrackHistory& h, int horizon) {
  if (h.empty()) throw InputError("baseline_predict: empty history");
  if (horizon < 1 || horizon > kMaxHorizon) throw InputError("baseline_predict: horizon must be in [1, 4]");
  std::vector<long long> frames;
  for (int j = 1; j <= horizon; ++j) frames.push_back(h.back().frame + j);
  return baseline_predict_frames(h, frames);
}

// --- transformer weights ----------------------------------------------------

struct PredictorDims {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 512;
  double pe_base = 10000.0;
};

struct EncoderLayer {
  Eigen::VectorXd ln1_gamma, ln1_beta;
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::VectorXd ln2_gamma, ln2_beta;
  Eigen::MatrixXd w1;  // d_ff x d
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // d x d_ff
  Eigen::VectorXd b2;
};

struct PredictorWeights {
  PredictorDims dims;
  Eigen::MatrixXd embed_w;  // d x 147
  Eigen::VectorXd embed_b;
  Eigen::VectorXd mask_token;
  std::vector<EncoderLayer> layers;
  Eigen::MatrixXd readout_w;  // 147 x d
  Eigen::VectorXd readout_b;

  void check() const {
    const int d = dims.d_model;
    auto mat = [](const Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c, const std::string& name) {
      if (m.rows() != r || m.cols() != c)
        throw DimensionMismatch("predictor weights: " + name + " is " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
      if (!m.allFinite()) throw InvariantViolation("finite", "predictor weights: " + name + " not finite");
    };
    auto vec = [&](const Eigen::VectorXd& v, Eigen::Index n, const std::string& name) { mat(v, n, 1, name); };
    if (d < 2 || dims.n_heads < 1 || d % dims.n_heads != 0 || dims.d_ff < 1 || dims.n_layers < 0 ||
        !(dims.pe_base > 1.0))
      throw DimensionMismatch("predictor weights: inconsistent dims");
    if (static_cast<int>(layers.size()) != dims.n_layers) throw DimensionMismatch("predictor weights: layer count");
    mat(embed_w, d, kTokenDim, "embed.weight");
    vec(embed_b, d, "embed.bias");
    vec(mask_token, d, "mask_token");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const EncoderLayer& L = layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      vec(L.ln1_gamma, d, p + "ln1.gamma");
      vec(L.ln1_beta, d, p + "ln1.beta");
      mat(L.wq, d, d, p + "attn.wq");
      mat(L.wk, d, d, p + "attn.wk");
      mat(L.wv, d, d, p + "attn.wv");
      mat(L.wo, d, d, p + "attn.wo");
      vec(L.bq, d, p + "attn.bq");
      vec(L.bk, d, p + "attn.bk");
      vec(L.bv, d, p + "attn.bv");
      vec(L.bo, d, p + "attn.bo");
      vec(L.ln2_gamma, d, p + "ln2.gamma");
      vec(L.ln2_beta, d, p + "ln2.beta");
      mat(L.w1, dims.d_ff, d, p + "ff.w1");
      vec(L.b1, dims.d_ff, p + "ff.b1");
      mat(L.w2, d, dims.d_ff, p + "ff.w2");
      vec(L.b2, d, p + "ff.b2");
    }
    mat(readout_w, kTokenDim, d, "readout.weight");
    vec(readout_b, kTokenDim, "readout.bias");
  }

  /// All-zero weights with unit layer-norm gains.
  static PredictorWeights zeros(const PredictorDims& dims = {}) {
    PredictorWeights w;
    w.dims = dims;
    const int d = dims.d_model;
    w.embed_w = Eigen::MatrixXd::Zero(d, kTokenDim);
    w.embed_b = Eigen::VectorXd::Zero(d);
    w.mask_token = Eigen::VectorXd::Zero(d);
    for (int l = 0; l < dims.n_layers; ++l) {
      EncoderLayer L;
      L.ln1_gamma = L.ln2_gamma = Eigen::VectorXd::Ones(d);
      L.ln1_beta = L.ln2_beta = L.bq = L.bk = L.bv = L.bo = L.b2 = Eigen::VectorXd::Zero(d);
      L.wq = L.wk = L.wv = L.wo = Eigen::MatrixXd::Zero(d, d);
      L.w1 = Eigen::MatrixXd::Zero(dims.d_ff, d);
      L.b1 = Eigen::VectorXd::Zero(dims.d_ff);
      L.w2 = Eigen::MatrixXd::Zero(d, dims.d_ff);
      w.layers.push_back(std::move(L));
    }
    w.readout_w = Eigen::MatrixXd::Zero(kTokenDim, d);
    w.readout_b = Eigen::VectorXd::Zero(kTokenDim);
    return w;
  }

  /// Random initialization: Gaussian matrices with std 1/sqrt(fan_in),
  /// small biases, unit layer-norm gains. The readout bias starts at the
  /// identity 6D encoding so untrained outputs are near rest pose.
  static PredictorWeights random(std::uint64_t seed, const PredictorDims& dims = {}) {
    PredictorWeights w = zeros(dims);
    Rng rng(seed);
    auto fill = [&](Eigen::MatrixXd& m, double sigma) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = sigma * rng.normal();
    };
    auto fillv = [&](Eigen::VectorXd& v, double sigma) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigma * rng.normal();
    };
    const int d = dims.d_model;
    fill(w.embed_w, 1.0 / std::sqrt(double(kTokenDim)));
    fillv(w.embed_b, 0.01);
    fillv(w.mask_token, 1.0);
    for (EncoderLayer& L : w.layers) {
      for (Eigen::MatrixXd* m : {&L.wq, &L.wk, &L.wv, &L.wo}) fill(*m, 1.0 / std::sqrt(double(d)));
      for (Eigen::VectorXd* v : {&L.bq, &L.bk, &L.bv, &L.bo, &L.b2}) fillv(*v, 0.01);
      fill(L.w1, 1.0 / std::sqrt(double(d)));
      fillv(L.b1, 0.01);
      fill(L.w2, 1.0 / std::sqrt(double(dims.d_ff)));
    }
    fill(w.readout_w, 1.0 / std::sqrt(double(d)));
    for (int j = 0; j < kNumJoints; ++j) w.readout_b.segment<6>(6 * j) = Rotation6D::identity().a;
    return w;
  }
};

// --- weights file -----------------------------------------------------------

namespace detail {

inline Json flat_weights(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

inline Eigen::MatrixXd unflat_weights(const Json& j, const std::string& key, Eigen::Index rows, Eigen::Index cols) {
  const std::vector<double> v = get_numbers(j, key.c_str());
  if (static_cast<Eigen::Index>(v.size()) != rows * cols)
    throw DimensionMismatch("predictor weights: " + key + " has " + std::to_string(v.size()) + " values, expected " +
                            std::to_string(rows * cols));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace detail

inline Json predictor_weights_to_json(const PredictorWeights& w) {
  w.check();
  Json j;
  j["dims"] = Json{{"d_model", w.dims.d_model}, {"n_heads", w.dims.n_heads}, {"n_layers", w.dims.n_layers},
                   {"d_ff", w.dims.d_ff}, {"pe_base", w.dims.pe_base}, {"token_dim", kTokenDim}};
  j["embed.weight"] = detail::flat_weights(w.embed_w);
  j["embed.bias"] = detail::flat_weights(w.embed_b);
  j["mask_token"] = detail::flat_weights(w.mask_token);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const EncoderLayer& L = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    j[p + "ln1.gamma"] = detail::flat_weights(L.ln1_gamma);
    j[p + "ln1.beta"] = detail::flat_weights(L.ln1_beta);
    j[p + "attn.wq"] = detail::flat_weights(L.wq);
    j[p + "attn.wk"] = detail::flat_weights(L.wk);
    j[p + "attn.wv"] = detail::flat_weights(L.wv);
    j[p + "attn.wo"] = detail::flat_weights(L.wo);
    j[p + "attn.bq"] = detail::flat_weights(L.bq);
    j[p + "attn.bk"] = detail::flat_weights(L.bk);
    j[p + "attn.bv"] = detail::flat_weights(L.bv);
    j[p + "attn.bo"] = detail::flat_weights(L.bo);
    j[p + "ln2.gamma"] = detail::flat_weights(L.ln2_gamma);
    j[p + "ln2.beta"] = detail::flat_weights(L.ln2_beta);
    j[p + "ff.w1"] = detail::flat_weights(L.w1);
    j[p + "ff.b1"] = detail::flat_weights(L.b1);
    j[p + "ff.w2"] = detail::flat_weights(L.w2);
    j[p + "ff.b2"] = detail::flat_weights(L.b2);
  }
  j["readout.weight"] = detail::flat_weights(w.readout_w);
  j["readout.bias"] = detail::flat_weights(w.readout_b);
  return j;
}

inline PredictorWeights predictor_weights_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("dims")) throw ParseError("dims", "missing dims header");
  const Json& D = j.at("dims");
  PredictorDims dims;
  dims.d_model = get_field<int>(D, "d_model");
  dims.n_heads = get_field<int>(D, "n_heads");
  dims.n_layers = get_field<int>(D, "n_layers");
  dims.d_ff = get_field<int>(D, "d_ff");
  if (has_value(D, "pe_base")) dims.pe_base = get_field<double>(D, "pe_base");
  if (has_value(D, "token_dim") && get_field<int>(D, "token_dim") != kTokenDim)
    throw DimensionMismatch("predictor weights: token_dim must be 147");
  if (dims.d_model < 2 || dims.n_heads < 1 || dims.d_model % dims.n_heads != 0 || dims.n_layers < 0 || dims.d_ff < 1)
    throw DimensionMismatch("predictor weights: inconsistent dims");
  const int d = dims.d_model;
  PredictorWeights w;
  w.dims = dims;
  w.embed_w = detail::unflat_weights(j, "embed.weight", d, kTokenDim);
  w.embed_b = detail::unflat_weights(j, "embed.bias", d, 1);
  w.mask_token = detail::unflat_weights(j, "mask_token", d, 1);
  for (int l = 0; l < dims.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    EncoderLayer L;
    L.ln1_gamma = detail::unflat_weights(j, p + "ln1.gamma", d, 1);
    L.ln1_beta = detail::unflat_weights(j, p + "ln1.beta", d, 1);
    L.wq = detail::unflat_weights(j, p + "attn.wq", d, d);
    L.wk = detail::unflat_weights(j, p + "attn.wk", d, d);
    L.wv = detail::unflat_weights(j, p + "attn.wv", d, d);
    L.wo = detail::unflat_weights(j, p + "attn.wo", d, d);
    L.bq = detail::unflat_weights(j, p + "attn.bq", d, 1);
    L.bk = detail::unflat_weights(j, p + "attn.bk", d, 1);
    L.bv = detail::unflat_weights(j, p + "attn.bv", d, 1);
    L.bo = detail::unflat_weights(j, p + "attn.bo", d, 1);
    L.ln2_gamma = detail::unflat_weights(j, p + "ln2.gamma", d, 1);
    L.ln2_beta = detail::unflat_weights(j, p + "ln2.beta", d, 1);
    L.w1 = detail::unflat_weights(j, p + "ff.w1", dims.d_ff, d);
    L.b1 = detail::unflat_weights(j, p + "ff.b1", dims.d_ff, 1);
    L.w2 = detail::unflat_weights(j, p + "ff.w2", d, dims.d_ff);
    L.b2 = detail::unflat_weights(j, p + "ff.b2", d, 1);
    w.layers.push_back(std::move(L));
  }
  w.readout_w = detail::unflat_weights(j, "readout.weight", kTokenDim, d);
  w.readout_b = detail::unflat_weights(j, "readout.bias", kTokenDim, 1);
  w.check();
  return w;
}

inline PredictorWeights load_predictor_weights(const std::string& path) {
  return predictor_weights_from_json(read_json_file(path));
}

inline void save_predictor_weights(const PredictorWeights& w, const std::string& path) {
  write_text_file(path, dump_json(predictor_weights_to_json(w)) + "\n");
}

// --- transformer ------------------------------------------------------------

/// Attention matrices of a forward pass, layer-major then head; rows are
/// queries and each row is a probability vector.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> attention;
};

/// Pre-norm transformer encoder over track tokens. Observed slots embed
/// their pose (24 6D blocks) and location; unobserved slots and query
/// positions use the learned mask token. Both add a sinusoidal encoding of
/// the frame offset from the first slot of the window.
class MaskedPosePredictor {
 public:
  explicit MaskedPosePredictor(PredictorWeights w) : w_(std::move(w)) { w_.check(); }

  const PredictorWeights& weights() const { return w_; }
  int d_model() const { return w_.dims.d_model; }

  Eigen::VectorXd positional_encoding(double offset) const {
    const int d = d_model();
    Eigen::VectorXd pe(d);
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(w_.dims.pe_base, -static_cast<double>(i - i % 2) / d);
      pe[i] = i % 2 == 0 ? std::sin(offset * freq) : std::cos(offset * freq);
    }
    return pe;
  }

  static Eigen::VectorXd payload(const PoseParams& pose, const Vec3& location) {
    if (pose.size() != kNumJoints) throw DimensionMismatch("predictor: pose needs 24 rotations");
    Eigen::VectorXd x(kTokenDim);
    for (int j = 0; j < kNumJoints; ++j) x.segment<6>(6 * j) = rotmat_to_rot6d(pose.rotations[j]).a;
    x.tail<3>() = location;
    return x;
  }

  Eigen::VectorXd observed_token(const HistorySlot& s, double offset) const {
    return w_.embed_w * payload(s.pose, s.location) + w_.embed_b + positional_encoding(offset);
  }

  Eigen::VectorXd mask_token(double offset) const { return w_.mask_token + positional_encoding(offset); }

  /// Runs the encoder layers on a d x n token matrix.
  Eigen::MatrixXd encode(Eigen::MatrixXd x, ForwardTrace* trace = nullptr) const {
    if (x.rows() != d_model()) throw DimensionMismatch("predictor: token width differs from d_model");
    const int d = d_model();
    const int H = w_.dims.n_heads;
    const int dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index n = x.cols();
    for (const EncoderLayer& L : w_.layers) {
      const Eigen::MatrixXd h = layer_norm(x, L.ln1_gamma, L.ln1_beta);
      const Eigen::MatrixXd q = (L.wq * h).colwise() + L.bq;
      const Eigen::MatrixXd k = (L.wk * h).colwise() + L.bk;
      const Eigen::MatrixXd v = (L.wv * h).colwise() + L.bv;
      Eigen::MatrixXd heads(d, n);
      for (int hd = 0; hd < H; ++hd) {
        Eigen::MatrixXd a = scale * q.middleRows(hd * dh, dh).transpose() * k.middleRows(hd * dh, dh);
        for (Eigen::Index r = 0; r < n; ++r) {
          const double m = a.row(r).maxCoeff();
          a.row(r) = (a.row(r).array() - m).exp();
          a.row(r) /= a.row(r).sum();
        }
#ifndef NDEBUG
        check_simplex(a);
#endif
        heads.middleRows(hd * dh, dh) = v.middleRows(hd * dh, dh) * a.transpose();
        if (trace) trace->attention.push_back(a);
      }
      x += (L.wo * heads).colwise() + L.bo;
      const Eigen::MatrixXd h2 = layer_norm(x, L.ln2_gamma, L.ln2_beta);
      const Eigen::MatrixXd f = ((L.w1 * h2).colwise() + L.b1).cwiseMax(0.0);
      x += (L.w2 * f).colwise() + L.b2;
    }
    return x;
  }

  /// Maps a residual-stream column to pose and location. Each 6D block is
  /// decoded by Gram-Schmidt; a degenerate block falls back to identity.
  PosePrediction read_out(const Eigen::VectorXd& token, long long frame) const {
    const Eigen::VectorXd y = w_.readout_w * token + w_.readout_b;
    PosePrediction p{frame, PoseParams::identity(), y.tail<3>()};
    for (int j = 0; j < kNumJoints; ++j) {
      try {
        p.pose.rotations[j] = rot6d_to_rotmat(Rotation6D{y.segment<6>(6 * j)});
      } catch (const DegenerateInput&) {
        p.pose.rotations[j] = Mat3::Identity();
      }
    }
    return p;
  }

  /// Predictions for the given future frames (each after the last slot).
  std::vector<PosePrediction> predict_frames(const TrackHistory& history, const std::vector<long long>& frames,
                                             ForwardTrace* trace = nullptr) const {
    if (history.empty()) throw InputError("predict: empty history");
    check_history(history);
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (frames[i] <= (i == 0 ? history.back().frame : frames[i - 1]))
        throw InputError("predict: query frames must follow the history");
    const long long start = history.front().frame;
    const Eigen::Index n = static_cast<Eigen::Index>(history.size() + frames.size());
    Eigen::MatrixXd x(d_model(), n);
    Eigen::Index c = 0;
    for (const HistorySlot& s : history) {
      const double off = static_cast<double>(s.frame - start);
      x.col(c++) = s.observed ? observed_token(s, off) : mask_token(off);
    }
    for (long long f : frames) x.col(c++) = mask_token(static_cast<double>(f - start));
    const Eigen::MatrixXd y = encode(std::move(x), trace);
    std::vector<PosePrediction> out;
    for (std::size_t i = 0; i < frames.size(); ++i)
      out.push_back(read_out(y.col(static_cast<Eigen::Index>(history.size() + i)), frames[i]));
    return out;
  }

  std::vector<PosePrediction> predict(const TrackHistory& history, int horizon, ForwardTrace* trace = nullptr) const {
    if (horizon < 1 || horizon > kMaxHorizon) throw InputError("predict: horizon must be in [1, 4]");
    if (history.empty()) throw InputError("predict: empty history");
    std::vector<long long> frames;
    for (int j = 1; j <= horizon; ++j) frames.push_back(history.back().frame + j);
    return predict_frames(history, frames, trace);
  }

  /// Fills every unobserved slot; observed slots are not returned.
  std::vector<PosePrediction> impute(const TrackHistory& history, ForwardTrace* trace = nullptr) const {
    check_history(history);
    std::vector<PosePrediction> out;
    if (std::none_of(history.begin(), history.end(), [](const HistorySlot& s) { return !s.observed; })) return out;
    const long long start = history.front().frame;
    Eigen::MatrixXd x(d_model(), static_cast<Eigen::Index>(history.size()));
    for (std::size_t i = 0; i < history.size(); ++i) {
      const double off = static_cast<double>(history[i].frame - start);
      x.col(static_cast<Eigen::Index>(i)) = history[i].observed ? observed_token(history[i], off) : mask_token(off);
    }
    const Eigen::MatrixXd y = encode(std::move(x), trace);
    for (std::size_t i = 0; i < history.size(); ++i)
      if (!history[i].observed) out.push_back(read_out(y.col(static_cast<Eigen::Index>(i)), history[i].frame));
    return out;
  }

 private:
  static Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b) {
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double mean = x.col(c).mean();
      const double var = (x.col(c).array() - mean).square().mean();
      y.col(c) = ((x.col(c).array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(g) + b;
    }
    return y;
  }

  static void check_simplex(const Eigen::MatrixXd& a) {
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      if (a.row(r).minCoeff() < 0.0 || std::abs(a.row(r).sum() - 1.0) > 1e-6)
        throw InvariantViolation("attention", "attention row is not a probability vector");
  }

  PredictorWeights w_;
};

}  // namespace h4d
