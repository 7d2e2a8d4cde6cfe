#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "h4d/errors.hpp"
#include "h4d/random.hpp"
#include "h4d/rotation.hpp"

namespace h4d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kNumJoints = 24;
inline constexpr int kNumBetas = 10;
inline constexpr int kPoseFeaturesPerJoint = 9;

/// Per-joint rotations; entry 0 is the global orientation, the rest are the
/// body pose in kinematic-tree order.
struct PoseParams {
  std::vector<Mat3> rotations;

  PoseParams() = default;
  explicit PoseParams(int n_joints) : rotations(n_joints, Mat3::Identity()) {}
  static PoseParams identity(int n_joints = kNumJoints) { return PoseParams(n_joints); }

  int size() const { return static_cast<int>(rotations.size()); }
  const Mat3& global_orient() const { return rotations.at(0); }
  Mat3& global_orient() { return rotations.at(0); }
};

struct ShapeParams {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(kNumBetas);

  ShapeParams() = default;
  explicit ShapeParams(Eigen::VectorXd b) : beta(std::move(b)) {}
  static ShapeParams zero(int n = kNumBetas) { return ShapeParams(Eigen::VectorXd::Zero(n)); }
};

/// Throws InvariantViolation unless every rotation is in SO(3) within tol.
inline void check_pose(const PoseParams& pose, double tol = 1e-6) {
  for (int i = 0; i < pose.size(); ++i)
    if (!is_rotation(pose.rotations[i], tol))
      throw InvariantViolation("pose", "rotation " + std::to_string(i) + " is not in SO(3)");
}

/// Data-driven parametric body. All matrices are row-major so that their
/// storage is the flat array used on disk.
///   template_vertices  N x 3
///   shape_blend        3N x B      (row 3n+c)
///   pose_blend         3N x 9(k-1) (row 3n+c)
///   joint_weights      N x k       (X = M W, columns sum to one)
///   skinning_weights   N x k       (rows sum to one)
struct BodyModel {
  int n_vertices = 0;
  int n_joints = 0;
  RowMatrix template_vertices;
  RowMatrix shape_blend;
  RowMatrix pose_blend;
  RowMatrix joint_weights;
  RowMatrix skinning_weights;
  std::vector<int> parents;

  int n_betas() const { return static_cast<int>(shape_blend.cols()); }
  int n_pose_features() const { return kPoseFeaturesPerJoint * (n_joints - 1); }

  bool operator==(const BodyModel& o) const {
    return n_vertices == o.n_vertices && n_joints == o.n_joints &&
           template_vertices == o.template_vertices && shape_blend == o.shape_blend &&
           pose_blend == o.pose_blend && joint_weights == o.joint_weights &&
           skinning_weights == o.skinning_weights && parents == o.parents;
  }
};

struct MeshAndJoints {
  Eigen::Matrix3Xd mesh;    // 3 x N
  Eigen::Matrix3Xd joints;  // 3 x k
};

inline constexpr double kWeightSumTol = 1e-8;

inline void validate(const BodyModel& m) {
  const int N = m.n_vertices;
  const int k = m.n_joints;
  if (N <= 0 || k <= 0) throw DimensionMismatch("model: n_vertices and n_joints must be positive");
  auto dims = [](const RowMatrix& a, Eigen::Index r, Eigen::Index c, const char* name) {
    if (a.rows() != r || a.cols() != c)
      throw DimensionMismatch(std::string("model: ") + name + " has shape " +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  dims(m.template_vertices, N, 3, "template");
  if (m.shape_blend.rows() != 3 * N || m.shape_blend.cols() < 1)
    throw DimensionMismatch("model: shape_blend must have 3N rows");
  dims(m.pose_blend, 3 * N, m.n_pose_features(), "pose_blend");
  dims(m.joint_weights, N, k, "joint_weight_matrix");
  dims(m.skinning_weights, N, k, "skinning_weights");
  if (static_cast<int>(m.parents.size()) != k) throw DimensionMismatch("model: parents length != n_joints");

  if (m.parents[0] != -1) throw InvariantViolation("parents", "joint 0 must be the root (-1)");
  for (int i = 1; i < k; ++i)
    if (m.parents[i] < 0 || m.parents[i] >= i)
      throw InvariantViolation("parents", "parents[" + std::to_string(i) + "] = " +
                                              std::to_string(m.parents[i]) + " is not in [0, " +
                                              std::to_string(i) + ")");
  for (const RowMatrix* a : {&m.template_vertices, &m.shape_blend, &m.pose_blend,
                             &m.joint_weights, &m.skinning_weights})
    if (!a->allFinite()) throw InvariantViolation("finite", "model contains non-finite values");
  for (int n = 0; n < N; ++n) {
    if ((m.skinning_weights.row(n).array() < 0.0).any())
      throw InvariantViolation("skinning_weights", "negative weight at vertex " + std::to_string(n));
    if (std::abs(m.skinning_weights.row(n).sum() - 1.0) > kWeightSumTol)
      throw InvariantViolation("skinning_weights", "row " + std::to_string(n) + " does not sum to 1");
  }
  for (int j = 0; j < k; ++j)
    if (std::abs(m.joint_weights.col(j).sum() - 1.0) > kWeightSumTol)
      throw InvariantViolation("joint_weight_matrix", "column " + std::to_string(j) + " does not sum to 1");
}

namespace detail {

// Rigid transform x -> R x + t.
struct Rigid {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

inline void check_inputs(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape) {
  if (pose.size() != model.n_joints)
    throw DimensionMismatch("pose has " + std::to_string(pose.size()) + " rotations, model has " +
                            std::to_string(model.n_joints) + " joints");
  if (shape.beta.size() != model.n_betas())
    throw DimensionMismatch("shape has " + std::to_string(shape.beta.size()) +
                            " coefficients, model expects " + std::to_string(model.n_betas()));
}

// Pose-blend features vec(R_i - I), row-major, for the non-root joints.
inline Eigen::VectorXd pose_features(const PoseParams& pose) {
  const int k = pose.size();
  Eigen::VectorXd f(kPoseFeaturesPerJoint * (k - 1));
  for (int i = 1; i < k; ++i) {
    const Mat3 d = pose.rotations[i] - Mat3::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f[9 * (i - 1) + 3 * r + c] = d(r, c);
  }
  return f;
}

// Skinning transforms A_i mapping rest space to posed space. Each A_i is its
// parent's transform composed with a rotation about the rest joint J_i, which
// keeps the identity pose exact.
inline std::vector<Rigid> skinning_transforms(const std::vector<int>& parents, const PoseParams& pose,
                                              const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& rest_joints) {
  const int k = static_cast<int>(parents.size());
  std::vector<Rigid> A(k);
  for (int i = 0; i < k; ++i) {
    const Mat3& R = pose.rotations[i];
    const Vec3 J = rest_joints.row(i).transpose();
    const Vec3 local_t = J - R * J;
    if (parents[i] < 0) {
      A[i].R = R;
      A[i].t = local_t;
    } else {
      const Rigid& P = A[parents[i]];
      A[i].R = P.R * R;
      A[i].t = P.R * local_t + P.t;
    }
  }
  return A;
}

}  // namespace detail

using RestJoints = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Shaped rest vertices (N x 3).
inline RowMatrix shaped_vertices(const BodyModel& model, const ShapeParams& shape) {
  const Eigen::VectorXd offs = model.shape_blend * shape.beta;
  return model.template_vertices +
         Eigen::Map<const RowMatrix>(offs.data(), model.n_vertices, 3);
}

/// Rest joints W^T (template + shape offsets), k x 3.
inline RestJoints rest_joints(const BodyModel& model, const ShapeParams& shape) {
  return model.joint_weights.transpose() * shaped_vertices(model, shape);
}

/// Evaluates the body function: shape blendshapes, rest joints, pose
/// blendshapes, forward kinematics, linear blend skinning, then X = M W.
inline MeshAndJoints forward(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape) {
  detail::check_inputs(model, pose, shape);
  const int N = model.n_vertices;
  const int k = model.n_joints;

  const RowMatrix v_shaped = shaped_vertices(model, shape);
  const RestJoints J = model.joint_weights.transpose() * v_shaped;

  const Eigen::VectorXd pose_offs = model.pose_blend * detail::pose_features(pose);
  const RowMatrix v_posed = v_shaped + Eigen::Map<const RowMatrix>(pose_offs.data(), N, 3);

  const std::vector<detail::Rigid> A = detail::skinning_transforms(model.parents, pose, J);

  MeshAndJoints out;
  out.mesh.resize(3, N);
  for (int n = 0; n < N; ++n) {
    Mat3 R = Mat3::Zero();
    Vec3 t = Vec3::Zero();
    for (int m = 0; m < k; ++m) {
      const double w = model.skinning_weights(n, m);
      if (w == 0.0) continue;
      R += w * A[m].R;
      t += w * A[m].t;
    }
    out.mesh.col(n) = R * v_posed.row(n).transpose() + t;
  }
  out.joints = out.mesh * model.joint_weights;
  return out;
}

/// Deterministic miniature humanoid with the 24-joint kinematic tree.
/// Coordinates follow the camera convention (x right, y down, z forward);
/// the identity pose stands upright facing a camera at the origin.
inline BodyModel make_mini_model(std::uint64_t seed = 0) {
  static constexpr int kVertsPerJoint = 18;
  static constexpr int kRing = 6;
  static const int parents[kNumJoints] = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                          9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  static const double joints[kNumJoints][3] = {
      {0.0, 0.0, 0.0},      {0.09, 0.08, 0.0},    {-0.09, 0.08, 0.0},  {0.0, -0.11, 0.0},
      {0.10, 0.45, 0.0},    {-0.10, 0.45, 0.0},   {0.0, -0.24, 0.0},   {0.10, 0.85, 0.0},
      {-0.10, 0.85, 0.0},   {0.0, -0.30, 0.0},    {0.11, 0.90, -0.12}, {-0.11, 0.90, -0.12},
      {0.0, -0.52, 0.0},    {0.07, -0.44, 0.0},   {-0.07, -0.44, 0.0}, {0.0, -0.62, 0.0},
      {0.18, -0.45, 0.0},   {-0.18, -0.45, 0.0},  {0.45, -0.45, 0.0},  {-0.45, -0.45, 0.0},
      {0.70, -0.45, 0.0},   {-0.70, -0.45, 0.0},  {0.78, -0.45, 0.0},  {-0.78, -0.45, 0.0}};
  static const double radius[kNumJoints] = {0.12, 0.07, 0.07, 0.11, 0.055, 0.055, 0.11, 0.045,
                                            0.045, 0.11, 0.04, 0.04, 0.05, 0.05, 0.05, 0.09,
                                            0.05, 0.05, 0.04, 0.04, 0.035, 0.035, 0.03, 0.03};

  const int k = kNumJoints;
  const int N = k * kVertsPerJoint;
  Rng rng(seed);

  BodyModel m;
  m.n_vertices = N;
  m.n_joints = k;
  m.parents.assign(parents, parents + k);
  m.template_vertices = RowMatrix::Zero(N, 3);
  m.shape_blend = RowMatrix::Zero(3 * N, kNumBetas);
  m.pose_blend = RowMatrix::Zero(3 * N, kPoseFeaturesPerJoint * (k - 1));
  m.joint_weights = RowMatrix::Zero(N, k);
  m.skinning_weights = RowMatrix::Zero(N, k);

  auto joint_pos = [&](int j) { return Vec3(joints[j][0], joints[j][1], joints[j][2]); };
  std::vector<int> first_child(k, -1);
  for (int j = k - 1; j >= 1; --j) first_child[parents[j]] = j;

  // Per-joint random shape directions for betas 2..9.
  std::vector<Eigen::Matrix<double, 3, kNumBetas>> joint_shape(k);
  for (int j = 0; j < k; ++j)
    for (int l = 0; l < kNumBetas; ++l)
      for (int c = 0; c < 3; ++c) joint_shape[j](c, l) = 0.01 * rng.normal();

  for (int j = 0; j < k; ++j) {
    const Vec3 Jp = joint_pos(j);
    Vec3 dir;
    double bone_len;
    if (first_child[j] >= 0) {
      dir = joint_pos(first_child[j]) - Jp;
      bone_len = dir.norm();
    } else {
      dir = Jp - joint_pos(parents[j]);
      bone_len = 0.08;
    }
    dir.normalize();
    // Orthonormal frame around the bone.
    Vec3 helper = std::abs(dir.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 e1 = dir.cross(helper).normalized();
    const Vec3 e2 = dir.cross(e1);

    for (int s = 0; s < kVertsPerJoint; ++s) {
      const int ring = s / kRing;  // 0: around the joint, 1, 2: along the bone
      const double phi = 2.0 * std::numbers::pi * (s % kRing) / kRing;
      const Vec3 center = Jp + dir * (bone_len * ring / 3.0);
      const Vec3 v = center + radius[j] * (std::cos(phi) * e1 + std::sin(phi) * e2);
      const int n = j * kVertsPerJoint + s;
      m.template_vertices.row(n) = v.transpose();

      if (ring == 0) {
        m.joint_weights(n, j) = 1.0 / kRing;
        if (parents[j] >= 0) {
          m.skinning_weights(n, j) = 0.5;
          m.skinning_weights(n, parents[j]) = 0.5;
        } else {
          m.skinning_weights(n, j) = 1.0;
        }
      } else if (ring == 1 && parents[j] >= 0) {
        m.skinning_weights(n, j) = 0.85;
        m.skinning_weights(n, parents[j]) = 0.15;
      } else {
        m.skinning_weights(n, j) = 1.0;
      }

      // Shape: beta0 scales the body about the pelvis, beta1 widens the
      // limbs, the rest are smooth per-joint offsets plus vertex jitter.
      for (int c = 0; c < 3; ++c) {
        const int row = 3 * n + c;
        m.shape_blend(row, 0) = 0.05 * v[c];
        m.shape_blend(row, 1) = 0.2 * (v[c] - center[c]);
        for (int l = 2; l < kNumBetas; ++l)
          m.shape_blend(row, l) = joint_shape[j](c, l) + 0.002 * rng.normal();
      }

      // Pose correctives driven by the joints this vertex is skinned to.
      for (int q = 1; q < k; ++q) {
        if (m.skinning_weights(n, q) == 0.0) continue;
        for (int e = 0; e < kPoseFeaturesPerJoint; ++e)
          for (int c = 0; c < 3; ++c)
            m.pose_blend(3 * n + c, kPoseFeaturesPerJoint * (q - 1) + e) = 0.003 * rng.normal();
      }
    }
  }
  return m;
}

}  // namespace h4d
