#pragma once

// SE(3) primitives and the oriented point-pair pose construction.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <json.hpp>

#include "bico/error.hpp"

namespace bico {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rotation in SO(3). Stored as a matrix; constructed only from a unit
/// quaternion or through composition of other rotations, so RᵀR = I and
/// det R = +1 hold to rounding.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// q and -q give the same rotation. q is normalized first.
  static Rotation from_quaternion(const Eigen::Quaterniond& q) {
    return Rotation(q.normalized().toRotationMatrix());
  }

  /// Projects m onto SO(3) through its quaternion. Use for matrices that are
  /// already rotations up to rounding (file input, composed products).
  static Rotation from_matrix(const Mat3& m) { return from_quaternion(Eigen::Quaterniond(m)); }

  /// Trusts the caller: m must already be orthonormal with det +1.
  static Rotation from_orthonormal(const Mat3& m) { return Rotation(m); }

  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    return from_quaternion(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
  }

  const Mat3& matrix() const { return m_; }

  /// Unit quaternion view (w, x, y, z) with w >= 0.
  Eigen::Quaterniond quaternion() const {
    Eigen::Quaterniond q(m_);
    q.normalize();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    return q;
  }

  Rotation inverse() const { return Rotation(m_.transpose()); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Rigid transform x -> R x + t. Poses map model coordinates to camera coordinates.
struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  RigidTransform operator*(const RigidTransform& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
};

struct OrientedPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitX();
};

inline Vec3 apply_point(const RigidTransform& t, const Vec3& p) { return t.rotation * p + t.translation; }

inline Vec3 apply_normal(const RigidTransform& t, const Vec3& n) { return t.rotation * n; }

inline RigidTransform invert(const RigidTransform& t) {
  Rotation rt = t.rotation.inverse();
  return {rt, -(rt * t.translation)};
}

/// Rotation by alpha about +x, right-hand rule.
inline Rotation rot_x(double alpha) {
  double c = std::cos(alpha), s = std::sin(alpha);
  Mat3 m;
  m << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return Rotation::from_orthonormal(m);
}

/// Translates p.position to the origin and turns p.normal onto +x along the
/// shortest arc (axis normal × e_x). For normal = -e_x the arc is not unique
/// and a half turn about +z is used.
inline RigidTransform align_to_x(const OrientedPoint& p) {
  Vec3 n = p.normal.normalized();
  // Half-angle quaternion (1 + c, n × e_x) with c = n·e_x. When n_x < 0,
  // 1 + n_x is rebuilt from the tangential part to avoid cancellation.
  Vec3 axis(0.0, n.z(), -n.y());
  double tangential = n.y() * n.y() + n.z() * n.z();
  double w = n.x() >= 0 ? 1.0 + n.x() : tangential / (1.0 - n.x());
  Eigen::Quaterniond q;
  if (w == 0.0 && tangential == 0.0) {
    q = Eigen::Quaterniond(0.0, 0.0, 0.0, 1.0);
  } else {
    q = Eigen::Quaterniond(w, axis.x(), axis.y(), axis.z());
  }
  Rotation r = Rotation::from_quaternion(q);
  return {r, -(r * p.position)};
}

/// Projections onto the y-z plane shorter than this make alpha undefined.
inline constexpr double kDegenerateProjection = 1e-8;

/// An anchor moved into the canonical frame: position at the origin, normal on +x.
struct AnchorFrame {
  Vec3 position;
  RigidTransform to_x;
};

inline AnchorFrame anchor_frame(const OrientedPoint& p) { return {p.position, align_to_x(p)}; }

/// Pose mapping the src pair onto the dst pair: both anchors are moved to the
/// origin with their normals on +x, then the second points are brought into
/// the same half-plane by a rotation about x. Alpha is measured
/// counterclockwise about +x, from src to dst.
///
/// The result maps the src anchor exactly onto the dst anchor (position and
/// normal). Throws DegeneratePair when either second point lies on its
/// anchor's normal axis.
inline RigidTransform pair_pose(const AnchorFrame& src, const Vec3& src_other,
                                const AnchorFrame& dst, const Vec3& dst_other) {
  Vec3 a = apply_point(src.to_x, src_other);
  Vec3 b = apply_point(dst.to_x, dst_other);
  if (std::hypot(a.y(), a.z()) < kDegenerateProjection || std::hypot(b.y(), b.z()) < kDegenerateProjection)
    throw Error(ErrorCode::DegeneratePair, "second point lies on the anchor normal axis");
  double alpha = std::atan2(a.y() * b.z() - a.z() * b.y(), a.y() * b.y() + a.z() * b.z());
  Mat3 r = dst.to_x.rotation.matrix().transpose() * rot_x(alpha).matrix() * src.to_x.rotation.matrix();
  Rotation rot = Rotation::from_orthonormal(r);
  return {rot, dst.position - rot * src.position};
}

inline RigidTransform pair_pose(const OrientedPoint& src_anchor, const Vec3& src_other,
                                const OrientedPoint& dst_anchor, const Vec3& dst_other) {
  return pair_pose(anchor_frame(src_anchor), src_other, anchor_frame(dst_anchor), dst_other);
}

/// Geodesic distance on SO(3) in radians, in [0, pi].
///
/// Equal to arccos((tr(R1ᵀR2) - 1) / 2); evaluated as atan2(sin, cos) so
/// small angles keep full precision.
inline double geodesic_angle(const Rotation& r1, const Rotation& r2) {
  Mat3 d = r1.matrix().transpose() * r2.matrix();
  double c = 0.5 * (d.trace() - 1.0);
  Vec3 v(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  double s = 0.5 * v.norm();
  return std::clamp(std::atan2(s, c), 0.0, std::numbers::pi);
}

namespace detail {

inline std::array<double, 4> canonical_quaternion(const Rotation& r) {
  Eigen::Quaterniond q(r.matrix());
  q.normalize();
  std::array<double, 4> a{q.w(), q.x(), q.y(), q.z()};
  for (double v : a) {
    if (v > 0) break;
    if (v < 0) {
      for (double& x : a) x = -x;
      break;
    }
  }
  return a;
}

}  // namespace detail

/// Chordal L2 mean: the unit quaternion maximizing Σ (qᵀq_i)², i.e. the
/// principal eigenvector of Σ q_i q_iᵀ. Quaternions are sign-canonicalized and
/// sorted before accumulation, so the result is bit-identical under sign flips
/// and reordering of the input.
inline Rotation rotation_mean(std::span<const Rotation> rotations) {
  if (rotations.empty()) throw Error(ErrorCode::EmptyInput, "rotation_mean of an empty list");
  std::vector<std::array<double, 4>> qs;
  qs.reserve(rotations.size());
  for (const auto& r : rotations) qs.push_back(detail::canonical_quaternion(r));
  std::sort(qs.begin(), qs.end());
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (const auto& a : qs) {
    Eigen::Vector4d q(a[0], a[1], a[2], a[3]);
    acc.noalias() += q * q.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(acc);
  Eigen::Vector4d top = solver.eigenvectors().col(3);
  if (top(0) < 0) top = -top;
  return Rotation::from_quaternion(Eigen::Quaterniond(top(0), top(1), top(2), top(3)));
}

// ---------------------------------------------------------------------------
// Pose JSON: {"rotation": [9 numbers, row-major], "translation": [x, y, z]}

inline nlohmann::json pose_to_json(const RigidTransform& t) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation.matrix()(r, c));
  return {{"rotation", rot}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline RigidTransform pose_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("rotation") || !j.contains("translation"))
    throw Error(ErrorCode::ParseError, "pose object needs \"rotation\" and \"translation\"");
  const auto& rot = j.at("rotation");
  const auto& tr = j.at("translation");
  if (!rot.is_array() || rot.size() != 9 || !tr.is_array() || tr.size() != 3)
    throw Error(ErrorCode::ParseError, "pose needs 9 rotation and 3 translation numbers");
  Mat3 m;
  for (int i = 0; i < 9; ++i) {
    if (!rot[i].is_number()) throw Error(ErrorCode::ParseError, "non-numeric rotation entry");
    m(i / 3, i % 3) = rot[i].get<double>();
  }
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    if (!tr[i].is_number()) throw Error(ErrorCode::ParseError, "non-numeric translation entry");
    t(i) = tr[i].get<double>();
  }
  if (!m.allFinite() || !t.allFinite()) throw Error(ErrorCode::ParseError, "non-finite pose entry");
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || m.determinant() < 0)
    throw Error(ErrorCode::ParseError, "rotation is not orthonormal with det +1");
  return {Rotation::from_matrix(m), t};
}

}  // namespace bico
