#pragma once

// Rotation, plane and oriented-cuboid value types shared by every stage.
// All types are templated on the scalar; the rest of the library uses the
// double-precision aliases at the bottom of this file.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "crisp/error.hpp"

namespace crisp {

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;

/// Unit quaternion with the double cover resolved to w >= 0.
template <typename Scalar>
class UnitQuaternion {
 public:
  using Quaternion = Eigen::Quaternion<Scalar>;

  UnitQuaternion() : q_(Quaternion::Identity()) {}

  /// Normalizes unless already unit within 1e-12, so that reading back a
  /// stored quaternion is bit-exact.
  explicit UnitQuaternion(const Quaternion& q) : q_(q) {
    const Scalar n = q_.norm();
    if (!(n > Scalar(0)) || !std::isfinite(n)) {
      throw Error(ErrorCode::DegenerateInput, "quaternion with zero or non-finite norm");
    }
    if (std::abs(n - Scalar(1)) > Scalar(1e-12)) q_.coeffs() /= n;
    if (q_.w() < Scalar(0)) q_.coeffs() = -q_.coeffs();
  }

  UnitQuaternion(Scalar w, Scalar x, Scalar y, Scalar z)
      : UnitQuaternion(Quaternion(w, x, y, z)) {}

  static UnitQuaternion from_matrix(const Matrix3T<Scalar>& r) {
    return UnitQuaternion(Quaternion(r));
  }
  static UnitQuaternion from_axis_angle(const Vector3T<Scalar>& axis, Scalar angle) {
    return UnitQuaternion(Quaternion(Eigen::AngleAxis<Scalar>(angle, axis.normalized())));
  }

  Scalar w() const { return q_.w(); }
  Scalar x() const { return q_.x(); }
  Scalar y() const { return q_.y(); }
  Scalar z() const { return q_.z(); }

  const Quaternion& quaternion() const { return q_; }
  Matrix3T<Scalar> matrix() const { return q_.toRotationMatrix(); }
  UnitQuaternion inverse() const { return UnitQuaternion(q_.conjugate()); }

  Vector3T<Scalar> rotate(const Vector3T<Scalar>& v) const { return q_ * v; }
  Vector3T<Scalar> inverse_rotate(const Vector3T<Scalar>& v) const { return q_.conjugate() * v; }

  /// Rotation angle in [0, pi].
  Scalar angle() const {
    return Scalar(2) * std::atan2(q_.vec().norm(), std::abs(q_.w()));
  }

  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
    return UnitQuaternion(a.q_ * b.q_);
  }

 private:
  Quaternion q_;
};

/// Relative rotation r with b * r = a, i.e. b^-1 * a.
template <typename Scalar>
UnitQuaternion<Scalar> quat_sub(const UnitQuaternion<Scalar>& a, const UnitQuaternion<Scalar>& b) {
  return UnitQuaternion<Scalar>(b.quaternion().conjugate() * a.quaternion());
}

/// Vector expressed in the frame of `frame` (inverse rotation).
template <typename Scalar>
Vector3T<Scalar> rotate_into(const Vector3T<Scalar>& v, const UnitQuaternion<Scalar>& frame) {
  return frame.inverse_rotate(v);
}

/// Rigid transform x -> R x + t.
template <typename Scalar>
struct RigidTransform {
  UnitQuaternion<Scalar> rotation;
  Vector3T<Scalar> translation = Vector3T<Scalar>::Zero();

  Vector3T<Scalar> apply(const Vector3T<Scalar>& p) const { return rotation.rotate(p) + translation; }
  Vector3T<Scalar> apply_inverse(const Vector3T<Scalar>& p) const {
    return rotation.inverse_rotate(p - translation);
  }
  RigidTransform inverse() const {
    const auto inv = rotation.inverse();
    return {inv, -inv.rotate(translation)};
  }
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
  }
};

/// Offsets at or below this magnitude count as "through the origin" for the
/// sign rule.
inline constexpr double kPlaneOffsetTie = 1e-6;

/// Plane {p : normal . p = offset}, unit normal, canonical sign: offset >= 0,
/// and for offset ~ 0 the lexicographically larger of +/- normal.
template <typename Scalar>
class Plane {
 public:
  using Vector3 = Vector3T<Scalar>;

  Plane() : normal_(Vector3::UnitZ()), offset_(0) {}

  Plane(const Vector3& normal, Scalar offset) {
    const Scalar n = normal.norm();
    if (!(n > Scalar(0)) || !std::isfinite(n) || !std::isfinite(offset)) {
      throw Error(ErrorCode::DegenerateInput, "plane normal must be finite and non-zero");
    }
    normal_ = normal;
    offset_ = offset;
    // Already-unit input is kept as is so canonicalization is idempotent.
    if (std::abs(n - Scalar(1)) > Scalar(1e-12)) {
      normal_ /= n;
      offset_ /= n;
    }
    canonicalize();
  }

  static Plane through(const Vector3& point, const Vector3& normal) {
    const Vector3 n = normal.normalized();
    return Plane(n, n.dot(point));
  }

  const Vector3& normal() const { return normal_; }
  Scalar offset() const { return offset_; }

  Scalar signed_distance(const Vector3& p) const { return normal_.dot(p) - offset_; }
  Vector3 project(const Vector3& p) const { return p - signed_distance(p) * normal_; }

 private:
  void canonicalize() {
    if (offset_ < -Scalar(kPlaneOffsetTie)) {
      flip();
    } else if (std::abs(offset_) <= Scalar(kPlaneOffsetTie)) {
      const Vector3 neg = -normal_;
      if (std::lexicographical_compare(normal_.data(), normal_.data() + 3, neg.data(),
                                       neg.data() + 3)) {
        flip();
      }
    }
  }
  void flip() {
    normal_ = -normal_;
    offset_ = -offset_;
  }

  Vector3 normal_;
  Scalar offset_;
};

template <typename Scalar>
Scalar point_plane_distance(const Vector3T<Scalar>& p, const Plane<Scalar>& plane) {
  return plane.signed_distance(p);
}

/// Unoriented angle between two planes' normals, radians.
template <typename Scalar>
Scalar plane_angle(const Plane<Scalar>& a, const Plane<Scalar>& b) {
  const Scalar c = std::min(Scalar(1), std::abs(a.normal().dot(b.normal())));
  return std::acos(c);
}

/// Offset difference after aligning the normals' orientation.
template <typename Scalar>
Scalar plane_offset_error(const Plane<Scalar>& a, const Plane<Scalar>& b) {
  const Scalar sign = a.normal().dot(b.normal()) < Scalar(0) ? Scalar(-1) : Scalar(1);
  return std::abs(a.offset() - sign * b.offset());
}

enum class Provenance { Fitted, ContactCompleted };

inline constexpr double kMinContactThickness = 0.05;

/// Oriented cuboid. Rotation columns are [x y n]; n is the normal of the
/// observed face, which sits at center - extents.z/2 * n.
template <typename Scalar>
class PlanarPrimitive {
 public:
  using Vector3 = Vector3T<Scalar>;
  using Matrix3 = Matrix3T<Scalar>;

  PlanarPrimitive(const Matrix3& rotation, const Vector3& center, const Vector3& extents,
                  Provenance provenance = Provenance::Fitted)
      : rotation_(rotation), center_(center), extents_(extents), provenance_(provenance) {
    const Scalar orth = (rotation_.transpose() * rotation_ - Matrix3::Identity()).cwiseAbs().maxCoeff();
    if (!(orth <= Scalar(1e-9)) || !(std::abs(rotation_.determinant() - Scalar(1)) <= Scalar(1e-9))) {
      throw Error(ErrorCode::InvalidArgument, "primitive rotation must be a proper rotation");
    }
    if (!(extents_.minCoeff() > Scalar(0)) || !extents_.allFinite() || !center_.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "primitive extents must be positive and finite");
    }
    if (provenance_ == Provenance::ContactCompleted &&
        extents_.z() < Scalar(kMinContactThickness)) {
      throw Error(ErrorCode::InvalidArgument, "contact-completed primitive thinner than 0.05 m");
    }
  }

  const Matrix3& rotation() const { return rotation_; }
  const Vector3& center() const { return center_; }
  const Vector3& extents() const { return extents_; }
  Vector3 half_extents() const { return extents_ / Scalar(2); }
  Provenance provenance() const { return provenance_; }

  Vector3 normal() const { return rotation_.col(2); }
  Vector3 face_center() const { return center_ - extents_.z() / Scalar(2) * normal(); }
  Plane<Scalar> face_plane() const { return Plane<Scalar>::through(face_center(), normal()); }

  Vector3 to_local(const Vector3& p) const { return rotation_.transpose() * (p - center_); }
  Vector3 to_world(const Vector3& local) const { return rotation_ * local + center_; }

  /// Corner i has local sign pattern (bit0 -> x, bit1 -> y, bit2 -> z).
  std::array<Vector3, 8> corners() const {
    std::array<Vector3, 8> out;
    const Vector3 h = half_extents();
    for (int i = 0; i < 8; ++i) {
      const Vector3 local((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
      out[static_cast<std::size_t>(i)] = to_world(local);
    }
    return out;
  }

  Scalar volume() const { return extents_.prod(); }
  Scalar surface_area() const {
    return Scalar(2) * (extents_.x() * extents_.y() + extents_.y() * extents_.z() +
                        extents_.x() * extents_.z());
  }

 private:
  Matrix3 rotation_;
  Vector3 center_;
  Vector3 extents_;
  Provenance provenance_;
};

/// Exact signed distance to the box surface, negative strictly inside.
template <typename Scalar>
Scalar cuboid_signed_distance(const Vector3T<Scalar>& p, const PlanarPrimitive<Scalar>& prim) {
  const Vector3T<Scalar> q = prim.to_local(p).cwiseAbs() - prim.half_extents();
  const Scalar outside = q.cwiseMax(Scalar(0)).norm();
  const Scalar inside = std::min(q.maxCoeff(), Scalar(0));
  return outside + inside;
}

/// Total-least-squares plane: centroid plus the eigenvector of the smallest
/// covariance eigenvalue.
template <typename Scalar, typename PointScalar = Scalar>
Plane<Scalar> fit_plane_lsq(std::span<const Vector3T<PointScalar>> points) {
  if (points.size() < 3) {
    throw Error(ErrorCode::DegenerateInput, "plane fit needs at least 3 points");
  }
  Vector3T<double> centroid = Vector3T<double>::Zero();
  for (const auto& p : points) centroid += p.template cast<double>();
  centroid /= static_cast<double>(points.size());
  Matrix3T<double> cov = Matrix3T<double>::Zero();
  for (const auto& p : points) {
    const Vector3T<double> d = p.template cast<double>() - centroid;
    cov.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Matrix3T<double>> es(cov);
  const auto& ev = es.eigenvalues();
  // Rank of the centered covariance must be at least 2.
  if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) {
    throw Error(ErrorCode::DegenerateInput, "points are collinear or coincident");
  }
  const Vector3T<double> n = es.eigenvectors().col(0);
  return Plane<Scalar>(n.cast<Scalar>(), static_cast<Scalar>(n.dot(centroid)));
}

template <typename Scalar, typename PointScalar = Scalar>
Plane<Scalar> fit_plane_lsq(const std::vector<Vector3T<PointScalar>>& points) {
  return fit_plane_lsq<Scalar, PointScalar>(std::span<const Vector3T<PointScalar>>(points));
}

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;
using UnitQuat = UnitQuaternion<double>;
using SE3 = RigidTransform<double>;
using Plane3 = Plane<double>;
using Primitive = PlanarPrimitive<double>;

}  // namespace crisp
