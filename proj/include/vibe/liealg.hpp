#pragma once

#include <Eigen/Core>

namespace vibe {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix such that skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

/// Rodrigues exponential map. Uses a second-order series below 1e-8 rad.
/// Throws std::invalid_argument on non-finite input.
Mat3 so3Exp(const Vec3& phi);

/// Principal logarithm, ||result|| <= pi. Handles the angle-pi branch.
Vec3 so3Log(const Mat3& R);

/// Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) * exp(Jr(phi) * d).
Mat3 so3RightJacobian(const Vec3& phi);

/// Inverse of the right Jacobian.
Mat3 so3RightJacobianInverse(const Vec3& phi);

/// Rotation matrix wrapper maintaining orthonormality.
///
/// Compositions re-orthonormalize (polar decomposition) only when the
/// defect ||R^T R - I|| exceeds 1e-9, so long chains stay valid without
/// paying the cost on every product.
class Rot3 {
 public:
  Rot3() : m_(Mat3::Identity()) {}
  explicit Rot3(const Mat3& m) : m_(m) {}

  static Rot3 Identity() { return Rot3(); }
  static Rot3 Exp(const Vec3& phi) { return Rot3(so3Exp(phi)); }
  static Rot3 RotZ(double yaw);

  Vec3 log() const { return so3Log(m_); }
  Rot3 inverse() const { return Rot3(m_.transpose()); }
  const Mat3& matrix() const { return m_; }

  Rot3 operator*(const Rot3& other) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Rotates v by the inverse rotation without forming it.
  Vec3 unrotate(const Vec3& v) const { return m_.transpose() * v; }

  double orthonormalityDefect() const;
  bool isValid(double tol = 1e-9) const;

 private:
  Mat3 m_;
};

/// Rigid transform (rotation then translation), world <- body convention.
class Pose3 {
 public:
  Pose3() = default;
  Pose3(const Rot3& R, const Vec3& t) : R_(R), t_(t) {}

  static Pose3 Identity() { return Pose3(); }

  const Rot3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }

  Pose3 operator*(const Pose3& other) const {
    return Pose3(R_ * other.R_, t_ + R_ * other.t_);
  }
  Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

  Pose3 inverse() const {
    Rot3 Rinv = R_.inverse();
    return Pose3(Rinv, -(Rinv * t_));
  }

  /// Maps a world point into this pose's local frame.
  Vec3 transformTo(const Vec3& p_world) const { return R_.unrotate(p_world - t_); }

 private:
  Rot3 R_;
  Vec3 t_{Vec3::Zero()};
};

/// Shortest-arc rotation taking unit vector a onto unit vector b.
Rot3 shortestArc(const Vec3& a, const Vec3& b);

}  // namespace vibe
