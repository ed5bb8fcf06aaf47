#include "vibe/liealg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace vibe {

namespace {
constexpr double kSmallAngle = 1e-8;
constexpr double kOrthoTol = 1e-9;
}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3Exp(const Vec3& phi) {
  if (!phi.allFinite()) {
    throw std::invalid_argument("so3Exp: non-finite rotation vector");
  }
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  if (theta < kSmallAngle) {
    // second-order series, exact to O(theta^3)
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3Log(const Mat3& R) {
  const double tr = R.trace();
  const double cos_theta = std::max(-1.0, std::min(1.0, 0.5 * (tr - 1.0)));
  const double theta = std::acos(cos_theta);

  if (theta < kSmallAngle) {
    // vee of the antisymmetric part, first order
    return 0.5 * Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  }

  if (theta > M_PI - 1e-6) {
    // Near pi the antisymmetric part vanishes; extract the axis from the
    // dominant diagonal of R + I.
    Mat3 S = R + Mat3::Identity();
    int k;
    S.diagonal().maxCoeff(&k);
    Vec3 axis = S.col(k);
    axis.normalize();
    // fix sign using the antisymmetric remnant when available
    Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (w.dot(axis) < 0.0) axis = -axis;
    return theta * axis;
  }

  const double scale = theta / (2.0 * std::sin(theta));
  return scale * Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
}

Mat3 so3RightJacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double a = (1.0 - std::cos(theta)) / theta2;
  const double b = (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() - a * W + b * W * W;
}

Mat3 so3RightJacobianInverse(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double b =
      1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * W + b * W * W;
}

Rot3 Rot3::RotZ(double yaw) {
  return Rot3::Exp(Vec3(0.0, 0.0, yaw));
}

double Rot3::orthonormalityDefect() const {
  return (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool Rot3::isValid(double tol) const {
  return orthonormalityDefect() <= tol && std::abs(m_.determinant() - 1.0) <= tol;
}

Rot3 Rot3::operator*(const Rot3& other) const {
  Mat3 prod = m_ * other.m_;
  Rot3 out(prod);
  if (out.orthonormalityDefect() > kOrthoTol) {
    // polar decomposition: closest orthonormal matrix in Frobenius norm
    Eigen::JacobiSVD<Mat3> svd(prod, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 fixed = svd.matrixU() * svd.matrixV().transpose();
    if (fixed.determinant() < 0.0) {
      Mat3 D = Mat3::Identity();
      D(2, 2) = -1.0;
      fixed = svd.matrixU() * D * svd.matrixV().transpose();
    }
    out = Rot3(fixed);
  }
  return out;
}

Rot3 shortestArc(const Vec3& a, const Vec3& b) {
  const Vec3 u = a.normalized();
  const Vec3 v = b.normalized();
  const double c = u.dot(v);
  if (c > 1.0 - 1e-14) return Rot3::Identity();
  if (c < -1.0 + 1e-12) {
    // antiparallel: rotate pi about any axis orthogonal to u
    Vec3 ortho = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Vec3 axis = u.cross(ortho).normalized();
    return Rot3::Exp(M_PI * axis);
  }
  const Vec3 axis = u.cross(v);
  const double angle = std::atan2(axis.norm(), c);
  return Rot3::Exp(angle * axis.normalized());
}

}  // namespace vibe
