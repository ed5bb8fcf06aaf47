#include "vibe/factors.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace vibe {

StereoResidualResult stereoResidual(const Pose3& pose, const Vec3& landmark,
                                    const StereoObservation& obs,
                                    const CameraRig& rig) {
  const Pose3 world_T_cam = pose * rig.base_T_cam;
  const Vec3 q = world_T_cam.transformTo(landmark);
  if (q.z() < 0.01) {
    throw CheiralityError("stereoResidual: landmark behind camera (depth " +
                          std::to_string(q.z()) + " m)");
  }
  const double f = rig.focal;
  const double iz = 1.0 / q.z();

  StereoResidualResult out;
  out.r[0] = f * q.x() * iz + rig.cx - obs.uL;
  out.r[1] = f * (q.x() - rig.baseline) * iz + rig.cx - obs.uR;
  out.r[2] = f * q.y() * iz + rig.cy - obs.v;

  Eigen::Matrix<double, 3, 3> proj;  // d(uL,uR,v)/dq
  proj << f * iz, 0.0, -f * q.x() * iz * iz,
          f * iz, 0.0, -f * (q.x() - rig.baseline) * iz * iz,
          0.0, f * iz, -f * q.y() * iz * iz;

  const Mat3 Rbc_T = rig.base_T_cam.rotation().matrix().transpose();
  const Mat3 Rwc_T = world_T_cam.rotation().matrix().transpose();
  const Vec3 u = pose.rotation().unrotate(landmark - pose.translation());

  out.J_pose.leftCols<3>() = proj * (Rbc_T * skew(u));
  out.J_pose.rightCols<3>() = proj * (-Rwc_T);
  out.J_landmark = proj * Rwc_T;
  return out;
}

double dcsScale(double residual_sq, double phi) {
  if (phi <= 0.0) throw std::invalid_argument("dcsScale: phi must be positive");
  if (residual_sq < 0.0) throw std::invalid_argument("dcsScale: negative residual_sq");
  return std::min(1.0, 2.0 * phi / (phi + residual_sq));
}

DeepBiasResidualResult deepBiasResidual(const Vec3& ba, const Vec3& bg,
                                        const BiasEstimate& estimate) {
  DeepBiasResidualResult out;
  out.r_ba = ba - estimate.accel_bias_hat;
  out.r_bg = bg - estimate.gyro_bias_hat;
  return out;
}

Eigen::MatrixXd sqrtInformation(const Eigen::MatrixXd& cov, double eig_floor) {
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const double max_eig = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double floor = std::max(eig_floor, max_eig * 1e-14);
  Eigen::VectorXd inv_sqrt(eig.eigenvalues().size());
  for (long i = 0; i < inv_sqrt.size(); ++i) {
    if (eig.eigenvalues()(i) < -1e-9 * std::max(1.0, max_eig)) {
      throw std::invalid_argument("sqrtInformation: covariance is not PSD");
    }
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(eig.eigenvalues()(i), floor));
  }
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

PriorResidualResult priorResidual(const NavState& state, const NavState& prior_mean,
                                  const Mat15& prior_cov) {
  const Mat15 W = sqrtInformation(prior_cov);
  const Vec15 raw = state.boxminus(prior_mean);
  Mat15 J = Mat15::Identity();
  J.block<3, 3>(0, 0) = so3RightJacobianInverse(raw.segment<3>(0));
  PriorResidualResult out;
  out.r = W * raw;
  out.J = W * J;
  return out;
}

Vec3 triangulate(const Pose3& pose, const StereoObservation& obs,
                 const CameraRig& rig) {
  const double disparity = obs.uL - obs.uR;
  if (disparity <= 1e-3) {
    throw std::invalid_argument("triangulate: non-positive disparity");
  }
  const double z = rig.focal * rig.baseline / disparity;
  const double x = (obs.uL - rig.cx) * z / rig.focal;
  const double y = (obs.v - rig.cy) * z / rig.focal;
  return (pose * rig.base_T_cam) * Vec3(x, y, z);
}

}  // namespace vibe
