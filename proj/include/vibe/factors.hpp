#pragma once

#include <stdexcept>

#include "vibe/camera.hpp"
#include "vibe/liealg.hpp"
#include "vibe/simulator.hpp"
#include "vibe/state.hpp"

namespace vibe {

/// Fixed unary-factor covariances for the learned bias estimates.
constexpr double kDeepBiasCovAccel = 2.5e-3;  // [(m/s^2)^2]
constexpr double kDeepBiasCovGyro = 2.5e-5;   // [(rad/s)^2]

/// Bias estimate produced by a sequence model (or ground truth, in tests).
struct BiasEstimate {
  double t = 0.0;
  Vec3 accel_bias_hat{Vec3::Zero()};
  Vec3 gyro_bias_hat{Vec3::Zero()};
  enum class Source { kNetwork, kGroundTruth };
  Source source = Source::kNetwork;
};

class CheiralityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StereoResidualResult {
  Vec3 r;  // (uL_pred - uL, uR_pred - uR, v_pred - v) [px]
  Eigen::Matrix<double, 3, 6> J_pose;  // wrt [rotation, position] tangent
  Mat3 J_landmark;
};

/// Rectified stereo reprojection residual with analytic Jacobians.
/// Throws CheiralityError when the landmark depth is below 0.01 m.
StereoResidualResult stereoResidual(const Pose3& pose, const Vec3& landmark,
                                    const StereoObservation& obs,
                                    const CameraRig& rig);

/// Dynamic covariance scaling factor in (0, 1]; the information matrix of
/// the residual gets scaled by the square of this.
double dcsScale(double residual_sq, double phi);

struct DeepBiasResidualResult {
  Vec3 r_ba;  // b_a - b_a_hat
  Vec3 r_bg;  // b_g - b_g_hat
};

DeepBiasResidualResult deepBiasResidual(const Vec3& ba, const Vec3& bg,
                                        const BiasEstimate& estimate);

struct PriorResidualResult {
  Vec15 r;    // whitened manifold difference (state boxminus mean)
  Mat15 J;    // whitened Jacobian wrt state tangent
};

/// Whitened full-state prior. Throws std::invalid_argument when the
/// covariance is not positive semi-definite.
PriorResidualResult priorResidual(const NavState& state, const NavState& prior_mean,
                                  const Mat15& prior_cov);

/// Symmetric inverse square root of a PSD matrix (eigenvalue floor applied).
/// Shared by the prior and IMU factors for whitening.
Eigen::MatrixXd sqrtInformation(const Eigen::MatrixXd& cov, double eig_floor = 1e-16);

/// Closed-form stereo triangulation of one observation into the world frame.
Vec3 triangulate(const Pose3& pose, const StereoObservation& obs, const CameraRig& rig);

}  // namespace vibe
