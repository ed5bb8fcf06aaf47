#pragma once

#include <vector>

#include "vibe/liealg.hpp"
#include "vibe/simulator.hpp"
#include "vibe/state.hpp"

namespace vibe {

using Mat9 = Eigen::Matrix<double, 9, 9>;

/// Integrated IMU motion between two keyframes, with noise covariance and
/// first-order bias Jacobians. Covariance ordering matches the residual:
/// [rotation, velocity, position, accel bias, gyro bias].
struct PreintegratedDelta {
  Rot3 dR;
  Vec3 dv{Vec3::Zero()};
  Vec3 dp{Vec3::Zero()};
  double dt_total = 0.0;

  Mat15 cov{Mat15::Zero()};  // bias blocks hold the walk covariance over dt_total

  Mat3 dR_dbg{Mat3::Zero()};
  Mat3 dv_dba{Mat3::Zero()};
  Mat3 dv_dbg{Mat3::Zero()};
  Mat3 dp_dba{Mat3::Zero()};
  Mat3 dp_dbg{Mat3::Zero()};

  Vec3 ba_lin{Vec3::Zero()};
  Vec3 bg_lin{Vec3::Zero()};
};

/// Stepwise on-manifold Euler integrator.
class ImuPreintegrator {
 public:
  /// walk sigmas are the continuous random-walk intensities used for the
  /// bias blocks of the 15x15 covariance.
  ImuPreintegrator(const Vec3& ba_lin, const Vec3& bg_lin, const NoiseSpec& noise);

  void add(const Vec3& accel, const Vec3& gyro, double dt);
  const PreintegratedDelta& delta() const { return delta_; }

 private:
  PreintegratedDelta delta_;
  double accel_var_ct_;  // continuous-time white densities, squared
  double gyro_var_ct_;
  double accel_walk_var_;
  double gyro_walk_var_;
};

/// Integrates a sample span; sample k covers [t_k, t_{k+1}), the last one
/// up to t_end. Throws on empty input or non-monotone timestamps.
PreintegratedDelta integrate(const std::vector<ImuSample>& samples,
                             const Vec3& ba_lin, const Vec3& bg_lin,
                             const NoiseSpec& noise, double t_end);

struct BiasCorrectedDelta {
  Rot3 dR;
  Vec3 dv;
  Vec3 dp;
  bool large_delta = false;  // warning: ||new bias - linearization|| > 0.1
};

/// First-order correction of the delta to a new bias estimate.
BiasCorrectedDelta biasCorrect(const PreintegratedDelta& delta,
                               const Vec3& ba_new, const Vec3& bg_new);

/// Propagates a state through the delta (used to initialize new keyframes).
NavState predict(const NavState& state_i, const PreintegratedDelta& delta,
                 const Vec3& gravity);

/// Composition of consecutive deltas (means and duration only).
PreintegratedDelta composeDelta(const PreintegratedDelta& a,
                                const PreintegratedDelta& b);

struct ImuResidual {
  Vec15 r;        // [r_dR, r_dv, r_dp, r_ba, r_bg]
  Mat15 J_i;      // d r / d state_i tangent
  Mat15 J_j;      // d r / d state_j tangent
};

/// Preintegration residual between two states, with analytic Jacobians on
/// the state manifold. Velocities follow the base-frame convention.
ImuResidual imuResidual(const PreintegratedDelta& delta, const NavState& state_i,
                        const NavState& state_j, const Vec3& gravity);

}  // namespace vibe
