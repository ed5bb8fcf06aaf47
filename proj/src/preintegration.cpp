#include "vibe/preintegration.hpp"

#include <cmath>
#include <stdexcept>

namespace vibe {

ImuPreintegrator::ImuPreintegrator(const Vec3& ba_lin, const Vec3& bg_lin,
                                   const NoiseSpec& noise) {
  delta_.ba_lin = ba_lin;
  delta_.bg_lin = bg_lin;
  accel_var_ct_ = noise.accel_white_sigma * noise.accel_white_sigma;
  gyro_var_ct_ = noise.gyro_white_sigma * noise.gyro_white_sigma;
  accel_walk_var_ = noise.accel_walk_sigma * noise.accel_walk_sigma;
  gyro_walk_var_ = noise.gyro_walk_sigma * noise.gyro_walk_sigma;
}

void ImuPreintegrator::add(const Vec3& accel, const Vec3& gyro, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("ImuPreintegrator: dt must be positive");
  const Vec3 w = (gyro - delta_.bg_lin) * dt;
  const Vec3 a = accel - delta_.ba_lin;
  const Mat3 dRk = so3Exp(w);
  const Mat3 Jr = so3RightJacobian(w);
  const Mat3 R = delta_.dR.matrix();
  const Mat3 Ra_hat = R * skew(a);
  const double dt2 = dt * dt;

  // covariance, error order [rotation, velocity, position]
  Mat9 A = Mat9::Identity();
  A.block<3, 3>(0, 0) = dRk.transpose();
  A.block<3, 3>(3, 0) = -Ra_hat * dt;
  A.block<3, 3>(6, 0) = -0.5 * Ra_hat * dt2;
  A.block<3, 3>(6, 3) = Mat3::Identity() * dt;

  Eigen::Matrix<double, 9, 6> B = Eigen::Matrix<double, 9, 6>::Zero();
  B.block<3, 3>(0, 0) = Jr * dt;
  B.block<3, 3>(3, 3) = R * dt;
  B.block<3, 3>(6, 3) = 0.5 * R * dt2;

  Eigen::Matrix<double, 6, 6> Q = Eigen::Matrix<double, 6, 6>::Zero();
  Q.topLeftCorner<3, 3>() = (gyro_var_ct_ / dt) * Mat3::Identity();
  Q.bottomRightCorner<3, 3>() = (accel_var_ct_ / dt) * Mat3::Identity();

  Mat9 cov9 = delta_.cov.topLeftCorner<9, 9>();
  cov9 = A * cov9 * A.transpose() + B * Q * B.transpose();
  delta_.cov.topLeftCorner<9, 9>() = 0.5 * (cov9 + cov9.transpose());

  // bias Jacobians; position uses the pre-update velocity terms
  delta_.dp_dba += delta_.dv_dba * dt - 0.5 * R * dt2;
  delta_.dp_dbg += delta_.dv_dbg * dt - 0.5 * Ra_hat * delta_.dR_dbg * dt2;
  delta_.dv_dba += -R * dt;
  delta_.dv_dbg += -Ra_hat * delta_.dR_dbg * dt;
  delta_.dR_dbg = dRk.transpose() * delta_.dR_dbg - Jr * dt;

  // means, position before velocity before rotation
  delta_.dp += delta_.dv * dt + 0.5 * R * a * dt2;
  delta_.dv += R * a * dt;
  delta_.dR = delta_.dR * Rot3(dRk);

  delta_.dt_total += dt;
  delta_.cov.block<3, 3>(9, 9) =
      accel_walk_var_ * delta_.dt_total * Mat3::Identity();
  delta_.cov.block<3, 3>(12, 12) =
      gyro_walk_var_ * delta_.dt_total * Mat3::Identity();
}

PreintegratedDelta integrate(const std::vector<ImuSample>& samples,
                             const Vec3& ba_lin, const Vec3& bg_lin,
                             const NoiseSpec& noise, double t_end) {
  if (samples.empty()) {
    throw std::invalid_argument("integrate: empty sample list");
  }
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (samples[k].t <= samples[k - 1].t) {
      throw std::invalid_argument("integrate: non-monotone timestamps");
    }
  }
  if (t_end <= samples.back().t) {
    throw std::invalid_argument("integrate: t_end must exceed the last sample time");
  }
  ImuPreintegrator integrator(ba_lin, bg_lin, noise);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double t_next = k + 1 < samples.size() ? samples[k + 1].t : t_end;
    integrator.add(samples[k].accel, samples[k].gyro, t_next - samples[k].t);
  }
  return integrator.delta();
}

BiasCorrectedDelta biasCorrect(const PreintegratedDelta& delta,
                               const Vec3& ba_new, const Vec3& bg_new) {
  const Vec3 dba = ba_new - delta.ba_lin;
  const Vec3 dbg = bg_new - delta.bg_lin;
  BiasCorrectedDelta out;
  out.large_delta = dba.norm() > 0.1 || dbg.norm() > 0.1;
  out.dR = delta.dR * Rot3::Exp(delta.dR_dbg * dbg);
  out.dv = delta.dv + delta.dv_dba * dba + delta.dv_dbg * dbg;
  out.dp = delta.dp + delta.dp_dba * dba + delta.dp_dbg * dbg;
  return out;
}

NavState predict(const NavState& state_i, const PreintegratedDelta& delta,
                 const Vec3& gravity) {
  const auto corr = biasCorrect(delta, state_i.ba, state_i.bg);
  const double T = delta.dt_total;
  const Vec3 v_i_world = state_i.velocityWorld();

  NavState out;
  out.R = state_i.R * corr.dR;
  const Vec3 v_j_world = v_i_world + gravity * T + state_i.R * corr.dv;
  out.p = state_i.p + v_i_world * T + 0.5 * gravity * T * T + state_i.R * corr.dp;
  out.v = out.R.unrotate(v_j_world);
  out.ba = state_i.ba;
  out.bg = state_i.bg;
  return out;
}

PreintegratedDelta composeDelta(const PreintegratedDelta& a,
                                const PreintegratedDelta& b) {
  if ((a.ba_lin - b.ba_lin).norm() > 1e-12 || (a.bg_lin - b.bg_lin).norm() > 1e-12) {
    throw std::invalid_argument("composeDelta: linearization biases differ");
  }
  PreintegratedDelta out;
  out.ba_lin = a.ba_lin;
  out.bg_lin = a.bg_lin;
  out.dt_total = a.dt_total + b.dt_total;
  out.dR = a.dR * b.dR;
  out.dv = a.dv + a.dR * b.dv;
  out.dp = a.dp + a.dv * b.dt_total + a.dR * b.dp;
  // covariance and bias Jacobians are not composed here; callers needing
  // them integrate the full span instead
  return out;
}

ImuResidual imuResidual(const PreintegratedDelta& delta, const NavState& state_i,
                        const NavState& state_j, const Vec3& gravity) {
  const double T = delta.dt_total;
  const Vec3 dbg = state_i.bg - delta.bg_lin;
  const auto corr = biasCorrect(delta, state_i.ba, state_i.bg);

  const Mat3 Ri = state_i.R.matrix();
  const Mat3 Rj = state_j.R.matrix();
  const Mat3 RiT_Rj = Ri.transpose() * Rj;

  const Mat3 E = corr.dR.matrix().transpose() * RiT_Rj;
  const Vec3 r_R = so3Log(E);
  const Mat3 Jr_inv = so3RightJacobianInverse(r_R);

  const Vec3 RiT_g = Ri.transpose() * (gravity * T);
  const Vec3 RiT_Rj_vj = RiT_Rj * state_j.v;
  const Vec3 r_v = RiT_Rj_vj - state_i.v - RiT_g - corr.dv;

  const Vec3 p_term = Ri.transpose() * (state_j.p - state_i.p - 0.5 * gravity * T * T);
  const Vec3 r_p = p_term - state_i.v * T - corr.dp;

  ImuResidual out;
  out.r.segment<3>(0) = r_R;
  out.r.segment<3>(3) = r_v;
  out.r.segment<3>(6) = r_p;
  out.r.segment<3>(9) = state_j.ba - state_i.ba;
  out.r.segment<3>(12) = state_j.bg - state_i.bg;

  Mat15& Ji = out.J_i;
  Mat15& Jj = out.J_j;
  Ji.setZero();
  Jj.setZero();

  // rotation rows
  Ji.block<3, 3>(0, 0) = -Jr_inv * RiT_Rj.transpose();
  const Mat3 Jr_corr = so3RightJacobian(delta.dR_dbg * dbg);
  Ji.block<3, 3>(0, 12) = -Jr_inv * E.transpose() * Jr_corr * delta.dR_dbg;
  Jj.block<3, 3>(0, 0) = Jr_inv;

  // velocity rows
  Ji.block<3, 3>(3, 0) = skew(RiT_Rj_vj - RiT_g);
  Ji.block<3, 3>(3, 6) = -Mat3::Identity();
  Ji.block<3, 3>(3, 9) = -delta.dv_dba;
  Ji.block<3, 3>(3, 12) = -delta.dv_dbg;
  Jj.block<3, 3>(3, 0) = -RiT_Rj * skew(state_j.v);
  Jj.block<3, 3>(3, 6) = RiT_Rj;

  // position rows
  Ji.block<3, 3>(6, 0) = skew(p_term);
  Ji.block<3, 3>(6, 3) = -Ri.transpose();
  Ji.block<3, 3>(6, 6) = -Mat3::Identity() * T;
  Ji.block<3, 3>(6, 9) = -delta.dp_dba;
  Ji.block<3, 3>(6, 12) = -delta.dp_dbg;
  Jj.block<3, 3>(6, 3) = Ri.transpose();

  // bias rows
  Ji.block<3, 3>(9, 9) = -Mat3::Identity();
  Ji.block<3, 3>(12, 12) = -Mat3::Identity();
  Jj.block<3, 3>(9, 9) = Mat3::Identity();
  Jj.block<3, 3>(12, 12) = Mat3::Identity();

  return out;
}

}  // namespace vibe
