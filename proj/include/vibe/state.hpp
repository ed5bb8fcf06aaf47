#pragma once

#include "vibe/liealg.hpp"

namespace vibe {

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

/// Full navigation state at a keyframe. Velocity is expressed in the base
/// frame; tangent-space ordering is [rotation, position, velocity,
/// accel bias, gyro bias].
struct NavState {
  Rot3 R;                    // world <- base
  Vec3 p{Vec3::Zero()};      // [m], world
  Vec3 v{Vec3::Zero()};      // [m/s], base frame
  Vec3 ba{Vec3::Zero()};     // [m/s^2]
  Vec3 bg{Vec3::Zero()};     // [rad/s]

  Vec3 velocityWorld() const { return R * v; }

  /// Right retraction: R exp(d_phi), additive elsewhere.
  NavState retract(const Vec15& d) const {
    NavState out;
    out.R = R * Rot3::Exp(d.segment<3>(0));
    out.p = p + d.segment<3>(3);
    out.v = v + d.segment<3>(6);
    out.ba = ba + d.segment<3>(9);
    out.bg = bg + d.segment<3>(12);
    return out;
  }

  /// Manifold difference (this boxminus other), inverse of retract at other.
  Vec15 boxminus(const NavState& other) const {
    Vec15 d;
    d.segment<3>(0) = (other.R.inverse() * R).log();
    d.segment<3>(3) = p - other.p;
    d.segment<3>(6) = v - other.v;
    d.segment<3>(9) = ba - other.ba;
    d.segment<3>(12) = bg - other.bg;
    return d;
  }
};

}  // namespace vibe
