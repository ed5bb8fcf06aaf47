#pragma once

#include "vibe/liealg.hpp"

namespace vibe {

/// Rectified pinhole stereo rig. The right camera sits at +baseline along
/// the left camera's x axis, so u_R = u_L - focal * baseline / depth.
struct CameraRig {
  double focal = 320.0;   // [px]
  double cx = 320.0;      // [px]
  double cy = 240.0;      // [px]
  double baseline = 0.11; // [m]
  double width = 640.0;   // [px]
  double height = 480.0;  // [px]
  Pose3 base_T_cam;       // base <- camera (optical: z forward, x right, y down)

  CameraRig() {
    Mat3 R;
    // camera x = -base y, camera y = -base z, camera z = +base x
    R << 0, 0, 1,
        -1, 0, 0,
         0, -1, 0;
    base_T_cam = Pose3(Rot3(R), Vec3(0.05, 0.0, 0.0));
  }
};

}  // namespace vibe
