#pragma once

#include <string>
#include <vector>

#include "vibe/estimator.hpp"
#include "vibe/liealg.hpp"

namespace vibe {

struct TimedPose {
  double t = 0.0;
  Pose3 pose;
};

/// Relative pose error over fixed path-length segments. A segment starts at
/// every keyframe and ends at the first pose at least `distance` meters
/// ahead along the ground-truth path.
struct RpeReport {
  double distance = 0.0;
  std::vector<double> start_times;
  std::vector<double> trans_err;     // [m]
  std::vector<double> rot_err_deg;   // [deg]
  double trans_mean = 0.0, trans_median = 0.0, trans_rmse = 0.0;
  double rot_mean = 0.0, rot_median = 0.0, rot_rmse = 0.0;
};

/// Nearest-neighbour time association within max_dt; returns index pairs.
std::vector<std::pair<int, int>> associate(const std::vector<TimedPose>& est,
                                           const std::vector<TimedPose>& gt,
                                           double max_dt);

RpeReport rpe(const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
              double distance, double max_dt = 0.1);

/// Positional RMSE after rigid (no-scale) Umeyama alignment.
/// Throws on fewer than 3 poses or a collinear ground-truth point set.
double ate(const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
           double max_dt = 0.1);

double pathLength(const std::vector<TimedPose>& gt);

std::vector<TimedPose> toTimedPoses(const std::vector<KeyframeEstimate>& traj);

}  // namespace vibe
