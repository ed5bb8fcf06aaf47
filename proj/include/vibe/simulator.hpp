#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vibe/camera.hpp"
#include "vibe/liealg.hpp"

namespace vibe {

constexpr double kGravity = 9.80665;  // [m/s^2], world z-up, g vector (0,0,-kGravity)

inline Vec3 gravityVector() { return Vec3(0.0, 0.0, -kGravity); }

/// Deterministic Gaussian/uniform source (Box-Muller over mt19937_64),
/// identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double gaussian();                      // N(0, 1)
  Vec3 gaussian3();
  std::uint64_t integer();

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent stream for a named purpose from a base seed.
Rng subRng(std::uint64_t seed, std::uint64_t stream);

struct TrajectorySample {
  double t = 0.0;            // [s]
  Pose3 pose;                // world <- base
  Vec3 velocity{Vec3::Zero()};     // [m/s], base frame
  Vec3 accel_world{Vec3::Zero()};  // [m/s^2]
  Vec3 angvel_body{Vec3::Zero()};  // [rad/s]
};

struct BiasTruth {
  double t = 0.0;
  Vec3 accel_bias{Vec3::Zero()};  // [m/s^2]
  Vec3 gyro_bias{Vec3::Zero()};   // [rad/s]
};

struct ImuSample {
  double t = 0.0;
  Vec3 accel{Vec3::Zero()};  // [m/s^2]
  Vec3 gyro{Vec3::Zero()};   // [rad/s]
};

struct StereoObservation {
  int keyframe = 0;
  int landmark_id = 0;
  double uL = 0.0, uR = 0.0, v = 0.0;  // [px]
};

struct NoiseSpec {
  double accel_white_sigma = 2.0e-3;  // [m/s^2 / sqrt(Hz)]
  double gyro_white_sigma = 1.7e-4;   // [rad/s / sqrt(Hz)]
  double accel_walk_sigma = 3.5e-5;   // [m/s^2 * sqrt(Hz)], Sigma^bad diag sqrt
  double gyro_walk_sigma = 3.0e-6;    // [rad/s * sqrt(Hz)], Sigma^bgd diag sqrt
  double pixel_sigma = 0.25;          // [px]
};

/// Device-specific nonlinear bias dynamics on top of the random walk:
/// exponential warm-up drift plus a slow sinusoid. Axis directions, phases
/// and periods are fixed by the IMU identity seed, so the learnable signal
/// follows the device, not the motion.
struct BiasDynamicsSpec {
  double warmup_amp_accel = 0.02;   // [m/s^2]
  double warmup_amp_gyro = 2.0e-3;  // [rad/s]
  double warmup_tau = 300.0;        // [s]
  double sin_amp_accel = 5.0e-3;    // [m/s^2]
  double sin_amp_gyro = 2.0e-3;     // [rad/s]
  double sin_period_min = 200.0;    // [s]
  double sin_period_max = 400.0;    // [s]
};

struct FaultEvent {
  enum class Type { kBlackout, kDistortion };
  Type type = Type::kBlackout;
  double t_start = 0.0;
  double t_end = 0.0;
  double shift_px = 10.0;  // distortion only, subtracted from uL and uR
};

enum class MotionProfile { kHandheldWalk, kQuadrupedTrot, kDrone };

MotionProfile motionProfileFromString(const std::string& s);
std::string toString(MotionProfile p);

struct Scenario {
  std::string name = "scenario";
  MotionProfile profile = MotionProfile::kHandheldWalk;
  double duration = 60.0;       // [s]
  double imu_rate = 200.0;      // [Hz]
  double keyframe_rate = 10.0;  // [Hz]
  std::uint64_t seed = 1;       // all run randomness
  std::uint64_t imu_seed = 7;   // IMU identity (bias dynamics constants)
  double motion_speed = 1.2;    // [m/s]
  double motion_amplitude = 1.0;
  int landmark_count = 300;
  double landmark_max_range = 15.0;  // [m]
  int max_obs_per_keyframe = 40;
  NoiseSpec noise;
  BiasDynamicsSpec bias_dynamics;
  std::vector<FaultEvent> faults;
  CameraRig camera;

  int imuPerKeyframe() const;  // validates divisibility
  bool inBlackout(double t) const;
};

std::vector<TrajectorySample> genTrajectory(const Scenario& scenario);
std::vector<BiasTruth> genBiasTruth(const Scenario& scenario);

std::vector<ImuSample> synthImu(const std::vector<TrajectorySample>& traj,
                                const std::vector<BiasTruth>& bias_truth,
                                const NoiseSpec& noise, std::uint64_t seed);

std::vector<Vec3> genLandmarks(const Scenario& scenario,
                               const std::vector<TrajectorySample>& traj);

std::vector<StereoObservation> synthVision(
    const std::vector<TrajectorySample>& traj, const Scenario& scenario,
    const std::vector<Vec3>& landmarks);

/// Everything one estimator run consumes, generated once per scenario so
/// every method sees byte-identical streams.
struct SimData {
  Scenario scenario;
  std::vector<TrajectorySample> traj;
  std::vector<BiasTruth> bias_truth;
  std::vector<ImuSample> imu;
  std::vector<Vec3> landmarks;
  std::vector<StereoObservation> obs;
  int kf_stride = 1;
  int num_keyframes = 0;

  double keyframeTime(int kf) const { return traj[kf * kf_stride].t; }
  const TrajectorySample& keyframeTruth(int kf) const {
    return traj[kf * kf_stride];
  }
  const BiasTruth& keyframeBias(int kf) const {
    return bias_truth[kf * kf_stride];
  }
};

SimData simulate(const Scenario& scenario);

// ---- external interfaces ------------------------------------------------

Scenario loadScenario(const std::string& path);
void saveScenario(const Scenario& scenario, const std::string& path);

void writeImuCsv(const std::vector<ImuSample>& imu, const std::string& path);
void writeGtCsv(const std::vector<TrajectorySample>& traj,
                const std::vector<BiasTruth>& bias, const std::string& path);
void writeObsCsv(const std::vector<StereoObservation>& obs,
                 const std::string& path);

std::vector<ImuSample> readImuCsv(const std::string& path);

struct GtRecord {
  double t;
  Pose3 pose;
  Vec3 velocity;  // base frame
  Vec3 accel_bias;
  Vec3 gyro_bias;
};
std::vector<GtRecord> readGtCsv(const std::string& path);

}  // namespace vibe
