#include "vibe/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vibe {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

// xoshiro256++ core seeded via splitmix64; Gaussians from Box-Muller.
Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::integer() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(integer() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Vec3 Rng::gaussian3() { return Vec3(gaussian(), gaussian(), gaussian()); }

Rng subRng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed * 0x9e3779b97f4a7c15ULL + stream;
  return Rng(splitmix64(s));
}

namespace {

// stream tags for independent randomness per purpose
constexpr std::uint64_t kStreamTrajectory = 0x72616a31;
constexpr std::uint64_t kStreamBiasWalk = 0x77616c6b;
constexpr std::uint64_t kStreamImuNoise = 0x696d756e;
constexpr std::uint64_t kStreamLandmarks = 0x6c616e64;
constexpr std::uint64_t kStreamVision = 0x76697331;
constexpr std::uint64_t kStreamIdentity = 0x69647365;

struct Harmonic {
  double amp = 0.0;
  double freq = 0.0;  // [Hz]
  double phase = 0.0;
  double eval(double t) const { return amp * std::sin(2.0 * M_PI * freq * t + phase); }
};

// Analytic motion template: world-frame velocity plus Euler angles.
// Ground truth positions come from exact discrete integration of these,
// so the synthesized IMU stream is consistent with on-manifold Euler
// integration down to float roundoff.
struct MotionTemplate {
  double speed = 0.0;
  Harmonic heading;          // slow yaw of the travel direction
  double heading0 = 0.0;
  std::vector<Harmonic> v_lat;   // lateral, in heading frame
  std::vector<Harmonic> v_vert;  // vertical
  std::vector<Harmonic> yaw_osc;
  std::vector<Harmonic> pitch_osc;
  std::vector<Harmonic> roll_osc;

  Vec3 velocityWorld(double t) const {
    const double psi = heading0 + heading.eval(t);
    const Vec3 fwd(std::cos(psi), std::sin(psi), 0.0);
    const Vec3 lat(-std::sin(psi), std::cos(psi), 0.0);
    double vl = 0.0, vz = 0.0;
    for (const auto& h : v_lat) vl += h.eval(t);
    for (const auto& h : v_vert) vz += h.eval(t);
    return speed * fwd + vl * lat + Vec3(0.0, 0.0, vz);
  }

  Rot3 orientation(double t) const {
    double yaw = heading0 + heading.eval(t);
    for (const auto& h : yaw_osc) yaw += h.eval(t);
    double pitch = 0.0, roll = 0.0;
    for (const auto& h : pitch_osc) pitch += h.eval(t);
    for (const auto& h : roll_osc) roll += h.eval(t);
    return Rot3::Exp(Vec3(0, 0, yaw)) * Rot3::Exp(Vec3(0, pitch, 0)) *
           Rot3::Exp(Vec3(roll, 0, 0));
  }
};

MotionTemplate buildTemplate(const Scenario& sc) {
  Rng rng = subRng(sc.seed, kStreamTrajectory);
  auto ph = [&rng]() { return rng.uniform(0.0, 2.0 * M_PI); };
  const double s = sc.motion_amplitude;

  MotionTemplate m;
  m.speed = sc.motion_speed;
  m.heading0 = rng.uniform(0.0, 2.0 * M_PI);

  switch (sc.profile) {
    case MotionProfile::kHandheldWalk:
      m.heading = {0.5 * s, 1.0 / 50.0, ph()};
      m.v_lat = {{0.12 * s, 1.0, ph()}};
      m.v_vert = {{0.22 * s, 2.0, ph()}};  // 2 Hz gait bob
      m.yaw_osc = {{0.04 * s, 1.0, ph()}};
      m.pitch_osc = {{0.05 * s, 2.0, ph()}};
      m.roll_osc = {{0.05 * s, 1.0, ph()}};
      break;
    case MotionProfile::kQuadrupedTrot:
      m.heading = {0.4 * s, 1.0 / 60.0, ph()};
      m.v_lat = {{0.10 * s, 1.75, ph()}};
      // trot beat plus an impact-like harmonic at twice the stride rate
      m.v_vert = {{0.18 * s, 3.5, ph()}, {0.03 * s, 7.0, ph()}};
      m.yaw_osc = {{0.02 * s, 1.75, ph()}};
      m.pitch_osc = {{0.03 * s, 3.5, ph()}};
      m.roll_osc = {{0.03 * s, 1.75, ph()}};
      break;
    case MotionProfile::kDrone:
      m.heading = {2.2 * s, 1.0 / 21.0, ph()};  // aggressive yaw sweeps
      m.v_lat = {{1.2 * s, 1.0 / 13.0, ph()}, {0.3 * s, 1.0 / 5.0, ph()}};
      m.v_vert = {{0.6 * s, 1.0 / 9.0, ph()}, {0.2 * s, 1.0 / 4.0, ph()}};
      m.yaw_osc = {};
      m.pitch_osc = {{0.12 * s, 1.0 / 7.0, ph()}};
      m.roll_osc = {{0.12 * s, 1.0 / 6.0, ph()}};
      break;
  }
  return m;
}

}  // namespace

MotionProfile motionProfileFromString(const std::string& s) {
  if (s == "handheld_walk") return MotionProfile::kHandheldWalk;
  if (s == "quadruped_trot") return MotionProfile::kQuadrupedTrot;
  if (s == "drone") return MotionProfile::kDrone;
  throw std::invalid_argument("unknown motion profile: " + s);
}

std::string toString(MotionProfile p) {
  switch (p) {
    case MotionProfile::kHandheldWalk: return "handheld_walk";
    case MotionProfile::kQuadrupedTrot: return "quadruped_trot";
    case MotionProfile::kDrone: return "drone";
  }
  return "?";
}

int Scenario::imuPerKeyframe() const {
  const double ratio = imu_rate / keyframe_rate;
  const int stride = static_cast<int>(std::lround(ratio));
  if (stride < 1 || std::abs(ratio - stride) > 1e-9) {
    throw std::invalid_argument(
        "scenario: imu_rate must be an integer multiple of keyframe_rate");
  }
  return stride;
}

bool Scenario::inBlackout(double t) const {
  for (const auto& f : faults) {
    if (f.type == FaultEvent::Type::kBlackout && t >= f.t_start && t <= f.t_end)
      return true;
  }
  return false;
}

std::vector<TrajectorySample> genTrajectory(const Scenario& scenario) {
  if (scenario.duration <= 0.0 || scenario.imu_rate <= 0.0 ||
      scenario.keyframe_rate <= 0.0) {
    throw std::invalid_argument("scenario: duration and rates must be positive");
  }
  scenario.imuPerKeyframe();
  const MotionTemplate m = buildTemplate(scenario);
  const double dt = 1.0 / scenario.imu_rate;
  const int n = static_cast<int>(std::lround(scenario.duration * scenario.imu_rate)) + 1;

  std::vector<TrajectorySample> out(n);
  Vec3 p = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const double t = k * dt;
    TrajectorySample& s = out[k];
    s.t = t;
    const Rot3 R = m.orientation(t);
    const Vec3 v_w = m.velocityWorld(t);
    s.pose = Pose3(R, p);
    s.velocity = R.unrotate(v_w);

    // exact interval quantities: piecewise-constant world acceleration and
    // body rate that reproduce the sampled velocity/orientation sequence
    const Vec3 v_next = m.velocityWorld(t + dt);
    const Rot3 R_next = m.orientation(t + dt);
    s.accel_world = (v_next - v_w) / dt;
    s.angvel_body = so3Log((R.inverse() * R_next).matrix()) / dt;

    p += v_w * dt + 0.5 * s.accel_world * dt * dt;
  }
  return out;
}

std::vector<BiasTruth> genBiasTruth(const Scenario& scenario) {
  const double dt = 1.0 / scenario.imu_rate;
  const int n = static_cast<int>(std::lround(scenario.duration * scenario.imu_rate)) + 1;
  const BiasDynamicsSpec& dyn = scenario.bias_dynamics;

  // device identity: per-axis warm-up directions, sinusoid periods and phases
  Rng id = subRng(scenario.imu_seed, kStreamIdentity);
  double warm_dir[6], sin_amp[6], sin_period[6], sin_phase[6];
  for (int c = 0; c < 6; ++c) {
    const double mag = id.uniform(0.5, 1.0);
    warm_dir[c] = (id.uniform() < 0.5 ? -1.0 : 1.0) * mag;
    sin_amp[c] = id.uniform(0.6, 1.0);
    sin_period[c] = id.uniform(dyn.sin_period_min, dyn.sin_period_max);
    sin_phase[c] = id.uniform(0.0, 2.0 * M_PI);
  }

  Rng walk_rng = subRng(scenario.seed, kStreamBiasWalk);
  const double walk_sigma[6] = {
      scenario.noise.accel_walk_sigma, scenario.noise.accel_walk_sigma,
      scenario.noise.accel_walk_sigma, scenario.noise.gyro_walk_sigma,
      scenario.noise.gyro_walk_sigma,  scenario.noise.gyro_walk_sigma};
  const double warm_amp[6] = {dyn.warmup_amp_accel, dyn.warmup_amp_accel,
                              dyn.warmup_amp_accel, dyn.warmup_amp_gyro,
                              dyn.warmup_amp_gyro,  dyn.warmup_amp_gyro};
  const double sin_amp_base[6] = {dyn.sin_amp_accel, dyn.sin_amp_accel,
                                  dyn.sin_amp_accel, dyn.sin_amp_gyro,
                                  dyn.sin_amp_gyro,  dyn.sin_amp_gyro};

  std::vector<BiasTruth> out(n);
  double walk[6] = {0, 0, 0, 0, 0, 0};
  for (int k = 0; k < n; ++k) {
    const double t = k * dt;
    BiasTruth& b = out[k];
    b.t = t;
    for (int c = 0; c < 6; ++c) {
      const double warm =
          warm_amp[c] * warm_dir[c] *
          (dyn.warmup_tau > 0.0 ? 1.0 - std::exp(-t / dyn.warmup_tau) : 0.0);
      const double osc =
          sin_amp_base[c] * sin_amp[c] *
          std::sin(2.0 * M_PI * t / sin_period[c] + sin_phase[c]);
      const double val = walk[c] + warm + osc;
      if (c < 3) b.accel_bias[c] = val;
      else b.gyro_bias[c - 3] = val;
    }
    // step the walk after emitting so bias(0) has zero walk; increments are
    // clamped at 5 sigma to keep the continuity invariant exact
    for (int c = 0; c < 6; ++c) {
      const double sigma_step = walk_sigma[c] * std::sqrt(dt);
      double step = walk_rng.gaussian() * sigma_step;
      step = std::clamp(step, -5.0 * sigma_step, 5.0 * sigma_step);
      walk[c] += step;
    }
  }
  return out;
}

std::vector<ImuSample> synthImu(const std::vector<TrajectorySample>& traj,
                                const std::vector<BiasTruth>& bias_truth,
                                const NoiseSpec& noise, std::uint64_t seed) {
  if (traj.size() != bias_truth.size()) {
    throw std::invalid_argument("synthImu: trajectory/bias grid size mismatch");
  }
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (std::abs(traj[k].t - bias_truth[k].t) > 1e-9) {
      throw std::invalid_argument("synthImu: trajectory/bias time grid mismatch");
    }
  }
  double rate = 0.0;
  if (traj.size() >= 2) rate = 1.0 / (traj[1].t - traj[0].t);
  const double accel_sigma_d = noise.accel_white_sigma * std::sqrt(rate);
  const double gyro_sigma_d = noise.gyro_white_sigma * std::sqrt(rate);

  Rng rng = subRng(seed, kStreamImuNoise);
  const Vec3 g = gravityVector();
  std::vector<ImuSample> out(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const TrajectorySample& s = traj[k];
    ImuSample& m = out[k];
    m.t = s.t;
    m.accel = s.pose.rotation().unrotate(s.accel_world - g) +
              bias_truth[k].accel_bias + accel_sigma_d * rng.gaussian3();
    m.gyro = s.angvel_body + bias_truth[k].gyro_bias + gyro_sigma_d * rng.gaussian3();
  }
  return out;
}

std::vector<Vec3> genLandmarks(const Scenario& scenario,
                               const std::vector<TrajectorySample>& traj) {
  Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
  for (const auto& s : traj) {
    lo = lo.cwiseMin(s.pose.translation());
    hi = hi.cwiseMax(s.pose.translation());
  }
  const Vec3 margin(8.0, 8.0, 4.0);
  lo -= margin;
  hi += margin;

  Rng rng = subRng(scenario.seed, kStreamLandmarks);
  std::vector<Vec3> out;
  out.reserve(scenario.landmark_count);
  for (int i = 0; i < scenario.landmark_count; ++i) {
    out.emplace_back(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                     rng.uniform(lo.z(), hi.z()));
  }
  return out;
}

std::vector<StereoObservation> synthVision(
    const std::vector<TrajectorySample>& traj, const Scenario& scenario,
    const std::vector<Vec3>& landmarks) {
  const int stride = scenario.imuPerKeyframe();
  const CameraRig& cam = scenario.camera;
  const int num_kf = static_cast<int>((traj.size() - 1) / stride) + 1;

  Rng noise_rng = subRng(scenario.seed, kStreamVision);
  std::vector<StereoObservation> out;

  for (int kf = 0; kf < num_kf; ++kf) {
    const TrajectorySample& s = traj[kf * stride];
    const double t = s.t;
    if (scenario.inBlackout(t)) continue;

    double shift = 0.0;
    for (const auto& f : scenario.faults) {
      if (f.type == FaultEvent::Type::kDistortion && t >= f.t_start && t <= f.t_end)
        shift = f.shift_px;
    }

    const Pose3 world_T_cam = s.pose * cam.base_T_cam;
    std::vector<StereoObservation> visible;
    for (std::size_t id = 0; id < landmarks.size(); ++id) {
      const Vec3 q = world_T_cam.transformTo(landmarks[id]);
      if (q.z() < 0.05) continue;  // behind or grazing the camera
      if (q.norm() > scenario.landmark_max_range) continue;
      const double uL = cam.focal * q.x() / q.z() + cam.cx;
      const double uR = cam.focal * (q.x() - cam.baseline) / q.z() + cam.cx;
      const double v = cam.focal * q.y() / q.z() + cam.cy;
      if (uL < 0.0 || uL >= cam.width || uR < 0.0 || uR >= cam.width) continue;
      if (v < 0.0 || v >= cam.height) continue;
      StereoObservation obs;
      obs.keyframe = kf;
      obs.landmark_id = static_cast<int>(id);
      obs.uL = uL;
      obs.uR = uR;
      obs.v = v;
      visible.push_back(obs);
    }

    // deterministic per-keyframe cap: Fisher-Yates with a per-keyframe stream
    if (static_cast<int>(visible.size()) > scenario.max_obs_per_keyframe) {
      Rng pick = subRng(scenario.seed, kStreamVision ^ (0x9e37ULL + kf * 1315423911ULL));
      for (int i = static_cast<int>(visible.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(pick.integer() % (i + 1));
        std::swap(visible[i], visible[j]);
      }
      visible.resize(scenario.max_obs_per_keyframe);
      std::sort(visible.begin(), visible.end(),
                [](const StereoObservation& a, const StereoObservation& b) {
                  return a.landmark_id < b.landmark_id;
                });
    }

    for (auto& obs : visible) {
      obs.uL += scenario.noise.pixel_sigma * noise_rng.gaussian() - shift;
      obs.uR += scenario.noise.pixel_sigma * noise_rng.gaussian() - shift;
      obs.v += scenario.noise.pixel_sigma * noise_rng.gaussian();
      if (obs.uR > obs.uL - 0.05) obs.uR = obs.uL - 0.05;  // keep disparity positive
      out.push_back(obs);
    }
  }
  return out;
}

SimData simulate(const Scenario& scenario) {
  SimData data;
  data.scenario = scenario;
  data.traj = genTrajectory(scenario);
  data.bias_truth = genBiasTruth(scenario);
  data.imu = synthImu(data.traj, data.bias_truth, scenario.noise, scenario.seed);
  data.landmarks = genLandmarks(scenario, data.traj);
  data.obs = synthVision(data.traj, scenario, data.landmarks);
  data.kf_stride = scenario.imuPerKeyframe();
  data.num_keyframes = static_cast<int>((data.traj.size() - 1) / data.kf_stride) + 1;
  return data;
}

// ---- config & CSV --------------------------------------------------------

using nlohmann::json;

Scenario loadScenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  json j;
  in >> j;

  Scenario sc;
  sc.name = j.value("name", sc.name);
  sc.profile = motionProfileFromString(j.value("profile", std::string("handheld_walk")));
  sc.duration = j.value("duration", sc.duration);
  sc.imu_rate = j.value("imu_rate", sc.imu_rate);
  sc.keyframe_rate = j.value("keyframe_rate", sc.keyframe_rate);
  sc.seed = j.value("seed", sc.seed);
  sc.imu_seed = j.value("imu_seed", sc.imu_seed);
  if (j.contains("motion")) {
    sc.motion_speed = j["motion"].value("speed", sc.motion_speed);
    sc.motion_amplitude = j["motion"].value("amplitude", sc.motion_amplitude);
  }
  if (j.contains("landmarks")) {
    sc.landmark_count = j["landmarks"].value("count", sc.landmark_count);
    sc.landmark_max_range = j["landmarks"].value("max_range", sc.landmark_max_range);
  }
  sc.max_obs_per_keyframe = j.value("max_obs_per_keyframe", sc.max_obs_per_keyframe);
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    sc.noise.accel_white_sigma = n.value("accel_white_sigma", sc.noise.accel_white_sigma);
    sc.noise.gyro_white_sigma = n.value("gyro_white_sigma", sc.noise.gyro_white_sigma);
    sc.noise.accel_walk_sigma = n.value("accel_walk_sigma", sc.noise.accel_walk_sigma);
    sc.noise.gyro_walk_sigma = n.value("gyro_walk_sigma", sc.noise.gyro_walk_sigma);
    sc.noise.pixel_sigma = n.value("pixel_sigma", sc.noise.pixel_sigma);
  }
  if (j.contains("bias_dynamics")) {
    const auto& b = j["bias_dynamics"];
    sc.bias_dynamics.warmup_amp_accel = b.value("warmup_amp_accel", sc.bias_dynamics.warmup_amp_accel);
    sc.bias_dynamics.warmup_amp_gyro = b.value("warmup_amp_gyro", sc.bias_dynamics.warmup_amp_gyro);
    sc.bias_dynamics.warmup_tau = b.value("warmup_tau", sc.bias_dynamics.warmup_tau);
    sc.bias_dynamics.sin_amp_accel = b.value("sin_amp_accel", sc.bias_dynamics.sin_amp_accel);
    sc.bias_dynamics.sin_amp_gyro = b.value("sin_amp_gyro", sc.bias_dynamics.sin_amp_gyro);
    sc.bias_dynamics.sin_period_min = b.value("sin_period_min", sc.bias_dynamics.sin_period_min);
    sc.bias_dynamics.sin_period_max = b.value("sin_period_max", sc.bias_dynamics.sin_period_max);
  }
  if (j.contains("camera")) {
    const auto& c = j["camera"];
    sc.camera.focal = c.value("focal", sc.camera.focal);
    sc.camera.cx = c.value("cx", sc.camera.cx);
    sc.camera.cy = c.value("cy", sc.camera.cy);
    sc.camera.baseline = c.value("baseline", sc.camera.baseline);
    sc.camera.width = c.value("width", sc.camera.width);
    sc.camera.height = c.value("height", sc.camera.height);
  }
  if (j.contains("faults")) {
    for (const auto& f : j["faults"]) {
      FaultEvent ev;
      const std::string type = f.value("type", std::string("blackout"));
      if (type == "blackout") ev.type = FaultEvent::Type::kBlackout;
      else if (type == "distortion") ev.type = FaultEvent::Type::kDistortion;
      else throw std::invalid_argument("unknown fault type: " + type);
      ev.t_start = f.value("start", 0.0);
      ev.t_end = f.value("end", 0.0);
      ev.shift_px = f.value("shift_px", 10.0);
      sc.faults.push_back(ev);
    }
  }
  sc.imuPerKeyframe();  // validate
  return sc;
}

void saveScenario(const Scenario& sc, const std::string& path) {
  json j;
  j["name"] = sc.name;
  j["profile"] = toString(sc.profile);
  j["duration"] = sc.duration;
  j["imu_rate"] = sc.imu_rate;
  j["keyframe_rate"] = sc.keyframe_rate;
  j["seed"] = sc.seed;
  j["imu_seed"] = sc.imu_seed;
  j["motion"] = {{"speed", sc.motion_speed}, {"amplitude", sc.motion_amplitude}};
  j["landmarks"] = {{"count", sc.landmark_count}, {"max_range", sc.landmark_max_range}};
  j["max_obs_per_keyframe"] = sc.max_obs_per_keyframe;
  j["noise"] = {{"accel_white_sigma", sc.noise.accel_white_sigma},
                {"gyro_white_sigma", sc.noise.gyro_white_sigma},
                {"accel_walk_sigma", sc.noise.accel_walk_sigma},
                {"gyro_walk_sigma", sc.noise.gyro_walk_sigma},
                {"pixel_sigma", sc.noise.pixel_sigma}};
  j["bias_dynamics"] = {{"warmup_amp_accel", sc.bias_dynamics.warmup_amp_accel},
                        {"warmup_amp_gyro", sc.bias_dynamics.warmup_amp_gyro},
                        {"warmup_tau", sc.bias_dynamics.warmup_tau},
                        {"sin_amp_accel", sc.bias_dynamics.sin_amp_accel},
                        {"sin_amp_gyro", sc.bias_dynamics.sin_amp_gyro},
                        {"sin_period_min", sc.bias_dynamics.sin_period_min},
                        {"sin_period_max", sc.bias_dynamics.sin_period_max}};
  j["camera"] = {{"focal", sc.camera.focal},   {"cx", sc.camera.cx},
                 {"cy", sc.camera.cy},         {"baseline", sc.camera.baseline},
                 {"width", sc.camera.width},   {"height", sc.camera.height}};
  j["faults"] = json::array();
  for (const auto& f : sc.faults) {
    j["faults"].push_back(
        {{"type", f.type == FaultEvent::Type::kBlackout ? "blackout" : "distortion"},
         {"start", f.t_start},
         {"end", f.t_end},
         {"shift_px", f.shift_px}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file: " + path);
  out << j.dump(2) << "\n";
}

namespace {
std::ofstream openOut(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.precision(17);
  return out;
}
}  // namespace

void writeImuCsv(const std::vector<ImuSample>& imu, const std::string& path) {
  auto out = openOut(path);
  out << "t,ax,ay,az,gx,gy,gz\n";
  for (const auto& s : imu) {
    out << s.t << ',' << s.accel.x() << ',' << s.accel.y() << ',' << s.accel.z()
        << ',' << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << '\n';
  }
}

void writeGtCsv(const std::vector<TrajectorySample>& traj,
                const std::vector<BiasTruth>& bias, const std::string& path) {
  if (traj.size() != bias.size()) {
    throw std::invalid_argument("writeGtCsv: grid mismatch");
  }
  auto out = openOut(path);
  out << "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& s = traj[k];
    const Eigen::Quaterniond q(s.pose.rotation().matrix());
    const Vec3& p = s.pose.translation();
    out << s.t << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z()
        << ',' << p.x() << ',' << p.y() << ',' << p.z() << ',' << s.velocity.x()
        << ',' << s.velocity.y() << ',' << s.velocity.z() << ','
        << bias[k].accel_bias.x() << ',' << bias[k].accel_bias.y() << ','
        << bias[k].accel_bias.z() << ',' << bias[k].gyro_bias.x() << ','
        << bias[k].gyro_bias.y() << ',' << bias[k].gyro_bias.z() << '\n';
  }
}

void writeObsCsv(const std::vector<StereoObservation>& obs, const std::string& path) {
  auto out = openOut(path);
  out << "keyframe,landmark_id,uL,uR,v\n";
  for (const auto& o : obs) {
    out << o.keyframe << ',' << o.landmark_id << ',' << o.uL << ',' << o.uR
        << ',' << o.v << '\n';
  }
}

namespace {
std::vector<double> parseCsvLine(const std::string& line) {
  std::vector<double> vals;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  return vals;
}
}  // namespace

std::vector<ImuSample> readImuCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open IMU CSV: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<ImuSample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto v = parseCsvLine(line);
    if (v.size() != 7) throw std::runtime_error("bad IMU CSV row in " + path);
    ImuSample s;
    s.t = v[0];
    s.accel = Vec3(v[1], v[2], v[3]);
    s.gyro = Vec3(v[4], v[5], v[6]);
    out.push_back(s);
  }
  return out;
}

std::vector<GtRecord> readGtCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ground-truth CSV: " + path);
  std::string line;
  std::getline(in, line);
  std::vector<GtRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto v = parseCsvLine(line);
    if (v.size() != 17) throw std::runtime_error("bad ground-truth CSV row in " + path);
    GtRecord r;
    r.t = v[0];
    Eigen::Quaterniond q(v[1], v[2], v[3], v[4]);
    q.normalize();
    r.pose = Pose3(Rot3(q.toRotationMatrix()), Vec3(v[5], v[6], v[7]));
    r.velocity = Vec3(v[8], v[9], v[10]);
    r.accel_bias = Vec3(v[11], v[12], v[13]);
    r.gyro_bias = Vec3(v[14], v[15], v[16]);
    out.push_back(r);
  }
  return out;
}

}  // namespace vibe
