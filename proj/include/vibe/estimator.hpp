#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vibe/factors.hpp"
#include "vibe/preintegration.hpp"
#include "vibe/state.hpp"

namespace vibe {

class Window;

/// Read-only view of the variables a factor linearizes against.
struct GraphValues {
  const std::map<int, NavState>* states;
  const std::map<int, Vec3>* landmarks;
  const NavState& state(int kf) const { return states->at(kf); }
  const Vec3& landmark(int id) const { return landmarks->at(id); }
};

/// Polymorphic residual term of the window cost. Linearization is whitened:
/// the optimizer minimizes sum ||r + J dx||^2 directly.
class Factor {
 public:
  virtual ~Factor() = default;
  virtual const char* type() const = 0;
  virtual int dim() const = 0;
  virtual bool robust() const { return false; }
  virtual const std::vector<int>& stateKeys() const = 0;
  virtual const std::vector<int>& landmarkKeys() const = 0;

  /// Whitened residual and Jacobian blocks (one per state key, then one per
  /// landmark key). Returns false to drop the factor for this iteration
  /// (e.g. cheirality failure).
  virtual bool linearize(const GraphValues& v, Eigen::VectorXd& r,
                         std::vector<Eigen::MatrixXd>& J_states,
                         std::vector<Eigen::MatrixXd>& J_landmarks) const = 0;

  /// Whitened residual only (cost evaluation).
  virtual bool residual(const GraphValues& v, Eigen::VectorXd& r) const = 0;
};

class PriorFactor : public Factor {
 public:
  PriorFactor(int kf, const NavState& mean, const Mat15& cov);
  const char* type() const override { return "prior"; }
  int dim() const override { return 15; }
  const std::vector<int>& stateKeys() const override { return keys_; }
  const std::vector<int>& landmarkKeys() const override { return no_landmarks_; }
  bool linearize(const GraphValues& v, Eigen::VectorXd& r,
                 std::vector<Eigen::MatrixXd>& J_states,
                 std::vector<Eigen::MatrixXd>& J_landmarks) const override;
  bool residual(const GraphValues& v, Eigen::VectorXd& r) const override;

  const NavState& mean() const { return mean_; }
  const Mat15& cov() const { return cov_; }

 private:
  std::vector<int> keys_;
  std::vector<int> no_landmarks_;
  NavState mean_;
  Mat15 cov_;
  Mat15 sqrt_info_;
};

class ImuFactor : public Factor {
 public:
  /// walk_cov_* are the discrete bias random-walk covariances over the
  /// factor's interval (the estimator's Sigma^bad / Sigma^bgd).
  ImuFactor(int kf_i, int kf_j, PreintegratedDelta delta, const Vec3& gravity,
            double walk_cov_accel, double walk_cov_gyro);
  const char* type() const override { return "imu"; }
  int dim() const override { return 15; }
  const std::vector<int>& stateKeys() const override { return keys_; }
  const std::vector<int>& landmarkKeys() const override { return no_landmarks_; }
  bool linearize(const GraphValues& v, Eigen::VectorXd& r,
                 std::vector<Eigen::MatrixXd>& J_states,
                 std::vector<Eigen::MatrixXd>& J_landmarks) const override;
  bool residual(const GraphValues& v, Eigen::VectorXd& r) const override;

  const PreintegratedDelta& delta() const { return delta_; }

 private:
  std::vector<int> keys_;
  std::vector<int> no_landmarks_;
  PreintegratedDelta delta_;
  Vec3 gravity_;
  Mat15 sqrt_info_;
};

class StereoFactor : public Factor {
 public:
  StereoFactor(int kf, int landmark_id, const StereoObservation& obs,
               const CameraRig* rig, double pixel_sigma);
  const char* type() const override { return "stereo"; }
  int dim() const override { return 3; }
  bool robust() const override { return true; }
  const std::vector<int>& stateKeys() const override { return keys_; }
  const std::vector<int>& landmarkKeys() const override { return lm_keys_; }
  bool linearize(const GraphValues& v, Eigen::VectorXd& r,
                 std::vector<Eigen::MatrixXd>& J_states,
                 std::vector<Eigen::MatrixXd>& J_landmarks) const override;
  bool residual(const GraphValues& v, Eigen::VectorXd& r) const override;

 private:
  std::vector<int> keys_;
  std::vector<int> lm_keys_;
  StereoObservation obs_;
  const CameraRig* rig_;
  double inv_sigma_;
};

class DeepBiasFactor : public Factor {
 public:
  DeepBiasFactor(int kf, const BiasEstimate& estimate, double cov_accel,
                 double cov_gyro);
  const char* type() const override { return "deep_bias"; }
  int dim() const override { return 6; }
  const std::vector<int>& stateKeys() const override { return keys_; }
  const std::vector<int>& landmarkKeys() const override { return no_landmarks_; }
  bool linearize(const GraphValues& v, Eigen::VectorXd& r,
                 std::vector<Eigen::MatrixXd>& J_states,
                 std::vector<Eigen::MatrixXd>& J_landmarks) const override;
  bool residual(const GraphValues& v, Eigen::VectorXd& r) const override;

  const BiasEstimate& estimate() const { return estimate_; }

 private:
  std::vector<int> keys_;
  std::vector<int> no_landmarks_;
  BiasEstimate estimate_;
  double inv_sigma_a_;
  double inv_sigma_g_;
};

struct SolverSettings {
  int max_iterations = 50;
  double lambda_init = 1e-4;
  double lambda_max = 1e8;
  double step_tol = 1e-8;   // ||dx||
  double cost_tol = 1e-9;   // accepted cost decrease
  double dcs_phi = 1.0;     // whitened units
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double final_lambda = 0.0;
  bool converged = false;
  std::map<std::string, double> cost_by_type;
};

struct WindowConfig {
  int max_keyframes = 8;
  SolverSettings solver;
  Vec3 gravity = gravityVector();
  double pixel_sigma = 0.25;
  double deep_bias_cov_accel = kDeepBiasCovAccel;
  double deep_bias_cov_gyro = kDeepBiasCovGyro;
};

/// Fixed-lag smoother state: keyframe states, landmarks and the factor list.
class Window {
 public:
  Window(const WindowConfig& config, const CameraRig& rig);

  /// First keyframe: installs the state and its prior.
  void initialize(int kf, double t, const NavState& state, const Mat15& prior_cov);

  /// Subsequent keyframes. The new state is initialized by bias-corrected
  /// IMU propagation. walk_cov_* set the interval's bias random-walk
  /// covariance (inflated to lock biases). New landmarks are triangulated
  /// from their first observation. A supplied bias estimate becomes a
  /// deep-bias unary factor (timestamps must match the keyframe).
  void addKeyframe(int kf, double t, const PreintegratedDelta& delta,
                   const std::vector<StereoObservation>& obs,
                   double walk_cov_accel, double walk_cov_gyro,
                   const std::optional<BiasEstimate>& bias_estimate);

  SolveReport optimize();

  /// Drops the oldest keyframe once the window is over capacity, replacing
  /// it with a Schur-complement Gaussian prior on the oldest survivor.
  void marginalizeOldest();

  /// Latest optimized bias pair (accel, gyro) for the sequence models.
  std::pair<Vec3, Vec3> feedBackBias() const;

  // accessors
  const NavState& state(int kf) const;
  const Vec3& landmark(int id) const;
  bool hasLandmark(int id) const { return landmarks_.count(id) > 0; }
  const std::map<int, NavState>& states() const { return states_; }
  const std::map<int, Vec3>& landmarks() const { return landmarks_; }
  const std::vector<std::unique_ptr<Factor>>& factors() const { return factors_; }
  int newestKeyframe() const;
  double keyframeTime(int kf) const { return times_.at(kf); }
  bool optimizedOnce() const { return optimized_once_; }

 private:
  double evaluateCost(const GraphValues& vals,
                      std::map<std::string, double>* by_type) const;

  WindowConfig config_;
  CameraRig rig_;
  std::map<int, NavState> states_;
  std::map<int, double> times_;
  std::map<int, Vec3> landmarks_;
  std::vector<std::unique_ptr<Factor>> factors_;
  bool optimized_once_ = false;

  friend class WindowTestAccess;
};

/// Estimator output row (external trajectory interface).
struct KeyframeEstimate {
  int kf = 0;
  double t = 0.0;
  NavState state;
};

void writeTrajectoryCsv(const std::vector<KeyframeEstimate>& traj,
                        const std::string& path);

}  // namespace vibe
