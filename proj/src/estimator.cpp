#include "vibe/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace vibe {

// ---- PriorFactor ----------------------------------------------------------

PriorFactor::PriorFactor(int kf, const NavState& mean, const Mat15& cov)
    : keys_{kf}, mean_(mean), cov_(cov), sqrt_info_(sqrtInformation(cov)) {}

bool PriorFactor::linearize(const GraphValues& v, Eigen::VectorXd& r,
                            std::vector<Eigen::MatrixXd>& J_states,
                            std::vector<Eigen::MatrixXd>& J_landmarks) const {
  const NavState& s = v.state(keys_[0]);
  const Vec15 raw = s.boxminus(mean_);
  Mat15 J = Mat15::Identity();
  J.block<3, 3>(0, 0) = so3RightJacobianInverse(raw.segment<3>(0));
  r = sqrt_info_ * raw;
  J_states.resize(1);
  J_states[0] = sqrt_info_ * J;
  J_landmarks.clear();
  return true;
}

bool PriorFactor::residual(const GraphValues& v, Eigen::VectorXd& r) const {
  r = sqrt_info_ * v.state(keys_[0]).boxminus(mean_);
  return true;
}

// ---- ImuFactor ------------------------------------------------------------

ImuFactor::ImuFactor(int kf_i, int kf_j, PreintegratedDelta delta,
                     const Vec3& gravity, double walk_cov_accel,
                     double walk_cov_gyro)
    : keys_{kf_i, kf_j}, delta_(std::move(delta)), gravity_(gravity) {
  Mat15 cov = delta_.cov;
  cov.block<3, 3>(9, 9) = walk_cov_accel * Mat3::Identity();
  cov.block<3, 3>(12, 12) = walk_cov_gyro * Mat3::Identity();
  sqrt_info_ = sqrtInformation(cov);
}

bool ImuFactor::linearize(const GraphValues& v, Eigen::VectorXd& r,
                          std::vector<Eigen::MatrixXd>& J_states,
                          std::vector<Eigen::MatrixXd>& J_landmarks) const {
  const ImuResidual res =
      imuResidual(delta_, v.state(keys_[0]), v.state(keys_[1]), gravity_);
  r = sqrt_info_ * res.r;
  J_states.resize(2);
  J_states[0] = sqrt_info_ * res.J_i;
  J_states[1] = sqrt_info_ * res.J_j;
  J_landmarks.clear();
  return true;
}

bool ImuFactor::residual(const GraphValues& v, Eigen::VectorXd& r) const {
  const ImuResidual res =
      imuResidual(delta_, v.state(keys_[0]), v.state(keys_[1]), gravity_);
  r = sqrt_info_ * res.r;
  return true;
}

// ---- StereoFactor ---------------------------------------------------------

StereoFactor::StereoFactor(int kf, int landmark_id, const StereoObservation& obs,
                           const CameraRig* rig, double pixel_sigma)
    : keys_{kf},
      lm_keys_{landmark_id},
      obs_(obs),
      rig_(rig),
      inv_sigma_(1.0 / std::max(pixel_sigma, 1e-6)) {}

bool StereoFactor::linearize(const GraphValues& v, Eigen::VectorXd& r,
                             std::vector<Eigen::MatrixXd>& J_states,
                             std::vector<Eigen::MatrixXd>& J_landmarks) const {
  const NavState& s = v.state(keys_[0]);
  const Vec3& lm = v.landmark(lm_keys_[0]);
  StereoResidualResult res;
  try {
    res = stereoResidual(Pose3(s.R, s.p), lm, obs_, *rig_);
  } catch (const CheiralityError&) {
    return false;  // dropped for this iteration
  }
  r = inv_sigma_ * res.r;
  J_states.resize(1);
  J_states[0].setZero(3, 15);
  J_states[0].leftCols<6>() = inv_sigma_ * res.J_pose;
  J_landmarks.resize(1);
  J_landmarks[0] = inv_sigma_ * res.J_landmark;
  return true;
}

bool StereoFactor::residual(const GraphValues& v, Eigen::VectorXd& r) const {
  const NavState& s = v.state(keys_[0]);
  try {
    const auto res = stereoResidual(Pose3(s.R, s.p), v.landmark(lm_keys_[0]),
                                    obs_, *rig_);
    r = inv_sigma_ * res.r;
  } catch (const CheiralityError&) {
    return false;
  }
  return true;
}

// ---- DeepBiasFactor -------------------------------------------------------

DeepBiasFactor::DeepBiasFactor(int kf, const BiasEstimate& estimate,
                               double cov_accel, double cov_gyro)
    : keys_{kf},
      estimate_(estimate),
      inv_sigma_a_(1.0 / std::sqrt(cov_accel)),
      inv_sigma_g_(1.0 / std::sqrt(cov_gyro)) {}

bool DeepBiasFactor::linearize(const GraphValues& v, Eigen::VectorXd& r,
                               std::vector<Eigen::MatrixXd>& J_states,
                               std::vector<Eigen::MatrixXd>& J_landmarks) const {
  const NavState& s = v.state(keys_[0]);
  const auto res = deepBiasResidual(s.ba, s.bg, estimate_);
  r.resize(6);
  r.segment<3>(0) = inv_sigma_a_ * res.r_ba;
  r.segment<3>(3) = inv_sigma_g_ * res.r_bg;
  J_states.resize(1);
  J_states[0].setZero(6, 15);
  J_states[0].block<3, 3>(0, 9) = inv_sigma_a_ * Mat3::Identity();
  J_states[0].block<3, 3>(3, 12) = inv_sigma_g_ * Mat3::Identity();
  J_landmarks.clear();
  return true;
}

bool DeepBiasFactor::residual(const GraphValues& v, Eigen::VectorXd& r) const {
  const NavState& s = v.state(keys_[0]);
  const auto res = deepBiasResidual(s.ba, s.bg, estimate_);
  r.resize(6);
  r.segment<3>(0) = inv_sigma_a_ * res.r_ba;
  r.segment<3>(3) = inv_sigma_g_ * res.r_bg;
  return true;
}

// ---- Window ---------------------------------------------------------------

Window::Window(const WindowConfig& config, const CameraRig& rig)
    : config_(config), rig_(rig) {}

void Window::initialize(int kf, double t, const NavState& state,
                        const Mat15& prior_cov) {
  if (!states_.empty()) {
    throw std::logic_error("Window::initialize called on a non-empty window");
  }
  states_[kf] = state;
  times_[kf] = t;
  factors_.push_back(std::make_unique<PriorFactor>(kf, state, prior_cov));
}

void Window::addKeyframe(int kf, double t, const PreintegratedDelta& delta,
                         const std::vector<StereoObservation>& obs,
                         double walk_cov_accel, double walk_cov_gyro,
                         const std::optional<BiasEstimate>& bias_estimate) {
  if (states_.empty()) {
    throw std::logic_error("Window::addKeyframe: window not initialized");
  }
  const int prev = states_.rbegin()->first;
  if (kf <= prev) {
    throw std::invalid_argument("Window::addKeyframe: keyframe indices must increase");
  }

  const NavState& prev_state = states_.at(prev);
  states_[kf] = predict(prev_state, delta, config_.gravity);
  times_[kf] = t;
  factors_.push_back(std::make_unique<ImuFactor>(prev, kf, delta, config_.gravity,
                                                 walk_cov_accel, walk_cov_gyro));

  const NavState& new_state = states_.at(kf);
  for (const auto& o : obs) {
    if (o.keyframe != kf) {
      throw std::invalid_argument("Window::addKeyframe: observation keyframe mismatch");
    }
    if (!hasLandmark(o.landmark_id)) {
      Vec3 lm;
      try {
        lm = triangulate(Pose3(new_state.R, new_state.p), o, rig_);
      } catch (const std::invalid_argument&) {
        continue;  // degenerate disparity, skip this landmark for now
      }
      landmarks_[o.landmark_id] = lm;
    }
    factors_.push_back(std::make_unique<StereoFactor>(kf, o.landmark_id, o, &rig_,
                                                      config_.pixel_sigma));
  }

  if (bias_estimate) {
    if (std::abs(bias_estimate->t - t) > 1e-6) {
      std::ostringstream os;
      os << "Window::addKeyframe: bias estimate timestamp " << bias_estimate->t
         << " does not match keyframe time " << t;
      throw std::invalid_argument(os.str());
    }
    factors_.push_back(std::make_unique<DeepBiasFactor>(
        kf, *bias_estimate, config_.deep_bias_cov_accel, config_.deep_bias_cov_gyro));
  }
}

const NavState& Window::state(int kf) const { return states_.at(kf); }
const Vec3& Window::landmark(int id) const { return landmarks_.at(id); }

int Window::newestKeyframe() const {
  if (states_.empty()) throw std::logic_error("Window: empty");
  return states_.rbegin()->first;
}

std::pair<Vec3, Vec3> Window::feedBackBias() const {
  if (states_.empty()) throw std::logic_error("feedBackBias: empty window");
  if (!optimized_once_) throw std::logic_error("feedBackBias: window never optimized");
  const NavState& s = states_.rbegin()->second;
  return {s.ba, s.bg};
}

double Window::evaluateCost(const GraphValues& vals,
                            std::map<std::string, double>* by_type) const {
  double total = 0.0;
  Eigen::VectorXd r;
  for (const auto& f : factors_) {
    if (!f->residual(vals, r)) continue;
    double c = r.squaredNorm();
    if (f->robust()) {
      const double s = dcsScale(c, config_.solver.dcs_phi);
      c *= s * s;
    }
    total += c;
    if (by_type) (*by_type)[f->type()] += c;
  }
  return total;
}

SolveReport Window::optimize() {
  if (states_.empty()) throw std::logic_error("Window::optimize: empty window");
  SolveReport report;

  const SolverSettings& set = config_.solver;
  double lambda = set.lambda_init;

  GraphValues cur{&states_, &landmarks_};
  double cost = evaluateCost(cur, nullptr);
  report.initial_cost = cost;
  if (!std::isfinite(cost)) {
    std::map<std::string, double> by_type;
    evaluateCost(cur, &by_type);
    std::ostringstream os;
    os << "Window::optimize: non-finite initial cost; per-type:";
    for (const auto& [k, v] : by_type) os << ' ' << k << '=' << v;
    throw std::runtime_error(os.str());
  }

  // variable ordering: states ascending, then landmarks ascending
  std::vector<int> state_ids;
  for (const auto& [k, s] : states_) state_ids.push_back(k);
  std::map<int, int> state_offset;
  for (std::size_t i = 0; i < state_ids.size(); ++i)
    state_offset[state_ids[i]] = static_cast<int>(i) * 15;
  const int ns = static_cast<int>(state_ids.size()) * 15;

  std::vector<int> lm_ids;
  for (const auto& [k, l] : landmarks_) lm_ids.push_back(k);
  std::map<int, int> lm_offset;
  for (std::size_t i = 0; i < lm_ids.size(); ++i)
    lm_offset[lm_ids[i]] = ns + static_cast<int>(i) * 3;
  const int dim = ns + static_cast<int>(lm_ids.size()) * 3;

  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> Js, Jl;

  for (int iter = 0; iter < set.max_iterations; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);

    for (const auto& f : factors_) {
      if (!f->linearize(cur, r, Js, Jl)) continue;
      if (f->robust()) {
        const double s = dcsScale(r.squaredNorm(), set.dcs_phi);
        if (s < 1.0) {
          r *= s;
          for (auto& J : Js) J *= s;
          for (auto& J : Jl) J *= s;
        }
      }
      const auto& skeys = f->stateKeys();
      const auto& lkeys = f->landmarkKeys();
      std::vector<int> offs;
      std::vector<const Eigen::MatrixXd*> blocks;
      for (std::size_t i = 0; i < skeys.size(); ++i) {
        offs.push_back(state_offset.at(skeys[i]));
        blocks.push_back(&Js[i]);
      }
      for (std::size_t i = 0; i < lkeys.size(); ++i) {
        offs.push_back(lm_offset.at(lkeys[i]));
        blocks.push_back(&Jl[i]);
      }
      for (std::size_t a = 0; a < blocks.size(); ++a) {
        b.segment(offs[a], blocks[a]->cols()).noalias() +=
            blocks[a]->transpose() * r;
        for (std::size_t c = 0; c < blocks.size(); ++c) {
          H.block(offs[a], offs[c], blocks[a]->cols(), blocks[c]->cols())
              .noalias() += blocks[a]->transpose() * (*blocks[c]);
        }
      }
    }

    bool accepted = false;
    double new_cost = cost;
    std::map<int, NavState> cand_states;
    std::map<int, Vec3> cand_landmarks;
    Eigen::VectorXd dx;

    while (true) {
      Eigen::MatrixXd Hd = H;
      Hd.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        dx = ldlt.solve(-b);
        ok = dx.allFinite();
      }
      if (!ok) {
        lambda *= 10.0;
        if (lambda > set.lambda_max) {
          throw std::runtime_error(
              "Window::optimize: singular normal equations beyond damping limit");
        }
        continue;
      }

      cand_states = states_;
      cand_landmarks = landmarks_;
      for (const auto& [kf, off] : state_offset) {
        cand_states[kf] = states_.at(kf).retract(dx.segment<15>(off));
      }
      for (const auto& [id, off] : lm_offset) {
        cand_landmarks[id] = landmarks_.at(id) + dx.segment<3>(off);
      }
      GraphValues cand{&cand_states, &cand_landmarks};
      new_cost = evaluateCost(cand, nullptr);
      if (std::isfinite(new_cost) && new_cost < cost) {
        accepted = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > set.lambda_max) break;  // no further progress possible
    }

    if (!accepted) break;

    states_ = std::move(cand_states);
    landmarks_ = std::move(cand_landmarks);
    lambda = std::max(lambda / 10.0, 1e-12);
    report.iterations = iter + 1;
    const double decrease = cost - new_cost;
    cost = new_cost;
    if (dx.norm() < set.step_tol || decrease < set.cost_tol) {
      report.converged = true;
      break;
    }
  }

  if (report.iterations == set.max_iterations) report.converged = true;
  report.final_cost = cost;
  report.final_lambda = lambda;
  GraphValues fin{&states_, &landmarks_};
  evaluateCost(fin, &report.cost_by_type);
  optimized_once_ = true;
  return report;
}

void Window::marginalizeOldest() {
  if (static_cast<int>(states_.size()) <= config_.max_keyframes) return;  // no-op

  const int oldest = states_.begin()->first;
  const int next = std::next(states_.begin())->first;

  // landmarks whose every factor touches only the oldest keyframe
  std::map<int, std::set<int>> lm_observers;
  for (const auto& f : factors_) {
    for (int lm : f->landmarkKeys()) {
      for (int kf : f->stateKeys()) lm_observers[lm].insert(kf);
    }
  }
  std::set<int> exclusive;
  for (const auto& [lm, obs] : lm_observers) {
    if (obs.size() == 1 && obs.count(oldest)) exclusive.insert(lm);
  }

  // factor partition: marginalized set = factors touching only {oldest,
  // next, exclusive landmarks} that involve the oldest state
  std::vector<std::unique_ptr<Factor>> keep;
  std::vector<std::unique_ptr<Factor>> marg;
  for (auto& f : factors_) {
    const auto& skeys = f->stateKeys();
    const auto& lkeys = f->landmarkKeys();
    const bool touches_oldest =
        std::find(skeys.begin(), skeys.end(), oldest) != skeys.end();
    if (!touches_oldest) {
      keep.push_back(std::move(f));
      continue;
    }
    bool margable = true;
    for (int kf : skeys) {
      if (kf != oldest && kf != next) margable = false;
    }
    for (int lm : lkeys) {
      if (!exclusive.count(lm)) margable = false;
    }
    if (margable) {
      marg.push_back(std::move(f));
    }
    // factors on the oldest state that reference shared landmarks or other
    // states are dropped (their observations are lost, standard fixed-lag
    // practice)
  }

  // local ordering: oldest state, exclusive landmarks | next state
  std::vector<int> excl_ids(exclusive.begin(), exclusive.end());
  std::map<int, int> lm_off;
  int off = 15;
  for (int id : excl_ids) {
    lm_off[id] = off;
    off += 3;
  }
  const int nm = off;       // marginalized dims
  const int nr = 15;        // remaining dims (next state)
  const int dim = nm + nr;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  GraphValues cur{&states_, &landmarks_};
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> Js, Jl;
  for (const auto& f : marg) {
    if (!f->linearize(cur, r, Js, Jl)) continue;
    if (f->robust()) {
      const double s = dcsScale(r.squaredNorm(), config_.solver.dcs_phi);
      if (s < 1.0) {
        r *= s;
        for (auto& J : Js) J *= s;
        for (auto& J : Jl) J *= s;
      }
    }
    const auto& skeys = f->stateKeys();
    const auto& lkeys = f->landmarkKeys();
    std::vector<int> offs;
    std::vector<const Eigen::MatrixXd*> blocks;
    for (std::size_t i = 0; i < skeys.size(); ++i) {
      offs.push_back(skeys[i] == oldest ? 0 : nm);
      blocks.push_back(&Js[i]);
    }
    for (std::size_t i = 0; i < lkeys.size(); ++i) {
      offs.push_back(lm_off.at(lkeys[i]));
      blocks.push_back(&Jl[i]);
    }
    for (std::size_t a = 0; a < blocks.size(); ++a) {
      b.segment(offs[a], blocks[a]->cols()).noalias() += blocks[a]->transpose() * r;
      for (std::size_t c = 0; c < blocks.size(); ++c) {
        H.block(offs[a], offs[c], blocks[a]->cols(), blocks[c]->cols())
            .noalias() += blocks[a]->transpose() * (*blocks[c]);
      }
    }
  }

  // Schur complement onto the next state
  const Eigen::MatrixXd Hmm = H.topLeftCorner(nm, nm) +
                              1e-12 * Eigen::MatrixXd::Identity(nm, nm);
  const Eigen::MatrixXd Hmr = H.topRightCorner(nm, nr);
  const Eigen::MatrixXd Hrr = H.bottomRightCorner(nr, nr);
  const Eigen::VectorXd bm = b.head(nm);
  const Eigen::VectorXd br = b.tail(nr);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(Hmm);
  const Eigen::MatrixXd Hmm_inv_Hmr = ldlt.solve(Hmr);
  Mat15 H_prior = Hrr - Hmr.transpose() * Hmm_inv_Hmr;
  H_prior = 0.5 * (H_prior + H_prior.transpose());
  const Vec15 b_prior = br - Hmr.transpose() * ldlt.solve(bm);

  // Gaussian on the next state: mean = current value shifted by -H^-1 b
  Eigen::SelfAdjointEigenSolver<Mat15> eig(H_prior);
  const double max_eig = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double floor = std::max(1e-12, max_eig * 1e-12);
  Eigen::Matrix<double, 15, 1> inv_clamped;
  Eigen::Matrix<double, 15, 1> clamped;
  for (int i = 0; i < 15; ++i) {
    clamped(i) = std::max(eig.eigenvalues()(i), floor);
    inv_clamped(i) = 1.0 / clamped(i);
  }
  const Mat15 cov_prior =
      eig.eigenvectors() * inv_clamped.asDiagonal() * eig.eigenvectors().transpose();
  const Vec15 mean_shift = -cov_prior * b_prior;
  const NavState prior_mean = states_.at(next).retract(mean_shift);

  // rebuild the window without the oldest state and its landmarks
  factors_ = std::move(keep);
  factors_.push_back(std::make_unique<PriorFactor>(next, prior_mean, cov_prior));
  states_.erase(oldest);
  times_.erase(oldest);
  for (int id : excl_ids) landmarks_.erase(id);

  // garbage-collect landmarks that lost all their factors
  std::set<int> referenced;
  for (const auto& f : factors_) {
    for (int lm : f->landmarkKeys()) referenced.insert(lm);
  }
  for (auto it = landmarks_.begin(); it != landmarks_.end();) {
    if (!referenced.count(it->first)) it = landmarks_.erase(it);
    else ++it;
  }
}

void writeTrajectoryCsv(const std::vector<KeyframeEstimate>& traj,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory CSV: " + path);
  out.precision(17);
  out << "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz\n";
  for (const auto& k : traj) {
    const Eigen::Quaterniond q(k.state.R.matrix());
    out << k.t << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z()
        << ',' << k.state.p.x() << ',' << k.state.p.y() << ',' << k.state.p.z()
        << ',' << k.state.v.x() << ',' << k.state.v.y() << ',' << k.state.v.z()
        << ',' << k.state.ba.x() << ',' << k.state.ba.y() << ',' << k.state.ba.z()
        << ',' << k.state.bg.x() << ',' << k.state.bg.y() << ',' << k.state.bg.z()
        << '\n';
  }
}

}  // namespace vibe
