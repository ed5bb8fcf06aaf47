#include "vibe/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vibe {

std::vector<TimedPose> toTimedPoses(const std::vector<KeyframeEstimate>& traj) {
  std::vector<TimedPose> out;
  out.reserve(traj.size());
  for (const auto& k : traj) out.push_back({k.t, Pose3(k.state.R, k.state.p)});
  return out;
}

std::vector<std::pair<int, int>> associate(const std::vector<TimedPose>& est,
                                           const std::vector<TimedPose>& gt,
                                           double max_dt) {
  std::vector<std::pair<int, int>> pairs;
  int g = 0;
  for (int e = 0; e < static_cast<int>(est.size()); ++e) {
    while (g + 1 < static_cast<int>(gt.size()) &&
           std::abs(gt[g + 1].t - est[e].t) <= std::abs(gt[g].t - est[e].t)) {
      ++g;
    }
    if (g < static_cast<int>(gt.size()) && std::abs(gt[g].t - est[e].t) <= max_dt) {
      pairs.emplace_back(e, g);
    }
  }
  return pairs;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double rmse(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

RpeReport rpe(const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
              double distance, double max_dt) {
  const auto pairs = associate(est, gt, max_dt);
  if (pairs.size() < 2) {
    throw std::invalid_argument("rpe: fewer than two associated poses");
  }

  // cumulative ground-truth distance along associated poses
  std::vector<double> cum(pairs.size(), 0.0);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    cum[i] = cum[i - 1] + (gt[pairs[i].second].pose.translation() -
                           gt[pairs[i - 1].second].pose.translation())
                              .norm();
  }
  if (cum.back() < distance) {
    throw std::invalid_argument("rpe: trajectory shorter than segment distance " +
                                std::to_string(distance) + " m");
  }

  RpeReport rep;
  rep.distance = distance;
  std::size_t end = 0;
  for (std::size_t start = 0; start < pairs.size(); ++start) {
    if (end < start) end = start;
    while (end < pairs.size() && cum[end] - cum[start] < distance) ++end;
    if (end >= pairs.size()) break;
    const Pose3& ge = gt[pairs[end].second].pose;
    const Pose3& gs = gt[pairs[start].second].pose;
    const Pose3& ee = est[pairs[end].first].pose;
    const Pose3& es = est[pairs[start].first].pose;
    const Pose3 err = (gs.inverse() * ge).inverse() * (es.inverse() * ee);
    rep.start_times.push_back(est[pairs[start].first].t);
    rep.trans_err.push_back(err.translation().norm());
    rep.rot_err_deg.push_back(err.rotation().log().norm() * 180.0 / M_PI);
  }
  if (rep.trans_err.empty()) {
    throw std::invalid_argument("rpe: no full-length segments found");
  }
  rep.trans_mean = mean(rep.trans_err);
  rep.trans_median = median(rep.trans_err);
  rep.trans_rmse = rmse(rep.trans_err);
  rep.rot_mean = mean(rep.rot_err_deg);
  rep.rot_median = median(rep.rot_err_deg);
  rep.rot_rmse = rmse(rep.rot_err_deg);
  return rep;
}

double ate(const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
           double max_dt) {
  const auto pairs = associate(est, gt, max_dt);
  const int n = static_cast<int>(pairs.size());
  if (n < 3) throw std::invalid_argument("ate: need at least 3 associated poses");

  Eigen::MatrixXd src(3, n), dst(3, n);
  for (int i = 0; i < n; ++i) {
    src.col(i) = est[pairs[i].first].pose.translation();
    dst.col(i) = gt[pairs[i].second].pose.translation();
  }

  // degenerate-geometry check on the centered ground truth
  const Eigen::MatrixXd centered = dst.colwise() - dst.rowwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  if (svd.singularValues()(1) < 1e-9 * std::max(svd.singularValues()(0), 1e-12)) {
    throw std::invalid_argument("ate: degenerate (collinear) trajectory");
  }

  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3d R = T.topLeftCorner<3, 3>();
  const Eigen::Vector3d t = T.topRightCorner<3, 1>();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += (R * src.col(i) + t - dst.col(i)).squaredNorm();
  }
  return std::sqrt(acc / n);
}

double pathLength(const std::vector<TimedPose>& gt) {
  double len = 0.0;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    len += (gt[i].pose.translation() - gt[i - 1].pose.translation()).norm();
  }
  return len;
}

}  // namespace vibe
