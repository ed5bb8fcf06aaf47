#include "vibe/allanvar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vibe {

std::vector<double> defaultTauGrid(double duration, double rate) {
  const double tau_min = std::max(0.01, 1.0 / rate);
  const double tau_max = duration / 10.0;
  if (tau_max <= tau_min) {
    throw std::invalid_argument("defaultTauGrid: signal too short for a grid");
  }
  std::vector<double> taus;
  long last_m = 0;
  for (int i = 0; i < 100; ++i) {
    const double f = static_cast<double>(i) / 99.0;
    const double tau = tau_min * std::pow(tau_max / tau_min, f);
    const long m = std::max(1L, std::lround(tau * rate));
    if (m != last_m) {
      taus.push_back(static_cast<double>(m) / rate);
      last_m = m;
    }
  }
  return taus;
}

AllanCurve allanDeviation(const std::vector<double>& signal, double rate,
                          const std::vector<double>& taus) {
  if (taus.empty()) throw std::invalid_argument("allanDeviation: empty tau grid");
  const long n = static_cast<long>(signal.size());
  const double tau_max = *std::max_element(taus.begin(), taus.end());
  const long required = 2 * std::lround(tau_max * rate) + 1;
  if (n < required) {
    std::ostringstream os;
    os << "allanDeviation: signal too short: have " << n << " samples, need at least "
       << required << " for tau = " << tau_max << " s at " << rate << " Hz";
    throw std::invalid_argument(os.str());
  }

  // prefix sums for O(1) cluster averages
  std::vector<double> prefix(n + 1, 0.0);
  for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + signal[i];

  AllanCurve curve;
  for (double tau : taus) {
    const long m = std::lround(tau * rate);
    if (m < 1 || 2 * m >= n) continue;
    const long pairs = n - 2 * m;  // k = 0 .. n-2m-1
    double acc = 0.0;
    const double inv_m = 1.0 / static_cast<double>(m);
    for (long k = 0; k < pairs; ++k) {
      const double y0 = (prefix[k + m] - prefix[k]) * inv_m;
      const double y1 = (prefix[k + 2 * m] - prefix[k + m]) * inv_m;
      const double d = y1 - y0;
      acc += d * d;
    }
    const double var = acc / (2.0 * static_cast<double>(pairs));
    curve.taus.push_back(static_cast<double>(m) / rate);
    curve.adev.push_back(std::sqrt(var));
  }
  return curve;
}

namespace {

// local log-log slope by regression over a +-2 neighborhood
std::vector<double> localSlopes(const AllanCurve& c) {
  const int n = static_cast<int>(c.taus.size());
  std::vector<double> lt(n), ls(n), slopes(n, 0.0);
  for (int i = 0; i < n; ++i) {
    lt[i] = std::log(c.taus[i]);
    ls[i] = std::log(std::max(c.adev[i], 1e-300));
  }
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - 2);
    const int hi = std::min(n - 1, i + 2);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int cnt = hi - lo + 1;
    for (int k = lo; k <= hi; ++k) {
      sx += lt[k];
      sy += ls[k];
      sxx += lt[k] * lt[k];
      sxy += lt[k] * ls[k];
    }
    const double denom = cnt * sxx - sx * sx;
    slopes[i] = denom != 0.0 ? (cnt * sxy - sx * sy) / denom : 0.0;
  }
  return slopes;
}

}  // namespace

AxisNoiseFit fitNoiseParams(const AllanCurve& curve) {
  if (curve.taus.size() < 8) {
    throw std::runtime_error("fitNoiseParams: curve too short to fit");
  }
  const double decades =
      std::log10(curve.taus.back()) - std::log10(curve.taus.front());
  if (decades < 3.0) {
    std::ostringstream os;
    os << "fitNoiseParams: curve spans only " << decades
       << " decades of tau; need at least 3";
    throw std::runtime_error(os.str());
  }
  double min_adev = 1e300;
  for (double a : curve.adev) min_adev = std::min(min_adev, a);
  if (min_adev <= 0.0) {
    throw std::runtime_error(
        "fitNoiseParams: curve has non-positive deviation (constant signal?)");
  }

  const auto slopes = localSlopes(curve);
  const int n = static_cast<int>(curve.taus.size());

  AxisNoiseFit fit;

  // white noise: -1/2 slope region, fit the offset of log(s) = c - 0.5 log(tau)
  {
    double acc = 0.0;
    int cnt = 0;
    for (int i = 0; i < n; ++i) {
      if (slopes[i] > -0.7 && slopes[i] < -0.3) {
        acc += std::log(curve.adev[i]) + 0.5 * std::log(curve.taus[i]);
        ++cnt;
      }
    }
    if (cnt < 4) {
      std::ostringstream os;
      os << "fitNoiseParams: no identifiable -1/2 slope region (found " << cnt
         << " candidate points; slope range over curve [";
      os << *std::min_element(slopes.begin(), slopes.end()) << ", "
         << *std::max_element(slopes.begin(), slopes.end()) << "])";
      throw std::runtime_error(os.str());
    }
    fit.white_density = std::exp(acc / cnt);
  }

  fit.bias_instability = min_adev / 0.664;

  // rate random walk: +1/2 slope region in the long-tau tail
  {
    double acc = 0.0;
    int cnt = 0;
    for (int i = 0; i < n; ++i) {
      if (curve.taus[i] >= 1.0 && slopes[i] > 0.3 && slopes[i] < 0.7) {
        acc += std::log(curve.adev[i]) - 0.5 * std::log(curve.taus[i]);
        ++cnt;
      }
    }
    if (cnt < 3) {
      std::ostringstream os;
      os << "fitNoiseParams: no identifiable +1/2 slope region (found " << cnt
         << " candidate points past tau = 1 s)";
      throw std::runtime_error(os.str());
    }
    // sigma(tau) = K * sqrt(tau / 3), anchored at tau = 3 s
    fit.rate_random_walk = std::exp(acc / cnt) * std::sqrt(3.0);
  }
  return fit;
}

CalibrationResult calibrateImu(const std::vector<ImuSample>& imu, double rate) {
  if (imu.size() < 100) {
    throw std::invalid_argument("calibrateImu: need at least 100 samples");
  }
  const double duration = static_cast<double>(imu.size()) / rate;
  const auto taus = defaultTauGrid(duration, rate);

  CalibrationResult result;
  std::vector<double> channel(imu.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < imu.size(); ++i) channel[i] = imu[i].accel[axis];
    result.accel_curves[axis] = allanDeviation(channel, rate, taus);
    result.params.accel[axis] = fitNoiseParams(result.accel_curves[axis]);
  }
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < imu.size(); ++i) channel[i] = imu[i].gyro[axis];
    result.gyro_curves[axis] = allanDeviation(channel, rate, taus);
    result.params.gyro[axis] = fitNoiseParams(result.gyro_curves[axis]);
  }
  return result;
}

using nlohmann::json;

namespace {
json axisToJson(const AxisNoiseFit& f) {
  return {{"white_density", f.white_density},
          {"bias_instability", f.bias_instability},
          {"rate_random_walk", f.rate_random_walk}};
}
AxisNoiseFit axisFromJson(const json& j) {
  AxisNoiseFit f;
  f.white_density = j.at("white_density").get<double>();
  f.bias_instability = j.at("bias_instability").get<double>();
  f.rate_random_walk = j.at("rate_random_walk").get<double>();
  return f;
}
}  // namespace

void saveCalibration(const ImuNoiseParams& params, const std::string& path) {
  json j;
  for (int a = 0; a < 3; ++a) {
    j["accel"].push_back(axisToJson(params.accel[a]));
    j["gyro"].push_back(axisToJson(params.gyro[a]));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write calibration file: " + path);
  out << j.dump(2) << "\n";
}

ImuNoiseParams loadCalibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calibration file: " + path);
  json j;
  in >> j;
  ImuNoiseParams p;
  for (int a = 0; a < 3; ++a) {
    p.accel[a] = axisFromJson(j.at("accel").at(a));
    p.gyro[a] = axisFromJson(j.at("gyro").at(a));
  }
  return p;
}

void writeAllanCurvesCsv(const CalibrationResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write Allan curve CSV: " + path);
  out.precision(12);
  out << "tau,adev_ax,adev_ay,adev_az,adev_gx,adev_gy,adev_gz\n";
  const auto& taus = result.accel_curves[0].taus;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    out << taus[i];
    for (int a = 0; a < 3; ++a) out << ',' << result.accel_curves[a].adev[i];
    for (int a = 0; a < 3; ++a) out << ',' << result.gyro_curves[a].adev[i];
    out << '\n';
  }
}

}  // namespace vibe
