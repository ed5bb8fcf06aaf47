#pragma once

#include <string>
#include <vector>

#include "vibe/simulator.hpp"

namespace vibe {

struct AllanCurve {
  std::vector<double> taus;  // [s], strictly increasing
  std::vector<double> adev;  // Allan deviation, sensor units
};

/// Per-axis identified noise parameters.
struct AxisNoiseFit {
  double white_density = 0.0;     // [unit / sqrt(Hz)], -1/2 slope anchored at 1 s
  double bias_instability = 0.0;  // [unit], curve minimum / 0.664
  double rate_random_walk = 0.0;  // [unit * sqrt(Hz)], +1/2 slope anchored at 3 s
};

struct ImuNoiseParams {
  AxisNoiseFit accel[3];
  AxisNoiseFit gyro[3];
};

/// Log-spaced grid of 100 averaging times in [0.01 s, duration/10],
/// deduplicated to distinct cluster sizes at the given rate.
std::vector<double> defaultTauGrid(double duration, double rate);

/// Overlapping Allan deviation of a uniformly sampled series.
/// Throws on signals shorter than twice the largest cluster.
AllanCurve allanDeviation(const std::vector<double>& signal, double rate,
                          const std::vector<double>& taus);

/// Identifies white noise, bias instability and rate random walk from the
/// log-log slope structure of the curve. Throws std::runtime_error with
/// diagnostics when no -1/2 or +1/2 slope region can be found.
AxisNoiseFit fitNoiseParams(const AllanCurve& curve);

struct CalibrationResult {
  ImuNoiseParams params;
  AllanCurve accel_curves[3];
  AllanCurve gyro_curves[3];
};

/// Full six-axis calibration of an IMU log (assumed near-static).
CalibrationResult calibrateImu(const std::vector<ImuSample>& imu, double rate);

void saveCalibration(const ImuNoiseParams& params, const std::string& path);
ImuNoiseParams loadCalibration(const std::string& path);
void writeAllanCurvesCsv(const CalibrationResult& result, const std::string& path);

}  // namespace vibe
