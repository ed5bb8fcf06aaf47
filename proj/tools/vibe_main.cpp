#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vibe/allanvar.hpp"
#include "vibe/biasnet.hpp"
#include "vibe/experiment.hpp"
#include "vibe/simulator.hpp"

namespace fs = std::filesystem;
using namespace vibe;

namespace {

int cmdSimulate(const std::string& scenario_path, const std::string& out_dir,
                long seed_override) {
  Scenario sc = loadScenario(scenario_path);
  if (seed_override >= 0) sc.seed = static_cast<std::uint64_t>(seed_override);
  const SimData data = simulate(sc);
  fs::create_directories(out_dir);
  writeImuCsv(data.imu, out_dir + "/imu.csv");
  writeGtCsv(data.traj, data.bias_truth, out_dir + "/gt.csv");
  writeObsCsv(data.obs, out_dir + "/obs.csv");
  saveScenario(sc, out_dir + "/scenario.json");
  std::printf("simulate: %s -> %s (%zu imu, %zu obs, %d keyframes)\n",
              sc.name.c_str(), out_dir.c_str(), data.imu.size(), data.obs.size(),
              data.num_keyframes);
  return 0;
}

int cmdCalibrate(const std::string& imu_csv, const std::string& out_file,
                 const std::string& curve_csv, double rate) {
  const auto imu = readImuCsv(imu_csv);
  if (rate <= 0.0 && imu.size() >= 2) rate = 1.0 / (imu[1].t - imu[0].t);
  const auto result = calibrateImu(imu, rate);
  saveCalibration(result.params, out_file);
  if (!curve_csv.empty()) writeAllanCurvesCsv(result, curve_csv);
  std::printf("calibrate: accel white %.3e walk %.3e | gyro white %.3e walk %.3e\n",
              result.params.accel[0].white_density,
              result.params.accel[0].rate_random_walk,
              result.params.gyro[0].white_density,
              result.params.gyro[0].rate_random_walk);
  return 0;
}

std::vector<SimData> simulateAll(const std::vector<std::string>& scenario_paths) {
  std::vector<SimData> sims;
  for (const auto& p : scenario_paths) sims.push_back(simulate(loadScenario(p)));
  return sims;
}

int cmdTrain(const std::vector<std::string>& scenario_paths, const std::string& arch,
             const std::string& out_path, const std::string& calib_path,
             const std::string& config_path, const std::string& curves_path) {
  const std::vector<SimData> sims = simulateAll(scenario_paths);
  if (sims.empty()) {
    std::fprintf(stderr, "train: no scenarios given\n");
    return 1;
  }
  const std::uint64_t imu_seed = sims.front().scenario.imu_seed;

  TrainConfig tc;
  double lstm_hidden = 64, embed = 64, heads = 2, history = 100;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open train config: " + config_path);
    nlohmann::json j;
    in >> j;
    tc.lr = j.value("lr", tc.lr);
    tc.batch = j.value("batch", tc.batch);
    tc.epochs = j.value("epochs", tc.epochs);
    tc.split = j.value("split", tc.split);
    tc.chunk_len = j.value("chunk_len", tc.chunk_len);
    tc.seed = j.value("seed", tc.seed);
    lstm_hidden = j.value("hidden", lstm_hidden);
    embed = j.value("embed", embed);
    heads = j.value("heads", heads);
    history = j.value("history", history);
  }

  // teacher-forcing noise: Allan deviation of the white noise at the
  // inference interval (the discrete Sigma^bad / Sigma^bgd scale)
  double teacher_a, teacher_g;
  const double period = arch == "lstm" ? 0.5 : 1.0;
  if (!calib_path.empty()) {
    const ImuNoiseParams cal = loadCalibration(calib_path);
    teacher_a = cal.accel[0].white_density / std::sqrt(period);
    teacher_g = cal.gyro[0].white_density / std::sqrt(period);
  } else {
    teacher_a = sims.front().scenario.noise.accel_white_sigma / std::sqrt(period);
    teacher_g = sims.front().scenario.noise.gyro_white_sigma / std::sqrt(period);
  }

  SequenceSpec spec;
  spec.window_len = 10;
  spec.window_span = 1.0;
  spec.period = period;
  spec.seed = tc.seed;

  TrainCurves curves;
  if (arch == "lstm") {
    LstmConfig lc;
    lc.hidden = static_cast<int>(lstm_hidden);
    LstmPair pair{LstmModel(lc, tc.seed), LstmModel(lc, tc.seed + 1)};
    spec.sensor = SensorKind::kAccel;
    spec.teacher_noise_std = teacher_a;
    curves = trainLstm(pair.accel, buildSequences(sims, spec), tc);
    spec.sensor = SensorKind::kGyro;
    spec.teacher_noise_std = teacher_g;
    const TrainCurves gcurves = trainLstm(pair.gyro, buildSequences(sims, spec), tc);
    saveLstmCheckpoint(pair, imu_seed, out_path);
    std::printf("train lstm: accel val %.3e (epoch %d), gyro val %.3e (epoch %d)\n",
                curves.val_loss[curves.best_epoch], curves.best_epoch,
                gcurves.val_loss[gcurves.best_epoch], gcurves.best_epoch);
  } else if (arch == "transformer") {
    TransformerConfig cfg;
    cfg.embed = static_cast<int>(embed);
    cfg.heads = static_cast<int>(heads);
    cfg.history = static_cast<int>(history);
    TransformerPair pair{TransformerModel(cfg, tc.seed), TransformerModel(cfg, tc.seed + 1)};
    spec.sensor = SensorKind::kAccel;
    spec.teacher_noise_std = teacher_a;
    curves = trainTransformer(pair.accel, buildSequences(sims, spec), tc);
    spec.sensor = SensorKind::kGyro;
    spec.teacher_noise_std = teacher_g;
    const TrainCurves gcurves =
        trainTransformer(pair.gyro, buildSequences(sims, spec), tc);
    saveTransformerCheckpoint(pair, imu_seed, out_path);
    std::printf("train transformer: accel val %.3e (epoch %d), gyro val %.3e (epoch %d)\n",
                curves.val_loss[curves.best_epoch], curves.best_epoch,
                gcurves.val_loss[gcurves.best_epoch], gcurves.best_epoch);
  } else {
    std::fprintf(stderr, "train: unknown arch '%s'\n", arch.c_str());
    return 1;
  }
  if (!curves_path.empty()) writeTrainCurvesCsv(curves, curves_path);
  return 0;
}

int cmdRun(const std::string& scenario_path, const std::vector<std::string>& methods,
           const std::string& lstm_path, const std::string& transformer_path,
           const std::string& out_dir, long seed_override) {
  Scenario sc = loadScenario(scenario_path);
  if (seed_override >= 0) sc.seed = static_cast<std::uint64_t>(seed_override);
  const SimData data = simulate(sc);

  BiasModelSet models;
  std::vector<Method> ms;
  for (const auto& m : methods) ms.push_back(methodFromString(m));
  for (Method m : ms) {
    if (m == Method::kLstm) {
      if (lstm_path.empty()) throw std::runtime_error("run: --model-lstm required");
      models.lstm = loadLstmCheckpoint(lstm_path, &models.imu_seed);
    }
    if (m == Method::kTransformer) {
      if (transformer_path.empty())
        throw std::runtime_error("run: --model-transformer required");
      models.transformer = loadTransformerCheckpoint(transformer_path, &models.imu_seed);
    }
  }

  VioSettings settings;
  const auto report = runExperiment(data, ms, &models, settings, out_dir);
  std::printf("%-12s %12s %12s %12s\n", "method", "rpe5_mean", "ate", "drift");
  for (const auto& m : report.methods) {
    std::printf("%-12s %12.5f %12.5f %12.6f\n", toString(m.method).c_str(),
                m.rpe5.trans_mean, m.ate_m, m.drift_rate);
  }
  return 0;
}

int cmdReport(const std::vector<std::string>& dirs, const std::string& out_path) {
  std::ostringstream os;
  os << "dir,method,rpe5_trans_mean,rpe5_trans_rmse,rpe5_rot_mean_deg,ate_m,"
        "drift_rate,bias_rmse_accel,bias_rmse_gyro,gyro_z_rmse_fault,runtime_ms\n";
  for (const auto& d : dirs) {
    std::ifstream in(d + "/report.csv");
    if (!in) {
      std::fprintf(stderr, "report: missing %s/report.csv\n", d.c_str());
      return 1;
    }
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty()) os << d << ',' << line << '\n';
    }
  }
  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream out(out_path);
    out << os.str();
    std::printf("report: wrote %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale visual-inertial estimation with learned IMU bias models"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario");
  std::string scenario_path, out_dir = "out";
  long seed_override = -1;
  sim->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--seed", seed_override, "override scenario seed");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Allan-variance IMU calibration");
  std::string imu_csv, calib_out = "calibration.json", curve_csv;
  double rate = -1.0;
  cal->add_option("--imu", imu_csv, "IMU CSV (t,ax,ay,az,gx,gy,gz)")->required();
  cal->add_option("--out", calib_out, "calibration output file");
  cal->add_option("--curves", curve_csv, "Allan curve CSV output");
  cal->add_option("--rate", rate, "sample rate [Hz] (default: from timestamps)");

  // train
  auto* tr = app.add_subcommand("train", "train a bias model on simulated scenarios");
  std::vector<std::string> train_scenarios;
  std::string arch = "lstm", model_out = "model.json", calib_path, train_config,
              curves_path;
  tr->add_option("--scenario", train_scenarios, "training scenario JSON files")
      ->required()
      ->expected(-1);
  tr->add_option("--arch", arch, "lstm | transformer");
  tr->add_option("--out", model_out, "checkpoint output path");
  tr->add_option("--calib", calib_path, "calibration file for teacher noise");
  tr->add_option("--config", train_config, "training config JSON");
  tr->add_option("--curves", curves_path, "training curve CSV output");

  // run
  auto* run = app.add_subcommand("run", "run estimator methods on a scenario");
  std::vector<std::string> methods{"baseline"};
  std::string lstm_path, transformer_path, run_out = "run_out";
  std::string run_scenario;
  long run_seed = -1;
  run->add_option("--scenario", run_scenario, "scenario JSON file")->required();
  run->add_option("--methods", methods,
                  "baseline | bias_lock | lstm | transformer")
      ->delimiter(',');
  run->add_option("--model", lstm_path, "LSTM checkpoint (alias of --model-lstm)");
  run->add_option("--model-lstm", lstm_path, "LSTM checkpoint");
  run->add_option("--model-transformer", transformer_path, "Transformer checkpoint");
  run->add_option("--out", run_out, "output directory");
  run->add_option("--seed", run_seed, "override scenario seed");

  // report
  auto* rep = app.add_subcommand("report", "aggregate run outputs");
  std::vector<std::string> report_dirs;
  std::string report_out;
  rep->add_option("--in", report_dirs, "run output directories")->required()->expected(-1);
  rep->add_option("--out", report_out, "aggregate CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmdSimulate(scenario_path, out_dir, seed_override);
    if (cal->parsed()) return cmdCalibrate(imu_csv, calib_out, curve_csv, rate);
    if (tr->parsed())
      return cmdTrain(train_scenarios, arch, model_out, calib_path, train_config,
                      curves_path);
    if (run->parsed())
      return cmdRun(run_scenario, methods, lstm_path, transformer_path, run_out,
                    run_seed);
    if (rep->parsed()) return cmdReport(report_dirs, report_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
