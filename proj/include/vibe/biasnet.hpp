#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "vibe/autodiff.hpp"
#include "vibe/factors.hpp"
#include "vibe/liealg.hpp"
#include "vibe/simulator.hpp"

namespace vibe {

/// Fixed-length, gravity-aligned IMU window (rows are samples, columns are
/// accel xyz then gyro xyz).
struct ImuWindow {
  double t_start = 0.0;
  double t_end = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, 6> samples;
};

/// Rotation taking body-frame measurements into a yaw-preserving,
/// gravity-aligned frame (static unbiased accelerometer maps to (0,0,g)).
Rot3 gravityAlignmentRotation(const Rot3& orientation);

/// Aligns and block-mean downsamples a raw sample span to w rows.
ImuWindow buildAlignedWindow(const std::vector<ImuSample>& imu, int start_idx,
                             int count, const Rot3& orientation, int w);

/// Per-channel normalization over the 9 input channels (imu 6 + previous
/// bias 3) and the 3 output channels. Stds are floored at 1e-8.
struct NormStats {
  Eigen::VectorXd mean_in{Eigen::VectorXd::Zero(9)};
  Eigen::VectorXd std_in{Eigen::VectorXd::Ones(9)};
  Eigen::VectorXd mean_out{Eigen::VectorXd::Zero(3)};
  Eigen::VectorXd std_out{Eigen::VectorXd::Ones(3)};
};

enum class SensorKind { kAccel, kGyro };

// ---- training data -------------------------------------------------------

/// One inference step of a teacher-forced sequence (raw physical units).
struct BiasStep {
  double t = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, 6> window;  // aligned, w x 6
  Vec3 prev_bias{Vec3::Zero()};                     // teacher input
  Vec3 target{Vec3::Zero()};
};

struct BiasSequence {
  std::vector<BiasStep> steps;
};

struct SequenceSpec {
  SensorKind sensor = SensorKind::kGyro;
  int window_len = 10;        // w
  double window_span = 1.0;   // [s]
  double period = 0.5;        // [s] between steps
  double teacher_noise_std = 0.0;
  std::uint64_t seed = 1;
};

/// Builds teacher-forced sequences from simulated runs (ground-truth
/// orientation for alignment, noisy ground-truth previous biases).
std::vector<BiasSequence> buildSequences(const std::vector<SimData>& sims,
                                         const SequenceSpec& spec);

// ---- LSTM ------------------------------------------------------------------

struct LstmConfig {
  int hidden = 64;           // 256 at paper scale
  int layers = 2;
  int window_len = 10;       // w, 1 s of data
  double window_span = 1.0;  // [s]
  double infer_period = 0.5; // [s], 2 Hz with 50% overlap
};

class LstmModel {
 public:
  LstmModel(const LstmConfig& config, std::uint64_t seed);

  const LstmConfig& config() const { return config_; }
  NormStats& stats() { return stats_; }
  const NormStats& stats() const { return stats_; }
  std::vector<ad::Tensor> parameters();

  /// Carried-state inference: one window plus the previous bias estimate.
  Vec3 infer(const ImuWindow& window, const Vec3& prev_bias);
  void resetState();

  // training access
  ad::Tensor head_w, head_b, proj_w, proj_b;
  std::vector<ad::Tensor> wx, wh, b;  // per layer

 private:
  LstmConfig config_;
  NormStats stats_;
  std::vector<Eigen::MatrixXd> h_, c_;  // carried inference state
};

/// Step-major training batch: x[t] is B x (w*6+3) (normalized flattened
/// window plus previous bias), y[t] is B x 3 (physical units).
struct LstmBatch {
  std::vector<Eigen::MatrixXd> x;
  std::vector<Eigen::MatrixXd> y;
};

/// Teacher-forced training loss (Eq. MSE in physical units) for a batch of
/// equal-length chunks; hidden state starts at zero per chunk.
ad::Tensor lstmForwardLoss(ad::Tape& tape, LstmModel& model, const LstmBatch& batch);

// ---- Transformer -----------------------------------------------------------

struct TransformerConfig {
  int embed = 64;            // 512 at paper scale
  int heads = 2;             // 8 at paper scale
  int enc_layers = 2;
  int dec_layers = 2;
  int ff = 128;
  int history = 100;         // l
  int window_len = 10;
  double window_span = 1.0;
  double infer_period = 1.0; // [s], no window overlap
};

struct AttentionDiag {
  double row_sum_min = 1.0;
  double row_sum_max = 1.0;
};

class TransformerModel {
 public:
  TransformerModel(const TransformerConfig& config, std::uint64_t seed);

  const TransformerConfig& config() const { return config_; }
  NormStats& stats() { return stats_; }
  const NormStats& stats() const { return stats_; }
  std::vector<ad::Tensor> parameters();

  /// Full-history inference; returns the estimate for the newest token.
  Vec3 infer(const std::vector<ImuWindow>& history,
             const std::vector<Vec3>& bias_history,
             AttentionDiag* diag = nullptr);

  /// Normalized predictions for every position of a token sequence; all
  /// attention is causally masked so position t sees only tokens <= t.
  ad::Tensor forward(ad::Tape& tape, const Eigen::MatrixXd& enc_tokens,
                     const Eigen::MatrixXd& dec_tokens,
                     AttentionDiag* diag = nullptr);

  struct Layer {
    ad::Tensor wq, wk, wv, wo, bq, bk, bv, bo;
    ad::Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;  // ln3 used by decoder
    ad::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    ad::Tensor cq, ck, cv, co, cbq, cbk, cbv, cbo;  // cross attention (decoder)
    bool is_decoder = false;
  };

  ad::Tensor enc_embed_w, enc_embed_b, dec_embed_w, dec_embed_b;
  ad::Tensor head_w, head_b;
  std::vector<Layer> enc_layers_, dec_layers_;
  Eigen::MatrixXd positional_encoding;  // history x embed

 private:
  TransformerConfig config_;
  NormStats stats_;
};

/// Training loss over a list of token sequences (mean of per-sequence MSE,
/// physical units).
ad::Tensor transformerForwardLoss(ad::Tape& tape, TransformerModel& model,
                                  const std::vector<const BiasSequence*>& batch);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-5;
  int batch = 32;
  int epochs = 200;
  double split = 0.75;      // train fraction
  int chunk_len = 40;       // LSTM: steps per chunk; Transformer: tokens per sequence
  std::uint64_t seed = 1;
};

struct TrainCurves {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
};

/// Computes NormStats, runs Adam with teacher forcing, keeps the
/// checkpoint minimizing validation loss. Deterministic given the seed.
TrainCurves trainLstm(LstmModel& model, const std::vector<BiasSequence>& sequences,
                      const TrainConfig& config);
TrainCurves trainTransformer(TransformerModel& model,
                             const std::vector<BiasSequence>& sequences,
                             const TrainConfig& config);

void writeTrainCurvesCsv(const TrainCurves& curves, const std::string& path);

/// Teacher-forced evaluation in physical units, next to the Brownian
/// hold-last-value baseline (predicting the previous bias input unchanged).
struct PredictionEval {
  double model_mse = 0.0;
  double hold_last_mse = 0.0;
};
PredictionEval evalLstm(LstmModel& model, const std::vector<BiasSequence>& sequences);
PredictionEval evalTransformer(TransformerModel& model,
                               const std::vector<BiasSequence>& sequences,
                               int max_history);

// ---- checkpoints -----------------------------------------------------------

struct LstmPair {
  LstmModel accel;
  LstmModel gyro;
};
struct TransformerPair {
  TransformerModel accel;
  TransformerModel gyro;
};

/// Trained models available to the experiment runner.
struct BiasModelSet {
  std::optional<LstmPair> lstm;
  std::optional<TransformerPair> transformer;
  std::uint64_t imu_seed = 0;
};

/// JSON tensor container plus a NormStats sidecar (<path>.stats.json).
void saveLstmCheckpoint(const LstmPair& pair, std::uint64_t imu_seed,
                        const std::string& path);
LstmPair loadLstmCheckpoint(const std::string& path, std::uint64_t* imu_seed = nullptr);
void saveTransformerCheckpoint(const TransformerPair& pair, std::uint64_t imu_seed,
                               const std::string& path);
TransformerPair loadTransformerCheckpoint(const std::string& path,
                                          std::uint64_t* imu_seed = nullptr);

// ---- online predictors ------------------------------------------------------

/// Interface the estimator loop uses to obtain deep-bias estimates.
class BiasPredictor {
 public:
  virtual ~BiasPredictor() = default;
  virtual double period() const = 0;
  virtual double windowSpan() const = 0;
  virtual int windowLen() const = 0;
  virtual void reset() = 0;
  virtual BiasEstimate infer(const ImuWindow& window, const Vec3& prev_ba,
                             const Vec3& prev_bg, double t) = 0;
};

class LstmPredictor : public BiasPredictor {
 public:
  explicit LstmPredictor(LstmPair* pair) : pair_(pair) {}
  double period() const override { return pair_->accel.config().infer_period; }
  double windowSpan() const override { return pair_->accel.config().window_span; }
  int windowLen() const override { return pair_->accel.config().window_len; }
  void reset() override;
  BiasEstimate infer(const ImuWindow& window, const Vec3& prev_ba,
                     const Vec3& prev_bg, double t) override;

 private:
  LstmPair* pair_;
};

class TransformerPredictor : public BiasPredictor {
 public:
  explicit TransformerPredictor(TransformerPair* pair) : pair_(pair) {}
  double period() const override { return pair_->accel.config().infer_period; }
  double windowSpan() const override { return pair_->accel.config().window_span; }
  int windowLen() const override { return pair_->accel.config().window_len; }
  void reset() override;
  BiasEstimate infer(const ImuWindow& window, const Vec3& prev_ba,
                     const Vec3& prev_bg, double t) override;

 private:
  TransformerPair* pair_;
  std::deque<ImuWindow> windows_;
  std::deque<Vec3> ba_hist_, bg_hist_;
};

}  // namespace vibe
