#include "vibe/biasnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vibe {

using ad::Tensor;
using ad::Tape;

// ---- gravity alignment -----------------------------------------------------

Rot3 gravityAlignmentRotation(const Rot3& orientation) {
  const Vec3 zb = orientation.unrotate(Vec3::UnitZ());
  return shortestArc(zb, Vec3::UnitZ());
}

ImuWindow buildAlignedWindow(const std::vector<ImuSample>& imu, int start_idx,
                             int count, const Rot3& orientation, int w) {
  if (start_idx < 0 || count <= 0 ||
      start_idx + count > static_cast<int>(imu.size())) {
    throw std::invalid_argument("buildAlignedWindow: sample span out of range");
  }
  if (count < w) {
    throw std::invalid_argument("buildAlignedWindow: span shorter than window length");
  }
  const Rot3 A = gravityAlignmentRotation(orientation);
  ImuWindow win;
  win.t_start = imu[start_idx].t;
  win.t_end = imu[start_idx + count - 1].t;
  win.samples.setZero(w, 6);
  for (int b = 0; b < w; ++b) {
    const int lo = start_idx + (b * count) / w;
    const int hi = start_idx + ((b + 1) * count) / w;
    Vec3 acc = Vec3::Zero(), gyr = Vec3::Zero();
    for (int i = lo; i < hi; ++i) {
      acc += A * imu[i].accel;
      gyr += A * imu[i].gyro;
    }
    const double inv = 1.0 / std::max(1, hi - lo);
    win.samples.block<1, 3>(b, 0) = (acc * inv).transpose();
    win.samples.block<1, 3>(b, 3) = (gyr * inv).transpose();
  }
  return win;
}

// ---- sequences ---------------------------------------------------------------

std::vector<BiasSequence> buildSequences(const std::vector<SimData>& sims,
                                         const SequenceSpec& spec) {
  std::vector<BiasSequence> out;
  int sim_idx = 0;
  for (const auto& sim : sims) {
    const double rate = sim.scenario.imu_rate;
    const int span = static_cast<int>(std::lround(spec.window_span * rate));
    const int period_idx = static_cast<int>(std::lround(spec.period * rate));
    Rng noise = subRng(spec.seed, 0x7465616bULL + 977 * sim_idx);

    BiasSequence seq;
    const int n = static_cast<int>(sim.imu.size());
    for (int end = span; end < n; end += period_idx) {
      BiasStep step;
      step.t = sim.imu[end].t;
      const int start = end - span;
      step.window = buildAlignedWindow(sim.imu, start, span,
                                       sim.traj[start].pose.rotation(),
                                       spec.window_len)
                        .samples;
      const int prev = end - period_idx;
      const BiasTruth& prev_truth = sim.bias_truth[std::max(prev, 0)];
      const BiasTruth& now_truth = sim.bias_truth[end];
      const Vec3 teacher_noise = spec.teacher_noise_std * noise.gaussian3();
      if (spec.sensor == SensorKind::kAccel) {
        step.prev_bias = prev_truth.accel_bias + teacher_noise;
        step.target = now_truth.accel_bias;
      } else {
        step.prev_bias = prev_truth.gyro_bias + teacher_noise;
        step.target = now_truth.gyro_bias;
      }
      seq.steps.push_back(std::move(step));
    }
    if (!seq.steps.empty()) out.push_back(std::move(seq));
    ++sim_idx;
  }
  return out;
}

// ---- shared helpers ----------------------------------------------------------

namespace {

Eigen::MatrixXd xavier(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

// normalized flat input row: [w x 6 window | prev_bias], per-channel stats
Eigen::RowVectorXd normalizedInput(const Eigen::Matrix<double, Eigen::Dynamic, 6>& win,
                                   const Vec3& prev_bias, const NormStats& st) {
  const int w = static_cast<int>(win.rows());
  Eigen::RowVectorXd x(w * 6 + 3);
  for (int r = 0; r < w; ++r) {
    for (int c = 0; c < 6; ++c) {
      x(r * 6 + c) = (win(r, c) - st.mean_in(c)) / st.std_in(c);
    }
  }
  for (int c = 0; c < 3; ++c) {
    x(w * 6 + c) = (prev_bias(c) - st.mean_in(6 + c)) / st.std_in(6 + c);
  }
  return x;
}

NormStats computeStats(const std::vector<const BiasStep*>& steps) {
  NormStats st;
  Eigen::VectorXd sum_in = Eigen::VectorXd::Zero(9), sq_in = Eigen::VectorXd::Zero(9);
  Eigen::VectorXd sum_out = Eigen::VectorXd::Zero(3), sq_out = Eigen::VectorXd::Zero(3);
  long n_in = 0, n_out = 0;
  for (const BiasStep* s : steps) {
    for (int r = 0; r < s->window.rows(); ++r) {
      for (int c = 0; c < 6; ++c) {
        sum_in(c) += s->window(r, c);
        sq_in(c) += s->window(r, c) * s->window(r, c);
      }
    }
    n_in += s->window.rows();
    for (int c = 0; c < 3; ++c) {
      sum_in(6 + c) += s->prev_bias(c);
      sq_in(6 + c) += s->prev_bias(c) * s->prev_bias(c);
      sum_out(c) += s->target(c);
      sq_out(c) += s->target(c) * s->target(c);
    }
    n_out += 1;
  }
  if (n_in == 0 || n_out == 0) throw std::invalid_argument("computeStats: no data");
  for (int c = 0; c < 6; ++c) {
    st.mean_in(c) = sum_in(c) / n_in;
    st.std_in(c) = std::max(
        std::sqrt(std::max(0.0, sq_in(c) / n_in - st.mean_in(c) * st.mean_in(c))),
        1e-8);
  }
  for (int c = 0; c < 3; ++c) {
    st.mean_in(6 + c) = sum_in(6 + c) / n_out;
    st.std_in(6 + c) = std::max(
        std::sqrt(std::max(0.0, sq_in(6 + c) / n_out -
                                    st.mean_in(6 + c) * st.mean_in(6 + c))),
        1e-8);
    st.mean_out(c) = sum_out(c) / n_out;
    st.std_out(c) = std::max(
        std::sqrt(std::max(0.0, sq_out(c) / n_out - st.mean_out(c) * st.mean_out(c))),
        1e-8);
  }
  return st;
}

// denormalize a B x 3 normalized prediction inside the graph
Tensor denormalize(Tape& tape, const Tensor& y_norm, const NormStats& st, int rows) {
  Eigen::MatrixXd std_tile(rows, 3), mean_tile(rows, 3);
  for (int r = 0; r < rows; ++r) {
    std_tile.row(r) = st.std_out.transpose();
    mean_tile.row(r) = st.mean_out.transpose();
  }
  return ad::add(ad::mul(y_norm, tape.constant(std_tile)), tape.constant(mean_tile));
}

}  // namespace

// ---- LSTM --------------------------------------------------------------------

LstmModel::LstmModel(const LstmConfig& config, std::uint64_t seed)
    : config_(config) {
  Rng rng = subRng(seed, 0x6c73746dULL);
  const int H = config.hidden;
  const int in_dim = config.window_len * 6 + 3;
  proj_w = ad::makeParam(xavier(in_dim, H, rng), "proj_w");
  proj_b = ad::makeParam(Eigen::MatrixXd::Zero(1, H), "proj_b");
  for (int l = 0; l < config.layers; ++l) {
    wx.push_back(ad::makeParam(xavier(H, 4 * H, rng), "wx" + std::to_string(l)));
    wh.push_back(ad::makeParam(xavier(H, 4 * H, rng), "wh" + std::to_string(l)));
    Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(1, 4 * H);
    bias.block(0, H, 1, H).setConstant(1.0);  // forget gate bias
    b.push_back(ad::makeParam(bias, "b" + std::to_string(l)));
  }
  head_w = ad::makeParam(xavier(H, 3, rng), "head_w");
  head_b = ad::makeParam(Eigen::MatrixXd::Zero(1, 3), "head_b");
  resetState();
}

void LstmModel::resetState() {
  h_.assign(config_.layers, Eigen::MatrixXd::Zero(1, config_.hidden));
  c_.assign(config_.layers, Eigen::MatrixXd::Zero(1, config_.hidden));
}

std::vector<Tensor> LstmModel::parameters() {
  std::vector<Tensor> out{proj_w, proj_b};
  for (int l = 0; l < config_.layers; ++l) {
    out.push_back(wx[l]);
    out.push_back(wh[l]);
    out.push_back(b[l]);
  }
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

namespace {

// one LSTM step for one layer; gate order [input, forget, cell, output]
std::pair<Tensor, Tensor> lstmStep(Tape& tape, const Tensor& x, const Tensor& h,
                                   const Tensor& c, const Tensor& wx,
                                   const Tensor& wh, const Tensor& bias, int H) {
  Tensor gates = ad::add(ad::add(ad::matmul(x, wx), ad::matmul(h, wh)), bias);
  Tensor i = ad::sigmoid(ad::slice(gates, 1, 0, H));
  Tensor f = ad::sigmoid(ad::slice(gates, 1, H, H));
  Tensor g = ad::tanh(ad::slice(gates, 1, 2 * H, H));
  Tensor o = ad::sigmoid(ad::slice(gates, 1, 3 * H, H));
  Tensor c_new = ad::add(ad::mul(f, c), ad::mul(i, g));
  Tensor h_new = ad::mul(o, ad::tanh(c_new));
  (void)tape;
  return {h_new, c_new};
}

}  // namespace

Vec3 LstmModel::infer(const ImuWindow& window, const Vec3& prev_bias) {
  if (window.samples.rows() != config_.window_len) {
    throw std::invalid_argument("LstmModel::infer: window length " +
                                std::to_string(window.samples.rows()) +
                                " does not match w = " +
                                std::to_string(config_.window_len));
  }
  Tape tape;
  Tensor x = tape.constant(normalizedInput(window.samples, prev_bias, stats_));
  Tensor act = ad::add(ad::matmul(x, proj_w), proj_b);
  std::vector<Tensor> h_new, c_new;
  Tensor in = act;
  for (int l = 0; l < config_.layers; ++l) {
    Tensor h = tape.constant(h_[l]);
    Tensor c = tape.constant(c_[l]);
    auto [hn, cn] = lstmStep(tape, in, h, c, wx[l], wh[l], b[l], config_.hidden);
    h_new.push_back(hn);
    c_new.push_back(cn);
    in = hn;
  }
  Tensor y = ad::add(ad::matmul(in, head_w), head_b);
  const Eigen::MatrixXd yv = y.value();
  for (int l = 0; l < config_.layers; ++l) {
    h_[l] = h_new[l].value();
    c_[l] = c_new[l].value();
  }
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    out(c) = yv(0, c) * stats_.std_out(c) + stats_.mean_out(c);
  }
  return out;
}

Tensor lstmForwardLoss(Tape& tape, LstmModel& model, const LstmBatch& batch) {
  if (batch.x.empty()) throw std::invalid_argument("lstmForwardLoss: empty batch");
  const int H = model.config().hidden;
  const int B = static_cast<int>(batch.x[0].rows());
  const int L = model.config().layers;

  std::vector<Tensor> h(L), c(L);
  for (int l = 0; l < L; ++l) {
    h[l] = tape.constant(Eigen::MatrixXd::Zero(B, H));
    c[l] = tape.constant(Eigen::MatrixXd::Zero(B, H));
  }

  Tensor loss_sum;
  for (std::size_t t = 0; t < batch.x.size(); ++t) {
    Tensor x = tape.constant(batch.x[t]);
    Tensor act = ad::add(ad::matmul(x, model.proj_w), model.proj_b);
    Tensor in = act;
    for (int l = 0; l < L; ++l) {
      auto [hn, cn] =
          lstmStep(tape, in, h[l], c[l], model.wx[l], model.wh[l], model.b[l], H);
      h[l] = hn;
      c[l] = cn;
      in = hn;
    }
    Tensor y = ad::add(ad::matmul(in, model.head_w), model.head_b);
    Tensor y_phys = denormalize(tape, y, model.stats(), B);
    Tensor step_loss = ad::mse(y_phys, tape.constant(batch.y[t]));
    loss_sum = loss_sum.defined() ? ad::add(loss_sum, step_loss) : step_loss;
  }
  return ad::scale(loss_sum, 1.0 / static_cast<double>(batch.x.size()));
}

// ---- Transformer ---------------------------------------------------------------

TransformerModel::TransformerModel(const TransformerConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.embed % config.heads != 0) {
    throw std::invalid_argument("TransformerModel: embed must be divisible by heads");
  }
  Rng rng = subRng(seed, 0x7472616eULL);
  const int d = config.embed;
  const int in_dim = config.window_len * 6 + 3;

  enc_embed_w = ad::makeParam(xavier(in_dim, d, rng), "enc_embed_w");
  enc_embed_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), "enc_embed_b");
  dec_embed_w = ad::makeParam(xavier(3, d, rng), "dec_embed_w");
  dec_embed_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), "dec_embed_b");

  auto make_layer = [&](const std::string& tag, bool decoder) {
    Layer L;
    L.is_decoder = decoder;
    L.wq = ad::makeParam(xavier(d, d, rng), tag + ".wq");
    L.wk = ad::makeParam(xavier(d, d, rng), tag + ".wk");
    L.wv = ad::makeParam(xavier(d, d, rng), tag + ".wv");
    L.wo = ad::makeParam(xavier(d, d, rng), tag + ".wo");
    L.bq = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".bq");
    L.bk = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".bk");
    L.bv = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".bv");
    L.bo = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".bo");
    L.ln1_g = ad::makeParam(Eigen::MatrixXd::Ones(1, d), tag + ".ln1_g");
    L.ln1_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".ln1_b");
    L.ln2_g = ad::makeParam(Eigen::MatrixXd::Ones(1, d), tag + ".ln2_g");
    L.ln2_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".ln2_b");
    L.ff1_w = ad::makeParam(xavier(d, config.ff, rng), tag + ".ff1_w");
    L.ff1_b = ad::makeParam(Eigen::MatrixXd::Zero(1, config.ff), tag + ".ff1_b");
    L.ff2_w = ad::makeParam(xavier(config.ff, d, rng), tag + ".ff2_w");
    L.ff2_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".ff2_b");
    if (decoder) {
      L.cq = ad::makeParam(xavier(d, d, rng), tag + ".cq");
      L.ck = ad::makeParam(xavier(d, d, rng), tag + ".ck");
      L.cv = ad::makeParam(xavier(d, d, rng), tag + ".cv");
      L.co = ad::makeParam(xavier(d, d, rng), tag + ".co");
      L.cbq = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".cbq");
      L.cbk = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".cbk");
      L.cbv = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".cbv");
      L.cbo = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".cbo");
      L.ln3_g = ad::makeParam(Eigen::MatrixXd::Ones(1, d), tag + ".ln3_g");
      L.ln3_b = ad::makeParam(Eigen::MatrixXd::Zero(1, d), tag + ".ln3_b");
    }
    return L;
  };
  for (int l = 0; l < config.enc_layers; ++l) {
    enc_layers_.push_back(make_layer("enc" + std::to_string(l), false));
  }
  for (int l = 0; l < config.dec_layers; ++l) {
    dec_layers_.push_back(make_layer("dec" + std::to_string(l), true));
  }
  head_w = ad::makeParam(xavier(d, 3, rng), "head_w");
  head_b = ad::makeParam(Eigen::MatrixXd::Zero(1, 3), "head_b");

  positional_encoding.setZero(config.history, d);
  for (int pos = 0; pos < config.history; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double div = std::pow(10000.0, static_cast<double>(i) / d);
      positional_encoding(pos, i) = std::sin(pos / div);
      if (i + 1 < d) positional_encoding(pos, i + 1) = std::cos(pos / div);
    }
  }
}

std::vector<Tensor> TransformerModel::parameters() {
  std::vector<Tensor> out{enc_embed_w, enc_embed_b, dec_embed_w, dec_embed_b};
  auto push_layer = [&](Layer& L) {
    for (Tensor* t : {&L.wq, &L.wk, &L.wv, &L.wo, &L.bq, &L.bk, &L.bv, &L.bo,
                      &L.ln1_g, &L.ln1_b, &L.ln2_g, &L.ln2_b, &L.ff1_w, &L.ff1_b,
                      &L.ff2_w, &L.ff2_b}) {
      out.push_back(*t);
    }
    if (L.is_decoder) {
      for (Tensor* t : {&L.cq, &L.ck, &L.cv, &L.co, &L.cbq, &L.cbk, &L.cbv,
                        &L.cbo, &L.ln3_g, &L.ln3_b}) {
        out.push_back(*t);
      }
    }
  };
  for (auto& L : enc_layers_) push_layer(L);
  for (auto& L : dec_layers_) push_layer(L);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

namespace {

Tensor multiHeadAttention(Tape& tape, const Tensor& queries_src,
                          const Tensor& memory_src, const Tensor& mask,
                          const Tensor& wq, const Tensor& bq, const Tensor& wk,
                          const Tensor& bk, const Tensor& wv, const Tensor& bv,
                          const Tensor& wo, const Tensor& bo, int heads,
                          AttentionDiag* diag) {
  const int d = static_cast<int>(wq.cols());
  const int dh = d / heads;
  Tensor Q = ad::add(ad::matmul(queries_src, wq), bq);
  Tensor K = ad::add(ad::matmul(memory_src, wk), bk);
  Tensor V = ad::add(ad::matmul(memory_src, wv), bv);
  std::vector<Tensor> head_outs;
  for (int h = 0; h < heads; ++h) {
    Tensor Qh = ad::slice(Q, 1, h * dh, dh);
    Tensor Kh = ad::slice(K, 1, h * dh, dh);
    Tensor Vh = ad::slice(V, 1, h * dh, dh);
    Tensor scores = ad::scale(ad::matmul(Qh, Kh, false, true), 1.0 / std::sqrt(dh));
    scores = ad::add(scores, mask);
    Tensor A = ad::softmax(scores, 1);
    if (diag) {
      const Eigen::VectorXd sums = A.value().rowwise().sum();
      diag->row_sum_min = std::min(diag->row_sum_min, sums.minCoeff());
      diag->row_sum_max = std::max(diag->row_sum_max, sums.maxCoeff());
    }
    head_outs.push_back(ad::matmul(A, Vh));
  }
  Tensor O = heads == 1 ? head_outs[0] : ad::concat(head_outs, 1);
  (void)tape;
  return ad::add(ad::matmul(O, wo), bo);
}

Tensor feedForward(const Tensor& x, const TransformerModel::Layer& L) {
  Tensor a = ad::relu(ad::add(ad::matmul(x, L.ff1_w), L.ff1_b));
  return ad::add(ad::matmul(a, L.ff2_w), L.ff2_b);
}

}  // namespace

Tensor TransformerModel::forward(Tape& tape, const Eigen::MatrixXd& enc_tokens,
                                 const Eigen::MatrixXd& dec_tokens,
                                 AttentionDiag* diag) {
  const int T = static_cast<int>(enc_tokens.rows());
  if (T == 0) throw std::invalid_argument("TransformerModel::forward: empty history");
  if (T > config_.history) {
    throw std::invalid_argument("TransformerModel::forward: history exceeds capacity l");
  }
  if (dec_tokens.rows() != T) {
    throw std::invalid_argument("TransformerModel::forward: encoder/decoder length mismatch");
  }

  Eigen::MatrixXd mask_m = Eigen::MatrixXd::Zero(T, T);
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) mask_m(i, j) = -1e9;
  Tensor mask = tape.constant(mask_m, "causal_mask");
  Tensor pe = tape.constant(positional_encoding.topRows(T), "pe");

  Tensor X = ad::add(ad::add(ad::matmul(tape.constant(enc_tokens), enc_embed_w),
                             enc_embed_b),
                     pe);
  for (auto& L : enc_layers_) {
    Tensor attn = multiHeadAttention(tape, X, X, mask, L.wq, L.bq, L.wk, L.bk,
                                     L.wv, L.bv, L.wo, L.bo, config_.heads, diag);
    X = ad::layerNorm(ad::add(X, attn), L.ln1_g, L.ln1_b);
    Tensor ff = feedForward(X, L);
    X = ad::layerNorm(ad::add(X, ff), L.ln2_g, L.ln2_b);
  }

  Tensor D = ad::add(ad::add(ad::matmul(tape.constant(dec_tokens), dec_embed_w),
                             dec_embed_b),
                     pe);
  for (auto& L : dec_layers_) {
    Tensor self_attn = multiHeadAttention(tape, D, D, mask, L.wq, L.bq, L.wk,
                                          L.bk, L.wv, L.bv, L.wo, L.bo,
                                          config_.heads, diag);
    D = ad::layerNorm(ad::add(D, self_attn), L.ln1_g, L.ln1_b);
    Tensor cross = multiHeadAttention(tape, D, X, mask, L.cq, L.cbq, L.ck, L.cbk,
                                      L.cv, L.cbv, L.co, L.cbo, config_.heads, diag);
    D = ad::layerNorm(ad::add(D, cross), L.ln3_g, L.ln3_b);
    Tensor ff = feedForward(D, L);
    D = ad::layerNorm(ad::add(D, ff), L.ln2_g, L.ln2_b);
  }
  return ad::add(ad::matmul(D, head_w), head_b);  // T x 3, normalized
}

Vec3 TransformerModel::infer(const std::vector<ImuWindow>& history,
                             const std::vector<Vec3>& bias_history,
                             AttentionDiag* diag) {
  if (history.empty()) {
    throw std::invalid_argument("TransformerModel::infer: empty history");
  }
  if (history.size() != bias_history.size()) {
    throw std::invalid_argument("TransformerModel::infer: history length mismatch");
  }
  const int T = static_cast<int>(history.size());
  const int in_dim = config_.window_len * 6 + 3;
  Eigen::MatrixXd enc(T, in_dim), dec(T, 3);
  for (int t = 0; t < T; ++t) {
    enc.row(t) = normalizedInput(history[t].samples, bias_history[t], stats_);
    dec.row(t) = enc.row(t).tail(3);
  }
  Tape tape;
  Tensor preds = forward(tape, enc, dec, diag);
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    out(c) = preds.value()(T - 1, c) * stats_.std_out(c) + stats_.mean_out(c);
  }
  return out;
}

Tensor transformerForwardLoss(Tape& tape, TransformerModel& model,
                              const std::vector<const BiasSequence*>& batch) {
  if (batch.empty()) throw std::invalid_argument("transformerForwardLoss: empty batch");
  Tensor loss_sum;
  for (const BiasSequence* seq : batch) {
    const int T = static_cast<int>(seq->steps.size());
    const int in_dim = model.config().window_len * 6 + 3;
    Eigen::MatrixXd enc(T, in_dim), dec(T, 3), targets(T, 3);
    for (int t = 0; t < T; ++t) {
      enc.row(t) =
          normalizedInput(seq->steps[t].window, seq->steps[t].prev_bias, model.stats());
      dec.row(t) = enc.row(t).tail(3);
      targets.row(t) = seq->steps[t].target.transpose();
    }
    Tensor preds = model.forward(tape, enc, dec, nullptr);
    Tensor preds_phys = denormalize(tape, preds, model.stats(), T);
    Tensor l = ad::mse(preds_phys, tape.constant(targets));
    loss_sum = loss_sum.defined() ? ad::add(loss_sum, l) : l;
  }
  return ad::scale(loss_sum, 1.0 / static_cast<double>(batch.size()));
}

// ---- training -----------------------------------------------------------------

namespace {

struct Chunk {
  const BiasSequence* seq;
  int start;
  int len;
};

std::vector<Chunk> makeChunks(const std::vector<BiasSequence>& seqs, int chunk_len) {
  std::vector<Chunk> chunks;
  for (const auto& s : seqs) {
    const int n = static_cast<int>(s.steps.size());
    for (int start = 0; start + chunk_len <= n; start += chunk_len) {
      chunks.push_back({&s, start, chunk_len});
    }
  }
  return chunks;
}

std::vector<const BiasStep*> chunkSteps(const std::vector<Chunk>& chunks) {
  std::vector<const BiasStep*> out;
  for (const auto& c : chunks) {
    for (int i = 0; i < c.len; ++i) out.push_back(&c.seq->steps[c.start + i]);
  }
  return out;
}

void shuffleChunks(std::vector<Chunk>& chunks, Rng& rng) {
  for (int i = static_cast<int>(chunks.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.integer() % (i + 1));
    std::swap(chunks[i], chunks[j]);
  }
}

LstmBatch buildLstmBatch(const std::vector<Chunk>& chunks, std::size_t first,
                         std::size_t count, const NormStats& st) {
  const int T = chunks[first].len;
  const int w = static_cast<int>(chunks[first].seq->steps[0].window.rows());
  LstmBatch batch;
  batch.x.assign(T, Eigen::MatrixXd(count, w * 6 + 3));
  batch.y.assign(T, Eigen::MatrixXd(count, 3));
  for (std::size_t b = 0; b < count; ++b) {
    const Chunk& c = chunks[first + b];
    for (int t = 0; t < T; ++t) {
      const BiasStep& s = c.seq->steps[c.start + t];
      batch.x[t].row(b) = normalizedInput(s.window, s.prev_bias, st);
      batch.y[t].row(b) = s.target.transpose();
    }
  }
  return batch;
}

std::vector<Eigen::MatrixXd> snapshotParams(const std::vector<Tensor>& params) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

void restoreParams(const std::vector<Tensor>& params,
                   const std::vector<Eigen::MatrixXd>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = snap[i];
}

}  // namespace

TrainCurves trainLstm(LstmModel& model, const std::vector<BiasSequence>& sequences,
                      const TrainConfig& config) {
  for (const auto& s : sequences) {
    if (s.steps.empty()) throw std::invalid_argument("trainLstm: empty sequence");
  }
  auto chunks = makeChunks(sequences, config.chunk_len);
  if (chunks.size() < 2) {
    throw std::invalid_argument("trainLstm: dataset too small for the chunk length");
  }
  Rng rng = subRng(config.seed, 0x6c74726eULL);
  shuffleChunks(chunks, rng);
  const std::size_t n_train =
      std::max<std::size_t>(1, static_cast<std::size_t>(chunks.size() * config.split));
  std::vector<Chunk> train(chunks.begin(), chunks.begin() + n_train);
  std::vector<Chunk> val(chunks.begin() + n_train, chunks.end());
  if (val.empty()) {
    val.push_back(train.back());
    train.pop_back();
  }

  model.stats() = computeStats(chunkSteps(train));
  auto params = model.parameters();
  ad::AdamState adam;
  TrainCurves curves;
  double best_val = 1e300;
  std::vector<Eigen::MatrixXd> best_params = snapshotParams(params);

  const std::size_t batch_size = std::max(1, config.batch);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffleChunks(train, rng);
    double train_loss = 0.0;
    int n_batches = 0;
    for (std::size_t i = 0; i < train.size(); i += batch_size) {
      const std::size_t count = std::min(batch_size, train.size() - i);
      LstmBatch batch = buildLstmBatch(train, i, count, model.stats());
      Tape tape;
      Tensor loss = lstmForwardLoss(tape, model, batch);
      ad::zeroGrad(params);
      tape.backward(loss);
      ad::adamStep(params, adam, config.lr);
      train_loss += loss.value()(0, 0);
      ++n_batches;
    }
    train_loss /= std::max(1, n_batches);

    LstmBatch val_batch = buildLstmBatch(val, 0, val.size(), model.stats());
    Tape val_tape;
    const double val_loss =
        lstmForwardLoss(val_tape, model, val_batch).value()(0, 0);

    curves.train_loss.push_back(train_loss);
    curves.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = snapshotParams(params);
      curves.best_epoch = epoch;
    }
  }
  restoreParams(params, best_params);
  return curves;
}

TrainCurves trainTransformer(TransformerModel& model,
                             const std::vector<BiasSequence>& sequences,
                             const TrainConfig& config) {
  const int chunk_len = std::min(config.chunk_len, model.config().history);
  // chop into fixed-length token subsequences
  std::vector<BiasSequence> subseqs;
  for (const auto& s : sequences) {
    const int n = static_cast<int>(s.steps.size());
    for (int start = 0; start + chunk_len <= n; start += chunk_len) {
      BiasSequence sub;
      sub.steps.assign(s.steps.begin() + start, s.steps.begin() + start + chunk_len);
      subseqs.push_back(std::move(sub));
    }
  }
  if (subseqs.size() < 2) {
    throw std::invalid_argument("trainTransformer: dataset too small");
  }

  Rng rng = subRng(config.seed, 0x74726e66ULL);
  for (int i = static_cast<int>(subseqs.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.integer() % (i + 1));
    std::swap(subseqs[i], subseqs[j]);
  }
  const std::size_t n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(subseqs.size() * config.split));
  std::vector<const BiasSequence*> train, val;
  for (std::size_t i = 0; i < subseqs.size(); ++i) {
    (i < n_train ? train : val).push_back(&subseqs[i]);
  }
  if (val.empty()) {
    val.push_back(train.back());
    train.pop_back();
  }

  std::vector<const BiasStep*> train_steps;
  for (const auto* s : train)
    for (const auto& st : s->steps) train_steps.push_back(&st);
  model.stats() = computeStats(train_steps);

  auto params = model.parameters();
  ad::AdamState adam;
  TrainCurves curves;
  double best_val = 1e300;
  std::vector<Eigen::MatrixXd> best_params = snapshotParams(params);

  const std::size_t batch_size = std::max(1, config.batch);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = static_cast<int>(train.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.integer() % (i + 1));
      std::swap(train[i], train[j]);
    }
    double train_loss = 0.0;
    int n_batches = 0;
    for (std::size_t i = 0; i < train.size(); i += batch_size) {
      const std::size_t count = std::min(batch_size, train.size() - i);
      std::vector<const BiasSequence*> batch(train.begin() + i,
                                             train.begin() + i + count);
      Tape tape;
      Tensor loss = transformerForwardLoss(tape, model, batch);
      ad::zeroGrad(params);
      tape.backward(loss);
      ad::adamStep(params, adam, config.lr);
      train_loss += loss.value()(0, 0);
      ++n_batches;
    }
    train_loss /= std::max(1, n_batches);

    Tape val_tape;
    const double val_loss =
        transformerForwardLoss(val_tape, model, val).value()(0, 0);
    curves.train_loss.push_back(train_loss);
    curves.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = snapshotParams(params);
      curves.best_epoch = epoch;
    }
  }
  restoreParams(params, best_params);
  return curves;
}

void writeTrainCurvesCsv(const TrainCurves& curves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training curves: " + path);
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < curves.train_loss.size(); ++i) {
    out << i << ',' << curves.train_loss[i] << ',' << curves.val_loss[i] << '\n';
  }
}

PredictionEval evalLstm(LstmModel& model, const std::vector<BiasSequence>& sequences) {
  PredictionEval eval;
  long n = 0;
  for (const auto& seq : sequences) {
    model.resetState();
    for (const auto& step : seq.steps) {
      ImuWindow win;
      win.samples = step.window;
      const Vec3 pred = model.infer(win, step.prev_bias);
      eval.model_mse += (pred - step.target).squaredNorm() / 3.0;
      eval.hold_last_mse += (step.prev_bias - step.target).squaredNorm() / 3.0;
      ++n;
    }
  }
  if (n > 0) {
    eval.model_mse /= n;
    eval.hold_last_mse /= n;
  }
  return eval;
}

PredictionEval evalTransformer(TransformerModel& model,
                               const std::vector<BiasSequence>& sequences,
                               int max_history) {
  PredictionEval eval;
  long n = 0;
  const int cap = std::min(max_history, model.config().history);
  const int in_dim = model.config().window_len * 6 + 3;
  for (const auto& seq : sequences) {
    const int total = static_cast<int>(seq.steps.size());
    for (int start = 0; start < total; start += cap) {
      const int T = std::min(cap, total - start);
      Eigen::MatrixXd enc(T, in_dim), dec(T, 3);
      for (int t = 0; t < T; ++t) {
        const BiasStep& s = seq.steps[start + t];
        enc.row(t) = normalizedInput(s.window, s.prev_bias, model.stats());
        dec.row(t) = enc.row(t).tail(3);
      }
      Tape tape;
      Tensor preds = model.forward(tape, enc, dec, nullptr);
      for (int t = 0; t < T; ++t) {
        const BiasStep& s = seq.steps[start + t];
        Vec3 pred;
        for (int c = 0; c < 3; ++c) {
          pred(c) = preds.value()(t, c) * model.stats().std_out(c) +
                    model.stats().mean_out(c);
        }
        eval.model_mse += (pred - s.target).squaredNorm() / 3.0;
        eval.hold_last_mse += (s.prev_bias - s.target).squaredNorm() / 3.0;
        ++n;
      }
    }
  }
  if (n > 0) {
    eval.model_mse /= n;
    eval.hold_last_mse /= n;
  }
  return eval;
}

// ---- checkpoints ------------------------------------------------------------

using nlohmann::json;

namespace {

json tensorsToJson(const std::vector<Tensor>& params) {
  json j = json::object();
  for (const auto& p : params) {
    json rows = json::array();
    for (long r = 0; r < p.rows(); ++r) {
      json row = json::array();
      for (long c = 0; c < p.cols(); ++c) row.push_back(p.value()(r, c));
      rows.push_back(std::move(row));
    }
    j[p.name()] = {{"shape", {p.rows(), p.cols()}}, {"data", std::move(rows)}};
  }
  return j;
}

void tensorsFromJson(const json& j, const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!j.contains(p.name())) {
      throw std::runtime_error("checkpoint missing tensor: " + p.name());
    }
    const auto& entry = j.at(p.name());
    const auto& shape = entry.at("shape");
    if (shape.at(0).get<long>() != p.rows() || shape.at(1).get<long>() != p.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for tensor: " + p.name());
    }
    const auto& data = entry.at("data");
    for (long r = 0; r < p.rows(); ++r) {
      for (long c = 0; c < p.cols(); ++c) {
        p.value()(r, c) = data.at(r).at(c).get<double>();
      }
    }
  }
}

json statsToJson(const NormStats& st) {
  auto vec = [](const Eigen::VectorXd& v) {
    json a = json::array();
    for (long i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
  };
  return {{"mean_in", vec(st.mean_in)},
          {"std_in", vec(st.std_in)},
          {"mean_out", vec(st.mean_out)},
          {"std_out", vec(st.std_out)}};
}

NormStats statsFromJson(const json& j) {
  auto vec = [](const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v(i) = a.at(i).get<double>();
    return v;
  };
  NormStats st;
  st.mean_in = vec(j.at("mean_in"));
  st.std_in = vec(j.at("std_in"));
  st.mean_out = vec(j.at("mean_out"));
  st.std_out = vec(j.at("std_out"));
  return st;
}

void writeJsonFile(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << j.dump() << "\n";
}

json readJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace

void saveLstmCheckpoint(const LstmPair& pair, std::uint64_t imu_seed,
                        const std::string& path) {
  json j;
  j["format"] = "vibe-checkpoint";
  j["version"] = 1;
  j["arch"] = "lstm";
  j["imu_seed"] = imu_seed;
  const auto& c = pair.accel.config();
  j["config"] = {{"hidden", c.hidden},
                 {"layers", c.layers},
                 {"window_len", c.window_len},
                 {"window_span", c.window_span},
                 {"infer_period", c.infer_period}};
  j["accel"] = tensorsToJson(const_cast<LstmPair&>(pair).accel.parameters());
  j["gyro"] = tensorsToJson(const_cast<LstmPair&>(pair).gyro.parameters());
  writeJsonFile(j, path);
  json stats = {{"accel", statsToJson(pair.accel.stats())},
                {"gyro", statsToJson(pair.gyro.stats())}};
  writeJsonFile(stats, path + ".stats.json");
}

LstmPair loadLstmCheckpoint(const std::string& path, std::uint64_t* imu_seed) {
  const json j = readJsonFile(path);
  if (j.value("arch", std::string()) != "lstm") {
    throw std::runtime_error("checkpoint is not an lstm model: " + path);
  }
  LstmConfig c;
  c.hidden = j.at("config").at("hidden").get<int>();
  c.layers = j.at("config").at("layers").get<int>();
  c.window_len = j.at("config").at("window_len").get<int>();
  c.window_span = j.at("config").at("window_span").get<double>();
  c.infer_period = j.at("config").at("infer_period").get<double>();
  if (imu_seed) *imu_seed = j.value("imu_seed", 0ULL);
  LstmPair pair{LstmModel(c, 0), LstmModel(c, 1)};
  tensorsFromJson(j.at("accel"), pair.accel.parameters());
  tensorsFromJson(j.at("gyro"), pair.gyro.parameters());
  const json stats = readJsonFile(path + ".stats.json");
  pair.accel.stats() = statsFromJson(stats.at("accel"));
  pair.gyro.stats() = statsFromJson(stats.at("gyro"));
  return pair;
}

void saveTransformerCheckpoint(const TransformerPair& pair, std::uint64_t imu_seed,
                               const std::string& path) {
  json j;
  j["format"] = "vibe-checkpoint";
  j["version"] = 1;
  j["arch"] = "transformer";
  j["imu_seed"] = imu_seed;
  const auto& c = pair.accel.config();
  j["config"] = {{"embed", c.embed},         {"heads", c.heads},
                 {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
                 {"ff", c.ff},               {"history", c.history},
                 {"window_len", c.window_len}, {"window_span", c.window_span},
                 {"infer_period", c.infer_period}};
  j["accel"] = tensorsToJson(const_cast<TransformerPair&>(pair).accel.parameters());
  j["gyro"] = tensorsToJson(const_cast<TransformerPair&>(pair).gyro.parameters());
  writeJsonFile(j, path);
  json stats = {{"accel", statsToJson(pair.accel.stats())},
                {"gyro", statsToJson(pair.gyro.stats())}};
  writeJsonFile(stats, path + ".stats.json");
}

TransformerPair loadTransformerCheckpoint(const std::string& path,
                                          std::uint64_t* imu_seed) {
  const json j = readJsonFile(path);
  if (j.value("arch", std::string()) != "transformer") {
    throw std::runtime_error("checkpoint is not a transformer model: " + path);
  }
  TransformerConfig c;
  c.embed = j.at("config").at("embed").get<int>();
  c.heads = j.at("config").at("heads").get<int>();
  c.enc_layers = j.at("config").at("enc_layers").get<int>();
  c.dec_layers = j.at("config").at("dec_layers").get<int>();
  c.ff = j.at("config").at("ff").get<int>();
  c.history = j.at("config").at("history").get<int>();
  c.window_len = j.at("config").at("window_len").get<int>();
  c.window_span = j.at("config").at("window_span").get<double>();
  c.infer_period = j.at("config").at("infer_period").get<double>();
  if (imu_seed) *imu_seed = j.value("imu_seed", 0ULL);
  TransformerPair pair{TransformerModel(c, 0), TransformerModel(c, 1)};
  tensorsFromJson(j.at("accel"), pair.accel.parameters());
  tensorsFromJson(j.at("gyro"), pair.gyro.parameters());
  const json stats = readJsonFile(path + ".stats.json");
  pair.accel.stats() = statsFromJson(stats.at("accel"));
  pair.gyro.stats() = statsFromJson(stats.at("gyro"));
  return pair;
}

// ---- predictors ---------------------------------------------------------------

void LstmPredictor::reset() {
  pair_->accel.resetState();
  pair_->gyro.resetState();
}

BiasEstimate LstmPredictor::infer(const ImuWindow& window, const Vec3& prev_ba,
                                  const Vec3& prev_bg, double t) {
  BiasEstimate est;
  est.t = t;
  est.accel_bias_hat = pair_->accel.infer(window, prev_ba);
  est.gyro_bias_hat = pair_->gyro.infer(window, prev_bg);
  est.source = BiasEstimate::Source::kNetwork;
  return est;
}

void TransformerPredictor::reset() {
  windows_.clear();
  ba_hist_.clear();
  bg_hist_.clear();
}

BiasEstimate TransformerPredictor::infer(const ImuWindow& window, const Vec3& prev_ba,
                                         const Vec3& prev_bg, double t) {
  const int cap = pair_->accel.config().history;
  windows_.push_back(window);
  ba_hist_.push_back(prev_ba);
  bg_hist_.push_back(prev_bg);
  while (static_cast<int>(windows_.size()) > cap) {
    windows_.pop_front();
    ba_hist_.pop_front();
    bg_hist_.pop_front();
  }
  const std::vector<ImuWindow> wins(windows_.begin(), windows_.end());
  BiasEstimate est;
  est.t = t;
  est.accel_bias_hat =
      pair_->accel.infer(wins, {ba_hist_.begin(), ba_hist_.end()}, nullptr);
  est.gyro_bias_hat =
      pair_->gyro.infer(wins, {bg_hist_.begin(), bg_hist_.end()}, nullptr);
  est.source = BiasEstimate::Source::kNetwork;
  return est;
}

}  // namespace vibe
