#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "vibe/autodiff.hpp"
#include "vibe/simulator.hpp"

using namespace vibe;
using ad::Tensor;
using ad::Tape;

namespace {

Eigen::MatrixXd randomMat(int r, int c, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.gaussian();
  return m;
}

// relative error with an absolute floor, used by every gradcheck
double relErr(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// central finite differences of a scalar loss over every parameter entry
double maxGradError(const std::vector<Tensor>& params,
                    const std::function<double()>& loss_value,
                    const std::function<void()>& run_backward) {
  ad::zeroGrad(params);
  run_backward();
  double worst = 0.0;
  const double eps = 1e-5;
  for (const auto& p : params) {
    for (int r = 0; r < p.rows(); ++r) {
      for (int c = 0; c < p.cols(); ++c) {
        const double orig = p.value()(r, c);
        p.value()(r, c) = orig + eps;
        const double up = loss_value();
        p.value()(r, c) = orig - eps;
        const double dn = loss_value();
        p.value()(r, c) = orig;
        const double fd = (up - dn) / (2.0 * eps);
        worst = std::max(worst, relErr(p.grad()(r, c), fd));
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul values vs triple-loop oracle") {
  Rng rng(1);
  const Eigen::MatrixXd A = randomMat(2, 3, rng), B = randomMat(3, 2, rng);
  Tape tape;
  Tensor c = ad::matmul(tape.constant(A), tape.constant(B));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 3; ++k) expected(i, j) += A(i, k) * B(k, j);
  CHECK((c.value() - expected).norm() < 1e-13);
}

TEST_CASE("shape errors name both shapes") {
  Tape tape;
  Tensor a = tape.constant(Eigen::MatrixXd::Zero(2, 3));
  Tensor b = tape.constant(Eigen::MatrixXd::Zero(4, 2));
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), "matmul: shape mismatch (2x3) vs (4x2)",
                       std::invalid_argument);
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::mul(a, b), std::invalid_argument);
}

TEST_CASE("softmax of zeros is uniform and rows sum to one") {
  Tape tape;
  Tensor s = ad::softmax(tape.constant(Eigen::MatrixXd::Zero(1, 3)), 1);
  CHECK(s.value()(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(s.value()(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(s.value()(0, 2) == doctest::Approx(1.0 / 3.0));

  Rng rng(2);
  Tensor r = ad::softmax(tape.constant(randomMat(40, 17, rng, 3.0)), 1);
  for (int i = 0; i < 40; ++i) {
    CHECK(std::abs(r.value().row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("mse of identical tensors is zero") {
  Rng rng(3);
  const Eigen::MatrixXd b = randomMat(4, 3, rng);
  Tape tape;
  CHECK(ad::mse(tape.constant(b), tape.constant(b)).value()(0, 0) == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Tensor x = tape.constant(Eigen::MatrixXd::Zero(2, 2));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("d tanh / dx at 0 is 1") {
  Tensor x = ad::makeParam(Eigen::MatrixXd::Zero(1, 1));
  Tape tape;
  Tensor y = ad::tanh(ad::add(x, tape.constant(Eigen::MatrixXd::Zero(1, 1))));
  Tensor loss = ad::mse(y, tape.constant(Eigen::MatrixXd::Constant(1, 1, -1.0)));
  // loss = (tanh(x) + 1)^2 -> dloss/dx = 2(tanh+1)(1-tanh^2) = 2 at x=0
  tape.backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("gradient of mse(Wx, y) wrt W matches finite differences") {
  Rng rng(4);
  Tensor W = ad::makeParam(randomMat(3, 4, rng), "W");
  const Eigen::MatrixXd X = randomMat(5, 3, rng);
  const Eigen::MatrixXd Y = randomMat(5, 4, rng);
  auto value = [&]() {
    Tape t;
    return ad::mse(ad::matmul(t.constant(X), W), t.constant(Y)).value()(0, 0);
  };
  Tape tape;
  Tensor loss = ad::mse(ad::matmul(tape.constant(X), W), tape.constant(Y));
  CHECK(maxGradError({W}, value, [&]() { tape.backward(loss); }) < 1e-6);
}

TEST_CASE("gradcheck of every differentiable op") {
  Rng rng(5);
  // a small composite graph touching every op
  Tensor W1 = ad::makeParam(randomMat(6, 8, rng, 0.5), "W1");
  Tensor b1 = ad::makeParam(randomMat(1, 8, rng, 0.2), "b1");
  Tensor W2 = ad::makeParam(randomMat(4, 6, rng, 0.5), "W2");
  Tensor gain = ad::makeParam(Eigen::MatrixXd::Ones(1, 8), "gain");
  Tensor beta = ad::makeParam(randomMat(1, 8, rng, 0.1), "beta");
  const Eigen::MatrixXd X = randomMat(5, 6, rng);
  const Eigen::MatrixXd Y = randomMat(5, 8, rng, 0.3);

  auto build = [&](Tape& t) {
    Tensor x = t.constant(X);
    Tensor h = ad::add(ad::matmul(x, W1), b1);              // matmul + bias add
    Tensor s = ad::sigmoid(ad::slice(h, 1, 0, 4));
    Tensor u = ad::tanh(ad::slice(h, 1, 4, 4));
    Tensor cat = ad::concat({s, u}, 1);
    Tensor r = ad::relu(ad::sub(cat, ad::scale(h, 0.3)));
    Tensor m = ad::mul(r, ad::softmax(h, 1));
    Tensor ln = ad::layerNorm(m, gain, beta);
    Tensor z = ad::matmul(W2, ln, true, false);             // transposed matmul
    Tensor z2 = ad::matmul(z, t.constant(randomMat(8, 8, Rng(9))), false, true);
    return ad::mse(ad::add(ln, ad::matmul(z2, t.constant(Eigen::MatrixXd::Identity(8, 8))).ptr() ? ad::scale(z2, 0.0) : z2), t.constant(Y));
  };

  std::vector<Tensor> params{W1, b1, W2, gain, beta};
  auto value = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  Tape tape;
  Tensor loss = build(tape);
  CHECK(maxGradError(params, value, [&]() { tape.backward(loss); }) < 1e-5);
}

TEST_CASE("per-op finite difference property over random tensors") {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int r = 2 + static_cast<int>(rng.integer() % 3);
    const int c = 2 + static_cast<int>(rng.integer() % 3);
    Tensor P = ad::makeParam(randomMat(r, c, rng, 0.8), "P");
    const int which = trial % 7;
    auto build = [&](Tape& t) -> Tensor {
      Tensor x = ad::add(P, t.constant(Eigen::MatrixXd::Zero(r, c)));
      Tensor y;
      switch (which) {
        case 0: y = ad::sigmoid(x); break;
        case 1: y = ad::tanh(x); break;
        case 2: y = ad::relu(x); break;
        case 3: y = ad::softmax(x, 1); break;
        case 4: y = ad::softmax(x, 0); break;
        case 5: y = ad::mul(x, x); break;
        default: y = ad::scale(x, 1.7); break;
      }
      return ad::mse(y, t.constant(randomMat(r, c, Rng(trial), 0.5)));
    };
    auto value = [&]() {
      Tape t;
      return build(t).value()(0, 0);
    };
    Tape tape;
    Tensor loss = build(tape);
    ad::zeroGrad({P});
    tape.backward(loss);
    worst = std::max(worst, maxGradError({P}, value, [&]() {}));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient of a 2-layer LSTM step vs finite differences") {
  Rng rng(8);
  const int H = 5, in = 4;
  std::vector<Tensor> params;
  Tensor Wx0 = ad::makeParam(randomMat(in, 4 * H, rng, 0.5), "Wx0");
  Tensor Wh0 = ad::makeParam(randomMat(H, 4 * H, rng, 0.5), "Wh0");
  Tensor b0 = ad::makeParam(randomMat(1, 4 * H, rng, 0.2), "b0");
  Tensor Wx1 = ad::makeParam(randomMat(H, 4 * H, rng, 0.5), "Wx1");
  Tensor Wh1 = ad::makeParam(randomMat(H, 4 * H, rng, 0.5), "Wh1");
  Tensor b1 = ad::makeParam(randomMat(1, 4 * H, rng, 0.2), "b1");
  params = {Wx0, Wh0, b0, Wx1, Wh1, b1};

  const Eigen::MatrixXd X = randomMat(3, in, rng);
  const Eigen::MatrixXd Y = randomMat(3, H, rng, 0.4);

  auto lstm_layer = [&](Tape& t, Tensor x, Tensor h, Tensor c, Tensor Wx,
                        Tensor Wh, Tensor bias) {
    Tensor gates = ad::add(ad::add(ad::matmul(x, Wx), ad::matmul(h, Wh)), bias);
    Tensor i = ad::sigmoid(ad::slice(gates, 1, 0, H));
    Tensor f = ad::sigmoid(ad::slice(gates, 1, H, H));
    Tensor g = ad::tanh(ad::slice(gates, 1, 2 * H, H));
    Tensor o = ad::sigmoid(ad::slice(gates, 1, 3 * H, H));
    Tensor cn = ad::add(ad::mul(f, c), ad::mul(i, g));
    return ad::mul(o, ad::tanh(cn));
  };
  auto build = [&](Tape& t) {
    Tensor h0 = t.constant(Eigen::MatrixXd::Zero(3, H));
    Tensor c0 = t.constant(Eigen::MatrixXd::Zero(3, H));
    Tensor h1 = lstm_layer(t, t.constant(X), h0, c0, Wx0, Wh0, b0);
    Tensor h2 = lstm_layer(t, h1, h0, c0, Wx1, Wh1, b1);
    return ad::mse(h2, t.constant(Y));
  };
  auto value = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  Tape tape;
  Tensor loss = build(tape);
  CHECK(maxGradError(params, value, [&]() { tape.backward(loss); }) < 1e-5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = ad::makeParam(Eigen::MatrixXd::Constant(2, 2, 3.0));
  ad::AdamState state;
  ad::zeroGrad({p});
  ad::adamStep({p}, state, 1e-3);
  CHECK((p.value().array() == 3.0).all());
}

TEST_CASE("adam single step matches the hand-computed update") {
  // one scalar parameter, gradient g: m = (1-b1) g, v = (1-b2) g^2,
  // mhat = g, vhat = g^2 -> step = lr * g / (|g| + eps)
  Tensor p = ad::makeParam(Eigen::MatrixXd::Constant(1, 1, 0.7));
  p.grad()(0, 0) = 2.5;
  ad::AdamState state;
  ad::adamStep({p}, state, 1e-5);
  const double expected = 0.7 - 1e-5 * 2.5 / (std::sqrt(2.5 * 2.5) + 1e-8);
  CHECK(p.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam descends x^2 monotonically") {
  Tensor x = ad::makeParam(Eigen::MatrixXd::Constant(1, 1, 1.0));
  ad::AdamState state;
  double prev = 1.0;
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Tensor loss = ad::mse(ad::add(x, tape.constant(Eigen::MatrixXd::Zero(1, 1))),
                          tape.constant(Eigen::MatrixXd::Zero(1, 1)));
    ad::zeroGrad({x});
    tape.backward(loss);
    ad::adamStep({x}, state, 1e-2);
    const double f = x.value()(0, 0) * x.value()(0, 0);
    CHECK(f <= prev + 1e-12);
    prev = f;
  }
}

TEST_CASE("concat and slice round trip with gradients flowing") {
  Rng rng(10);
  Tensor A = ad::makeParam(randomMat(3, 2, rng), "A");
  Tensor B = ad::makeParam(randomMat(3, 4, rng), "B");
  Tape tape;
  Tensor cat = ad::concat({A, B}, 1);
  CHECK((ad::slice(cat, 1, 0, 2).value() - A.value()).norm() == 0.0);
  CHECK((ad::slice(cat, 1, 2, 4).value() - B.value()).norm() == 0.0);
  Tensor loss = ad::mse(cat, tape.constant(Eigen::MatrixXd::Zero(3, 6)));
  ad::zeroGrad({A, B});
  tape.backward(loss);
  CHECK(A.grad().norm() > 0.0);
  CHECK(B.grad().norm() > 0.0);
}
