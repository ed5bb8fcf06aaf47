#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vibe::ad {

class Tape;

/// A dense 2-D tensor node. Values and gradients are 64-bit floats.
/// Leaf nodes (parameters, constants) have no tape; op results are
/// recorded on the tape that owns them.
struct TensorNode {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  std::string name;

  int rows() const { return static_cast<int>(value.rows()); }
  int cols() const { return static_cast<int>(value.cols()); }
  void ensureGrad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad.setZero(value.rows(), value.cols());
    }
  }
};

/// Cheap shared handle to a TensorNode.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  TensorNode* node() const { return n_.get(); }
  const std::shared_ptr<TensorNode>& ptr() const { return n_; }

  Eigen::MatrixXd& value() const { return n_->value; }
  Eigen::MatrixXd& grad() const { return n_->grad; }
  int rows() const { return n_->rows(); }
  int cols() const { return n_->cols(); }
  bool requiresGrad() const { return n_->requires_grad; }
  const std::string& name() const { return n_->name; }

 private:
  std::shared_ptr<TensorNode> n_;
};

/// Records operations in execution order (define-by-run). Single-threaded;
/// independent tapes may run in parallel.
class Tape {
 public:
  /// Constant input living on this tape; never receives gradient.
  Tensor constant(const Eigen::MatrixXd& v, std::string name = "");

  /// Records an op result node.
  Tensor record(Eigen::MatrixXd value, std::vector<Tensor> parents,
                std::function<void(TensorNode&)> backward_fn);

  /// Reverse pass seeding d(loss)/d(loss) = 1. Loss must be 1x1.
  /// Gradients accumulate into every parameter reachable from the loss.
  void backward(const Tensor& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<TensorNode>> nodes_;
};

/// Trainable leaf tensor (no tape, persistent gradient buffer).
Tensor makeParam(const Eigen::MatrixXd& v, std::string name = "");

/// Non-trainable leaf tensor without a tape (e.g. carried LSTM state).
Tensor makeLeaf(const Eigen::MatrixXd& v, std::string name = "");

void zeroGrad(const std::vector<Tensor>& params);

// ---- forward ops ------------------------------------------------------

/// C = op(A) * op(B) with optional transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

/// Elementwise sum; also accepts a 1 x n bias row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

/// Elementwise (Hadamard) product, same shapes.
Tensor mul(const Tensor& a, const Tensor& b);

/// Multiplication by a compile-time constant scalar.
Tensor scale(const Tensor& a, double s);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

/// Softmax along the given axis (1 = each row sums to one).
Tensor softmax(const Tensor& a, int axis);

/// Row-wise layer normalization with learnable gain/bias (1 x n each).
Tensor layerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

/// Mean squared error over all elements; returns a 1x1 tensor.
Tensor mse(const Tensor& pred, const Tensor& target);

// ---- optimizer --------------------------------------------------------

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  long step = 0;
};

/// Standard Adam update, deterministic given inputs. Gradients are consumed
/// from each parameter's grad buffer (and left untouched).
void adamStep(const std::vector<Tensor>& params, AdamState& state, double lr,
              double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace vibe::ad
