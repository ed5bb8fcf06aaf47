#include "vibe/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vibe::ad {

namespace {

[[noreturn]] void shapeError(const std::string& op, const Tensor& a,
                             const Tensor& b) {
  std::ostringstream os;
  os << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << ") vs ("
     << b.rows() << "x" << b.cols() << ")";
  throw std::invalid_argument(os.str());
}

Tape* deduceTape(const std::vector<Tensor>& operands) {
  Tape* tape = nullptr;
  for (const auto& t : operands) {
    if (t.node()->tape != nullptr) {
      if (tape != nullptr && tape != t.node()->tape) {
        throw std::invalid_argument("op mixes tensors from different tapes");
      }
      tape = t.node()->tape;
    }
  }
  if (tape == nullptr) {
    throw std::invalid_argument(
        "op needs at least one operand on a tape; wrap inputs via "
        "Tape::constant");
  }
  return tape;
}

}  // namespace

Tensor makeParam(const Eigen::MatrixXd& v, std::string name) {
  auto n = std::make_shared<TensorNode>();
  n->value = v;
  n->requires_grad = true;
  n->grad.setZero(v.rows(), v.cols());
  n->name = std::move(name);
  return Tensor(n);
}

Tensor makeLeaf(const Eigen::MatrixXd& v, std::string name) {
  auto n = std::make_shared<TensorNode>();
  n->value = v;
  n->requires_grad = false;
  n->name = std::move(name);
  return Tensor(n);
}

void zeroGrad(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    p.node()->grad.setZero(p.rows(), p.cols());
  }
}

Tensor Tape::constant(const Eigen::MatrixXd& v, std::string name) {
  auto n = std::make_shared<TensorNode>();
  n->value = v;
  n->requires_grad = false;
  n->tape = this;
  n->name = std::move(name);
  nodes_.push_back(n);
  return Tensor(n);
}

Tensor Tape::record(Eigen::MatrixXd value, std::vector<Tensor> parents,
                    std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  n->tape = this;
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requiresGrad();
    n->parents.push_back(p.ptr());
  }
  n->backward_fn = std::move(backward_fn);
  nodes_.push_back(n);
  return Tensor(n);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 scalar tensor");
  }
  if (loss.node()->tape != this) {
    throw std::invalid_argument("backward: loss does not belong to this tape");
  }
  if (nodes_.empty()) {
    throw std::invalid_argument("backward: tape is empty");
  }
  for (auto& n : nodes_) {
    if (n->requires_grad) n->ensureGrad();
  }
  loss.node()->grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorNode& n = **it;
    if (n.requires_grad && n.backward_fn) {
      for (auto& p : n.parents) {
        if (p->requires_grad) p->ensureGrad();
      }
      n.backward_fn(n);
    }
  }
}

// ---- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  const long am = trans_a ? a.cols() : a.rows();
  const long ak = trans_a ? a.rows() : a.cols();
  const long bk = trans_b ? b.cols() : b.rows();
  const long bn = trans_b ? b.rows() : b.cols();
  if (ak != bk) shapeError("matmul", a, b);

  Eigen::MatrixXd out(am, bn);
  if (!trans_a && !trans_b) out.noalias() = a.value() * b.value();
  else if (trans_a && !trans_b) out.noalias() = a.value().transpose() * b.value();
  else if (!trans_a && trans_b) out.noalias() = a.value() * b.value().transpose();
  else out.noalias() = a.value().transpose() * b.value().transpose();

  Tape* tape = deduceTape({a, b});
  auto an = a.ptr();
  auto bn_ = b.ptr();
  return tape->record(std::move(out), {a, b}, [an, bn_, trans_a,
                                               trans_b](TensorNode& n) {
    const Eigen::MatrixXd& g = n.grad;
    if (an->requires_grad) {
      if (!trans_a && !trans_b) an->grad.noalias() += g * bn_->value.transpose();
      else if (!trans_a && trans_b) an->grad.noalias() += g * bn_->value;
      else if (trans_a && !trans_b) an->grad.noalias() += bn_->value * g.transpose();
      else an->grad.noalias() += bn_->value.transpose() * g.transpose();
    }
    if (bn_->requires_grad) {
      if (!trans_a && !trans_b) bn_->grad.noalias() += an->value.transpose() * g;
      else if (trans_a && !trans_b) bn_->grad.noalias() += an->value * g;
      else if (!trans_a && trans_b) bn_->grad.noalias() += g.transpose() * an->value;
      else bn_->grad.noalias() += g.transpose() * an->value.transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() > 1 && b.cols() == a.cols();
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols())) {
    shapeError("add", a, b);
  }
  Eigen::MatrixXd out;
  if (broadcast) {
    out = a.value().rowwise() + b.value().row(0);
  } else {
    out = a.value() + b.value();
  }
  Tape* tape = deduceTape({a, b});
  auto an = a.ptr();
  auto bp = b.ptr();
  return tape->record(std::move(out), {a, b}, [an, bp, broadcast](TensorNode& n) {
    if (an->requires_grad) an->grad += n.grad;
    if (bp->requires_grad) {
      if (broadcast) bp->grad.row(0) += n.grad.colwise().sum();
      else bp->grad += n.grad;
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shapeError("sub", a, b);
  Tape* tape = deduceTape({a, b});
  auto an = a.ptr();
  auto bp = b.ptr();
  return tape->record(a.value() - b.value(), {a, b}, [an, bp](TensorNode& n) {
    if (an->requires_grad) an->grad += n.grad;
    if (bp->requires_grad) bp->grad -= n.grad;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shapeError("mul", a, b);
  Tape* tape = deduceTape({a, b});
  auto an = a.ptr();
  auto bp = b.ptr();
  return tape->record(a.value().cwiseProduct(b.value()), {a, b},
                      [an, bp](TensorNode& n) {
                        if (an->requires_grad)
                          an->grad += n.grad.cwiseProduct(bp->value);
                        if (bp->requires_grad)
                          bp->grad += n.grad.cwiseProduct(an->value);
                      });
}

Tensor scale(const Tensor& a, double s) {
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(a.value() * s, {a}, [an, s](TensorNode& n) {
    if (an->requires_grad) an->grad += s * n.grad;
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  long rows = parts[0].rows(), cols = parts[0].cols();
  long total = axis == 0 ? rows : cols;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (axis == 0) {
      if (parts[i].cols() != cols) shapeError("concat", parts[0], parts[i]);
      total += parts[i].rows();
    } else {
      if (parts[i].rows() != rows) shapeError("concat", parts[0], parts[i]);
      total += parts[i].cols();
    }
  }
  Eigen::MatrixXd out(axis == 0 ? total : rows, axis == 0 ? cols : total);
  long off = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      out.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  Tape* tape = deduceTape(parts);
  std::vector<std::shared_ptr<TensorNode>> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.ptr());
  return tape->record(std::move(out), parts, [pnodes, axis](TensorNode& n) {
    long off = 0;
    for (auto& p : pnodes) {
      if (axis == 0) {
        if (p->requires_grad) p->grad += n.grad.middleRows(off, p->rows());
        off += p->rows();
      } else {
        if (p->requires_grad) p->grad += n.grad.middleCols(off, p->cols());
        off += p->cols();
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  const long limit = axis == 0 ? a.rows() : a.cols();
  if (start < 0 || len <= 0 || start + len > limit) {
    std::ostringstream os;
    os << "slice: range [" << start << ", " << start + len
       << ") out of bounds for axis " << axis << " of size " << limit;
    throw std::invalid_argument(os.str());
  }
  Eigen::MatrixXd out = axis == 0 ? a.value().middleRows(start, len)
                                  : a.value().middleCols(start, len);
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(std::move(out), {a}, [an, axis, start, len](TensorNode& n) {
    if (!an->requires_grad) return;
    if (axis == 0) an->grad.middleRows(start, len) += n.grad;
    else an->grad.middleCols(start, len) += n.grad;
  });
}

Tensor sigmoid(const Tensor& a) {
  Eigen::MatrixXd s = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(std::move(s), {a}, [an](TensorNode& n) {
    if (!an->requires_grad) return;
    an->grad.array() +=
        n.grad.array() * n.value.array() * (1.0 - n.value.array());
  });
}

Tensor tanh(const Tensor& a) {
  Eigen::MatrixXd t = a.value().array().tanh().matrix();
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(std::move(t), {a}, [an](TensorNode& n) {
    if (!an->requires_grad) return;
    an->grad.array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

Tensor relu(const Tensor& a) {
  Eigen::MatrixXd r = a.value().cwiseMax(0.0);
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(std::move(r), {a}, [an](TensorNode& n) {
    if (!an->requires_grad) return;
    an->grad.array() +=
        n.grad.array() * (an->value.array() > 0.0).cast<double>();
  });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  Eigen::MatrixXd y(a.rows(), a.cols());
  if (axis == 1) {
    for (long r = 0; r < a.rows(); ++r) {
      Eigen::ArrayXd row = a.value().row(r).array();
      row -= row.maxCoeff();
      Eigen::ArrayXd e = row.exp();
      y.row(r) = (e / e.sum()).matrix().transpose();
    }
  } else {
    for (long c = 0; c < a.cols(); ++c) {
      Eigen::ArrayXd col = a.value().col(c).array();
      col -= col.maxCoeff();
      Eigen::ArrayXd e = col.exp();
      y.col(c) = (e / e.sum()).matrix();
    }
  }
  Tape* tape = deduceTape({a});
  auto an = a.ptr();
  return tape->record(std::move(y), {a}, [an, axis](TensorNode& n) {
    if (!an->requires_grad) return;
    if (axis == 1) {
      for (long r = 0; r < n.rows(); ++r) {
        const auto yr = n.value.row(r).array();
        const auto gr = n.grad.row(r).array();
        const double dot = (yr * gr).sum();
        an->grad.row(r).array() += yr * (gr - dot);
      }
    } else {
      for (long c = 0; c < n.cols(); ++c) {
        const auto yc = n.value.col(c).array();
        const auto gc = n.grad.col(c).array();
        const double dot = (yc * gc).sum();
        an->grad.col(c).array() += yc * (gc - dot);
      }
    }
  });
}

Tensor layerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) shapeError("layerNorm", x, gain);
  if (bias.rows() != 1 || bias.cols() != x.cols()) shapeError("layerNorm", x, bias);
  const long R = x.rows(), C = x.cols();
  Eigen::MatrixXd xhat(R, C);
  Eigen::VectorXd inv_sigma(R);
  for (long r = 0; r < R; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = is;
    xhat.row(r) = ((x.value().row(r).array() - mu) * is).matrix();
  }
  Eigen::MatrixXd out =
      (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
      bias.value().row(0).array();
  Tape* tape = deduceTape({x, gain, bias});
  auto xn = x.ptr();
  auto gn = gain.ptr();
  auto bn = bias.ptr();
  auto xhat_p = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
  auto is_p = std::make_shared<Eigen::VectorXd>(std::move(inv_sigma));
  return tape->record(std::move(out), {x, gain, bias},
                      [xn, gn, bn, xhat_p, is_p](TensorNode& n) {
    const Eigen::MatrixXd& g = n.grad;
    const Eigen::MatrixXd& xh = *xhat_p;
    const long R = g.rows(), C = g.cols();
    if (gn->requires_grad)
      gn->grad.row(0).array() += (g.array() * xh.array()).colwise().sum();
    if (bn->requires_grad) bn->grad.row(0) += g.colwise().sum();
    if (xn->requires_grad) {
      for (long r = 0; r < R; ++r) {
        const Eigen::ArrayXd dxhat =
            g.row(r).array().transpose() * gn->value.row(0).array().transpose();
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat =
            (dxhat * xh.row(r).array().transpose()).mean();
        xn->grad.row(r).array() +=
            ((dxhat - mean_dxhat - xh.row(r).array().transpose() * mean_dxhat_xhat) *
             (*is_p)(r))
                .transpose();
      }
    }
  });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    shapeError("mse", pred, target);
  }
  const double n_elems = static_cast<double>(pred.rows() * pred.cols());
  Eigen::MatrixXd diff = pred.value() - target.value();
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = diff.squaredNorm() / n_elems;
  Tape* tape = deduceTape({pred, target});
  auto pn = pred.ptr();
  auto tn = target.ptr();
  auto diff_p = std::make_shared<Eigen::MatrixXd>(std::move(diff));
  return tape->record(std::move(out), {pred, target},
                      [pn, tn, diff_p, n_elems](TensorNode& n) {
    const double g = n.grad(0, 0) * 2.0 / n_elems;
    if (pn->requires_grad) pn->grad += g * (*diff_p);
    if (tn->requires_grad) tn->grad -= g * (*diff_p);
  });
}

void adamStep(const std::vector<Tensor>& params, AdamState& state, double lr,
              double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
      state.v.emplace_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adamStep: state does not match parameter list");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* n = params[i].node();
    n->ensureGrad();
    if (state.m[i].rows() != n->value.rows() || state.m[i].cols() != n->value.cols()) {
      throw std::invalid_argument("adamStep: state shape mismatch for " + n->name);
    }
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * n->grad;
    state.v[i].array() =
        beta2 * state.v[i].array() + (1.0 - beta2) * n->grad.array().square();
    const Eigen::ArrayXXd mhat = state.m[i].array() / bc1;
    const Eigen::ArrayXXd vhat = state.v[i].array() / bc2;
    n->value.array() -= lr * mhat / (vhat.sqrt() + eps);
  }
}

}  // namespace vibe::ad
