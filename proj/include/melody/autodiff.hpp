#pragma once

// Reverse-mode automatic differentiation over dense row-major Eigen matrices.
//
// A Tape records every operation of one forward pass in creation order, which
// is already a topological order. Vectors are 1 x n rows; a sequence of
// vectors is stacked into a T x n matrix. Parameters are referenced, not
// copied, so they must outlive the tape and stay untouched while it is live.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "melody/errors.hpp"

namespace melody::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) {
    check_finite("constant", value);
    Node node;
    node.op = "constant";
    node.owned = std::move(value);
    return push(std::move(node));
  }

  /// Leaf that references `value` without copying. Its gradient is tracked
  /// unless `requires_grad` is false (inference).
  Var<Scalar> parameter(const Mat& value, bool requires_grad = true) {
    check_finite("parameter", value);
    Node node;
    node.op = "parameter";
    node.external = &value;
    node.requires_grad = requires_grad;
    return push(std::move(node));
  }

  Var<Scalar> record(std::string_view op, Mat value, std::vector<std::size_t> inputs,
                     BackwardFn backward) {
    check_finite(op, value);
    Node node;
    node.op = op;
    node.owned = std::move(value);
    for (auto input : inputs) node.requires_grad = node.requires_grad || nodes_[input].requires_grad;
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Mat& value(std::size_t id) const {
    const Node& node = nodes_[id];
    return node.external ? *node.external : node.owned;
  }

  /// Gradient after backward(); zero-shaped when nothing flowed into the node.
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Zero-initialised gradient buffer, for sparse accumulation.
  Mat& grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = Mat::Zero(value(id).rows(), value(id).cols());
    return node.grad;
  }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and walks the tape backwards once. Gradients
  /// from several consumers of a node are summed.
  void backward(Var<Scalar> loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeMismatch("backward needs a scalar loss, got " + shape_string(loss.value()));
    }
    for (auto& node : nodes_) node.grad.resize(0, 0);
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.grad.size() == 0) continue;
      if (!node.grad.allFinite()) {
        throw NonFiniteGradient("gradient of '" + std::string(node.op) + "' node " +
                                std::to_string(i));
      }
      if (node.backward) node.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

  static std::string shape_string(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
  }

 private:
  struct Node {
    std::string_view op;
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  static void check_finite(std::string_view op, const Mat& value) {
    if (!value.allFinite()) throw NonFiniteValue("output of '" + std::string(op) + "'");
  }

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

template <typename Scalar>
[[noreturn]] void shape_error(std::string_view op, const Var<Scalar>& a, const Var<Scalar>& b) {
  throw ShapeMismatch(std::string(op) + " " + Tape<Scalar>::shape_string(a.value()) + " vs " +
                      Tape<Scalar>::shape_string(b.value()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape().record("matmul", std::move(out), {a.id(), b.id()},
                         [](Tape<Scalar>& t, std::size_t self) {
                           const auto ia = t.input(self, 0);
                           const auto ib = t.input(self, 1);
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                         });
}

/// Elementwise sum. `b` may also be a 1 x n row added to every row of `a`.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool broadcast = !same && b.rows() == 1 && a.cols() == b.cols();
  if (!same && !broadcast) detail::shape_error("add", a, b);
  Matrix<Scalar> out = a.value();
  if (same) {
    out += b.value();
  } else {
    out.rowwise() += b.value().row(0);
  }
  return a.tape().record("add", std::move(out), {a.id(), b.id()},
                         [broadcast](Tape<Scalar>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           t.accumulate(t.input(self, 0), g);
                           if (broadcast) {
                             t.accumulate(t.input(self, 1), g.colwise().sum());
                           } else {
                             t.accumulate(t.input(self, 1), g);
                           }
                         });
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("mul", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", std::move(out), {a.id(), b.id()},
                         [](Tape<Scalar>& t, std::size_t self) {
                           const auto ia = t.input(self, 0);
                           const auto ib = t.input(self, 1);
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Matrix<Scalar> out = a.value() * factor;
  return a.tape().record("scale", std::move(out), {a.id()},
                         [factor](Tape<Scalar>& t, std::size_t self) {
                           t.accumulate(t.input(self, 0), t.grad(self) * factor);
                         });
}

/// Concatenation along the last axis.
template <typename Scalar>
Var<Scalar> concat(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  if (a.rows() != b.rows()) detail::shape_error("concat", a, b);
  Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto split = a.cols();
  return a.tape().record("concat", std::move(out), {a.id(), b.id()},
                         [split](Tape<Scalar>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           t.accumulate(t.input(self, 0), g.leftCols(split));
                           t.accumulate(t.input(self, 1), g.rightCols(g.cols() - split));
                         });
}

/// Columns [begin, begin + count).
template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) {
    throw ShapeMismatch("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                        ") of " + Tape<Scalar>::shape_string(a.value()));
  }
  Matrix<Scalar> out = a.value().middleCols(begin, count);
  return a.tape().record("slice_cols", std::move(out), {a.id()},
                         [begin, count](Tape<Scalar>& t, std::size_t self) {
                           const auto in = t.input(self, 0);
                           t.grad_buffer(in).middleCols(begin, count) += t.grad(self);
                         });
}

/// Stacks equally wide rows (or row blocks) vertically.
template <typename Scalar>
Var<Scalar> stack_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeMismatch("stack_rows of nothing");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.cols() != parts.front().cols()) detail::shape_error("stack_rows", parts.front(), p);
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, parts.front().cols());
  std::vector<std::size_t> inputs;
  std::vector<Eigen::Index> offsets;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    inputs.push_back(p.id());
    offsets.push_back(offset);
    offset += p.rows();
  }
  return parts.front().tape().record(
      "stack_rows", std::move(out), std::move(inputs),
      [offsets](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t k = 0; k < offsets.size(); ++k) {
          const auto in = t.input(self, k);
          t.accumulate(in, g.middleRows(offsets[k], t.value(in).rows()));
        }
      });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  return a.tape().record("transpose", std::move(out), {a.id()},
                         [](Tape<Scalar>& t, std::size_t self) {
                           t.accumulate(t.input(self, 0), t.grad(self).transpose());
                         });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return a.tape().record("tanh", std::move(out), {a.id()}, [](Tape<Scalar>& t, std::size_t self) {
    const auto y = t.value(self).array();
    t.accumulate(t.input(self, 0), (t.grad(self).array() * (Scalar(1) - y * y)).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  // 1 / (1 + e^-x) written to avoid overflow for large |x|.
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) {
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  });
  return a.tape().record("sigmoid", std::move(out), {a.id()},
                         [](Tape<Scalar>& t, std::size_t self) {
                           const auto y = t.value(self).array();
                           t.accumulate(t.input(self, 0),
                                        (t.grad(self).array() * y * (Scalar(1) - y)).matrix());
                         });
}

/// Row-wise softmax, max-shifted.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a) {
  return a.tape().record("softmax", softmax_rows<Scalar>(a.value()), {a.id()},
                         [](Tape<Scalar>& t, std::size_t self) {
                           const auto& y = t.value(self);
                           const auto& g = t.grad(self);
                           const auto dot = g.cwiseProduct(y).rowwise().sum();
                           Matrix<Scalar> gx = g;
                           gx.colwise() -= dot;
                           t.accumulate(t.input(self, 0), gx.cwiseProduct(y));
                         });
}

/// Rows of `table` selected by `ids`, stacked.
template <typename Scalar>
Var<Scalar> embedding_gather(const Var<Scalar>& table, std::span<const int> ids) {
  if (ids.empty()) throw ShapeMismatch("embedding_gather with no ids");
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ShapeMismatch("embedding id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return table.tape().record("embedding_gather", std::move(out), {table.id()},
                             [kept](Tape<Scalar>& t, std::size_t self) {
                               auto& buffer = t.grad_buffer(t.input(self, 0));
                               const auto& g = t.grad(self);
                               for (std::size_t i = 0; i < kept.size(); ++i) {
                                 buffer.row(kept[i]) += g.row(static_cast<Eigen::Index>(i));
                               }
                             });
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, over rows where `mask` is nonzero. Returns a 1 x 1 node.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> targets,
                          std::span<const unsigned char> mask) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || mask.size() != rows) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(rows) + " logit rows, " +
                        std::to_string(targets.size()) + " targets, " +
                        std::to_string(mask.size()) + " mask entries");
  }
  std::size_t active = 0;
  for (auto m : mask) active += m ? 1 : 0;
  if (active == 0) throw ShapeMismatch("cross_entropy: every position is masked");

  const Matrix<Scalar>& x = logits.value();
  Matrix<Scalar> probs = softmax_rows<Scalar>(x);
  Scalar total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const auto row = static_cast<Eigen::Index>(r);
    if (targets[r] < 0 || targets[r] >= x.cols()) {
      throw ShapeMismatch("cross_entropy target " + std::to_string(targets[r]) + " outside " +
                          std::to_string(x.cols()) + " classes");
    }
    const Scalar shift = x.row(row).maxCoeff();
    const Scalar log_sum = shift + std::log((x.row(row).array() - shift).exp().sum());
    total += log_sum - x(row, targets[r]);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(active);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total * inv;

  std::vector<int> kept_targets(targets.begin(), targets.end());
  std::vector<unsigned char> kept_mask(mask.begin(), mask.end());
  return logits.tape().record(
      "cross_entropy", std::move(out), {logits.id()},
      [probs = std::move(probs), kept_targets, kept_mask, inv](Tape<Scalar>& t, std::size_t self) {
        const Scalar g = t.grad(self)(0, 0) * inv;
        Matrix<Scalar> gx = Matrix<Scalar>::Zero(probs.rows(), probs.cols());
        for (std::size_t r = 0; r < kept_targets.size(); ++r) {
          if (!kept_mask[r]) continue;
          const auto row = static_cast<Eigen::Index>(r);
          gx.row(row) = probs.row(row) * g;
          gx(row, kept_targets[r]) -= g;
        }
        t.accumulate(t.input(self, 0), gx);
      });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(out), {a.id()}, [](Tape<Scalar>& t, std::size_t self) {
    const auto in = t.input(self, 0);
    t.accumulate(in, Matrix<Scalar>::Constant(t.value(in).rows(), t.value(in).cols(),
                                              t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  return matmul(a, b);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Matrix<Scalar> value;
};

struct GradCheckBlock {
  std::string name;
  double max_rel_error = 0;
  Eigen::Index worst_index = -1;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// Compares backward() against central differences for every element of
/// every tensor in `params`. `f` builds the scalar loss on the tape it is
/// given from the parameter nodes, in `params` order.
///
/// Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps
/// elements whose true gradient is near zero from being judged on pure
/// rounding noise (about 1e-11 / h for O(1) losses).
template <typename Scalar, typename Loss>
GradCheckReport grad_check(Loss&& f, std::vector<NamedTensor<Scalar>>& params, Scalar h,
                           Scalar tolerance, Scalar floor = Scalar(1e-6)) {
  const auto evaluate = [&](bool with_backward, std::vector<Matrix<Scalar>>* grads) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    vars.reserve(params.size());
    for (auto& p : params) vars.push_back(tape.parameter(p.value));
    Var<Scalar> loss = f(tape, std::span<const Var<Scalar>>(vars));
    if (with_backward) {
      tape.backward(loss);
      for (std::size_t k = 0; k < vars.size(); ++k) {
        const auto& g = vars[k].grad();
        (*grads)[k] = g.size() ? g : Matrix<Scalar>::Zero(vars[k].rows(), vars[k].cols());
      }
    }
    return loss.scalar();
  };

  std::vector<Matrix<Scalar>> analytic(params.size());
  evaluate(true, &analytic);

  GradCheckReport report;
  report.tolerance = static_cast<double>(tolerance);
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradCheckBlock block;
    block.name = params[k].name;
    auto& value = params[k].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      Scalar& x = value.data()[i];
      const Scalar saved = x;
      x = saved + h;
      const Scalar up = evaluate(false, nullptr);
      x = saved - h;
      const Scalar down = evaluate(false, nullptr);
      x = saved;
      const Scalar numeric = (up - down) / (Scalar(2) * h);
      const Scalar a = analytic[k].data()[i];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = static_cast<double>(std::abs(a - numeric) / denom);
      if (err > block.max_rel_error || block.worst_index < 0) {
        block.max_rel_error = err;
        block.worst_index = i;
        block.analytic_at_worst = static_cast<double>(a);
        block.numeric_at_worst = static_cast<double>(numeric);
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.blocks.push_back(std::move(block));
  }
  report.passed = report.max_rel_error <= report.tolerance;
  return report;
}

}  // namespace melody::ad
