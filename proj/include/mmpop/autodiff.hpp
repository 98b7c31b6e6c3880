#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mmpop/matrix.hpp"

namespace mmpop::ad {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is topologically sorted by construction. A tape is built for one
/// forward pass and discarded afterwards.
class Tape {
 public:
  enum class Op {
    leaf,
    matmul,
    add,
    add_row,
    scale,
    scale_rows,
    tanh,
    relu,
    row_softmax,
    concat_cols,
    block_dot,
    block_weighted_sum,
    mse,
    masked_mse,
  };

  /// Trainable input; gradients are accumulated for it.
  Var param(MatrixD value);
  Var param(const Matrix& value) { return param(MatrixD::cast(value)); }
  /// Non-trainable input; no gradient flows into it.
  Var constant(MatrixD value);
  Var constant(const Matrix& value) { return constant(MatrixD::cast(value)); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a 1 x cols bias row to every row of `a`.
  Var add_row(Var a, Var bias);
  Var scale(Var a, double s);
  /// Multiplies row r of `a` by weights[r]. `weights` is constant.
  Var scale_rows(Var a, std::vector<double> weights);
  Var tanh(Var a);
  Var relu(Var a);
  Var activation(Activation kind, Var a) {
    return kind == Activation::relu ? relu(a) : tanh(a);
  }
  Var row_softmax(Var a);
  Var concat_cols(Var a, Var b);
  /// out(i, j) = q.row(i) . keys.row(i * block + j); shape rows(q) x block.
  Var block_dot(Var q, Var keys, std::size_t block);
  /// out.row(i) = sum_j w(i, j) * values.row(i * block + j); block = cols(w).
  Var block_weighted_sum(Var w, Var values);
  /// Mean squared error against a constant target; 1 x 1 result.
  Var mse(Var pred, MatrixD target);
  /// Row-weighted mean squared error against a constant target:
  /// sum_r w_r * sum_c (p - t)^2 / (cols * sum_r w_r), or 0 when all weights are 0.
  Var masked_mse(Var pred, MatrixD target, std::vector<double> row_weights);

  const MatrixD& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const;

  /// Propagates d(loss)/d(node) to every node that requires a gradient.
  /// Throws UsageError when `loss` is not 1 x 1.
  void backward(Var loss);

  /// Gradient of the last backward() loss with respect to `v`; zero-filled
  /// when `v` is not reachable from the loss.
  const MatrixD& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const { return nodes_[v.id].op; }

 private:
  struct Node {
    Op op = Op::leaf;
    std::size_t a = 0;
    std::size_t b = 0;
    bool requires_grad = false;
    double scalar = 0.0;
    std::size_t block = 0;
    MatrixD value;
    MatrixD aux;
    std::vector<double> weights;
  };

  Var push(Node n);
  const Node& node(Var v) const { return nodes_.at(v.id); }

  std::vector<Node> nodes_;
  std::vector<MatrixD> grads_;
};

/// Builds a scalar loss on `tape` from the registered parameter handles.
using GraphBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Compares backward() gradients with central differences of step `eps` over
/// every parameter entry and returns the worst relative error
/// |a - n| / max(|a|, |n|, 1e-6).
double finite_diff_check(const GraphBuilder& build, std::span<const MatrixD> params, double eps);

}  // namespace mmpop::ad
