#include "mmpop/autodiff.hpp"

#include <cmath>
#include <string>

namespace mmpop::ad {

namespace {

void accumulate(MatrixD& dst, const MatrixD& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

MatrixD transpose(const MatrixD& m) {
  MatrixD t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

void require_same(const MatrixD& a, const MatrixD& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + " shape mismatch: " + a.shape() + " vs " + b.shape());
  }
}

}  // namespace

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(MatrixD value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(MatrixD value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::matmul;
  n.a = a.id;
  n.b = b.id;
  n.value = mmpop::matmul(node(a).value, node(b).value);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  require_same(va, vb, "add");
  Node n;
  n.op = Op::add;
  n.a = a.id;
  n.b = b.id;
  n.value = va;
  accumulate(n.value, vb);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var bias) {
  const auto& va = node(a).value;
  const auto& vb = node(bias).value;
  if (vb.rows() != 1 || vb.cols() != va.cols()) {
    throw ShapeError("add_row shape mismatch: " + va.shape() + " + bias " + vb.shape());
  }
  Node n;
  n.op = Op::add_row;
  n.a = a.id;
  n.b = bias.id;
  n.value = va;
  for (std::size_t r = 0; r < va.rows(); ++r) {
    auto row = n.value.row(r);
    for (std::size_t c = 0; c < va.cols(); ++c) row[c] += vb[c];
  }
  n.requires_grad = node(a).requires_grad || node(bias).requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = a.id;
  n.scalar = s;
  n.value = node(a).value;
  for (auto& v : n.value.data()) v *= s;
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::scale_rows(Var a, std::vector<double> weights) {
  const auto& va = node(a).value;
  if (weights.size() != va.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                     va.shape());
  }
  Node n;
  n.op = Op::scale_rows;
  n.a = a.id;
  n.value = va;
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (auto& v : n.value.row(r)) v *= weights[r];
  n.weights = std::move(weights);
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::tanh;
  n.a = a.id;
  n.value = mmpop::activation(Activation::tanh, node(a).value);
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n;
  n.op = Op::relu;
  n.a = a.id;
  n.value = mmpop::activation(Activation::relu, node(a).value);
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::row_softmax(Var a) {
  Node n;
  n.op = Op::row_softmax;
  n.a = a.id;
  n.value = mmpop::row_softmax(node(a).value);
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  if (va.rows() != vb.rows()) {
    throw ShapeError("concat_cols shape mismatch: " + va.shape() + " | " + vb.shape());
  }
  Node n;
  n.op = Op::concat_cols;
  n.a = a.id;
  n.b = b.id;
  n.value = MatrixD(va.rows(), va.cols() + vb.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    auto out = n.value.row(r);
    std::copy(va.row(r).begin(), va.row(r).end(), out.begin());
    std::copy(vb.row(r).begin(), vb.row(r).end(), out.begin() + static_cast<long>(va.cols()));
  }
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::block_dot(Var q, Var keys, std::size_t block) {
  const auto& vq = node(q).value;
  const auto& vk = node(keys).value;
  if (block == 0 || vk.rows() != vq.rows() * block || vk.cols() != vq.cols()) {
    throw ShapeError("block_dot shape mismatch: q " + vq.shape() + ", keys " + vk.shape() +
                     ", block " + std::to_string(block));
  }
  Node n;
  n.op = Op::block_dot;
  n.a = q.id;
  n.b = keys.id;
  n.block = block;
  n.value = MatrixD(vq.rows(), block);
  for (std::size_t i = 0; i < vq.rows(); ++i) {
    auto qi = vq.row(i);
    for (std::size_t j = 0; j < block; ++j) {
      auto kr = vk.row(i * block + j);
      double acc = 0.0;
      for (std::size_t c = 0; c < qi.size(); ++c) acc += qi[c] * kr[c];
      n.value(i, j) = acc;
    }
  }
  n.requires_grad = node(q).requires_grad || node(keys).requires_grad;
  return push(std::move(n));
}

Var Tape::block_weighted_sum(Var w, Var values) {
  const auto& vw = node(w).value;
  const auto& vv = node(values).value;
  const std::size_t block = vw.cols();
  if (block == 0 || vv.rows() != vw.rows() * block) {
    throw ShapeError("block_weighted_sum shape mismatch: w " + vw.shape() + ", values " +
                     vv.shape());
  }
  Node n;
  n.op = Op::block_weighted_sum;
  n.a = w.id;
  n.b = values.id;
  n.block = block;
  n.value = MatrixD(vw.rows(), vv.cols());
  for (std::size_t i = 0; i < vw.rows(); ++i) {
    auto out = n.value.row(i);
    for (std::size_t j = 0; j < block; ++j) {
      const double wij = vw(i, j);
      auto vr = vv.row(i * block + j);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += wij * vr[c];
    }
  }
  n.requires_grad = node(w).requires_grad || node(values).requires_grad;
  return push(std::move(n));
}

Var Tape::mse(Var pred, MatrixD target) {
  const auto& vp = node(pred).value;
  require_same(vp, target, "mse");
  Node n;
  n.op = Op::mse;
  n.a = pred.id;
  n.value = MatrixD(1, 1, mse_loss(vp, target));
  n.aux = std::move(target);
  n.requires_grad = node(pred).requires_grad;
  return push(std::move(n));
}

Var Tape::masked_mse(Var pred, MatrixD target, std::vector<double> row_weights) {
  const auto& vp = node(pred).value;
  require_same(vp, target, "masked_mse");
  if (row_weights.size() != vp.rows()) {
    throw ShapeError("masked_mse: " + std::to_string(row_weights.size()) + " weights for " +
                     vp.shape());
  }
  double wsum = 0.0, acc = 0.0;
  for (std::size_t r = 0; r < vp.rows(); ++r) {
    if (row_weights[r] == 0.0) continue;
    wsum += row_weights[r];
    double rs = 0.0;
    for (std::size_t c = 0; c < vp.cols(); ++c) {
      const double d = vp(r, c) - target(r, c);
      rs += d * d;
    }
    acc += row_weights[r] * rs;
  }
  Node n;
  n.op = Op::masked_mse;
  n.a = pred.id;
  n.scalar = wsum > 0.0 ? 1.0 / (wsum * static_cast<double>(vp.cols())) : 0.0;
  n.value = MatrixD(1, 1, acc * n.scalar);
  n.aux = std::move(target);
  n.weights = std::move(row_weights);
  n.requires_grad = node(pred).requires_grad;
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const auto& m = node(v).value;
  if (m.rows() != 1 || m.cols() != 1) {
    throw UsageError("node " + std::to_string(v.id) + " is not scalar: " + m.shape());
  }
  return m[0];
}

const MatrixD& Tape::grad(Var v) const {
  if (v.id >= grads_.size()) throw UsageError("grad requested before backward() or for an unknown node");
  return grads_.at(v.id);
}

void Tape::backward(Var loss) {
  const auto& lv = node(loss).value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw UsageError("backward needs a scalar loss, got " + lv.shape());
  }
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const auto& n : nodes_) grads_.emplace_back(n.value.rows(), n.value.cols());
  grads_[loss.id][0] = 1.0;

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (!n.requires_grad || n.op == Op::leaf) continue;
    const MatrixD& g = grads_[idx];
    const bool ga = nodes_[n.a].requires_grad;
    const bool gb = nodes_[n.b].requires_grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const auto& A = nodes_[n.a].value;
        const auto& B = nodes_[n.b].value;
        if (ga) accumulate(grads_[n.a], mmpop::matmul(g, transpose(B)));
        if (gb) accumulate(grads_[n.b], mmpop::matmul(transpose(A), g));
        break;
      }
      case Op::add:
        if (ga) accumulate(grads_[n.a], g);
        if (gb) accumulate(grads_[n.b], g);
        break;
      case Op::add_row: {
        if (ga) accumulate(grads_[n.a], g);
        if (gb) {
          auto& gbias = grads_[n.b];
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gbias[c] += g(r, c);
        }
        break;
      }
      case Op::scale: {
        auto& ga_m = grads_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) ga_m[i] += n.scalar * g[i];
        break;
      }
      case Op::scale_rows: {
        auto& ga_m = grads_[n.a];
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) ga_m(r, c) += n.weights[r] * g(r, c);
        break;
      }
      case Op::tanh: {
        auto& ga_m = grads_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          ga_m[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::relu: {
        // Subgradient at exactly 0 is 0.
        auto& ga_m = grads_[n.a];
        const auto& x = nodes_[n.a].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga_m[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Op::row_softmax: {
        auto& ga_m = grads_[n.a];
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto y = n.value.row(r);
          auto gr = g.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < y.size(); ++c) dot += gr[c] * y[c];
          auto out = ga_m.row(r);
          for (std::size_t c = 0; c < y.size(); ++c) out[c] += y[c] * (gr[c] - dot);
        }
        break;
      }
      case Op::concat_cols: {
        const std::size_t ca = nodes_[n.a].value.cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto gr = g.row(r);
          if (ga) {
            auto out = grads_[n.a].row(r);
            for (std::size_t c = 0; c < ca; ++c) out[c] += gr[c];
          }
          if (gb) {
            auto out = grads_[n.b].row(r);
            for (std::size_t c = 0; c < out.size(); ++c) out[c] += gr[ca + c];
          }
        }
        break;
      }
      case Op::block_dot: {
        const auto& Q = nodes_[n.a].value;
        const auto& K = nodes_[n.b].value;
        for (std::size_t i = 0; i < Q.rows(); ++i) {
          auto qi = Q.row(i);
          for (std::size_t j = 0; j < n.block; ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            const std::size_t kr = i * n.block + j;
            if (ga) {
              auto out = grads_[n.a].row(i);
              auto k = K.row(kr);
              for (std::size_t c = 0; c < out.size(); ++c) out[c] += gij * k[c];
            }
            if (gb) {
              auto out = grads_[n.b].row(kr);
              for (std::size_t c = 0; c < out.size(); ++c) out[c] += gij * qi[c];
            }
          }
        }
        break;
      }
      case Op::block_weighted_sum: {
        const auto& W = nodes_[n.a].value;
        const auto& V = nodes_[n.b].value;
        for (std::size_t i = 0; i < W.rows(); ++i) {
          auto gi = g.row(i);
          for (std::size_t j = 0; j < n.block; ++j) {
            const std::size_t vr = i * n.block + j;
            if (ga) {
              auto v = V.row(vr);
              double acc = 0.0;
              for (std::size_t c = 0; c < gi.size(); ++c) acc += gi[c] * v[c];
              grads_[n.a](i, j) += acc;
            }
            if (gb) {
              const double wij = W(i, j);
              auto out = grads_[n.b].row(vr);
              for (std::size_t c = 0; c < out.size(); ++c) out[c] += wij * gi[c];
            }
          }
        }
        break;
      }
      case Op::mse: {
        const auto& P = nodes_[n.a].value;
        const double k = 2.0 * g[0] / static_cast<double>(P.size());
        auto& ga_m = grads_[n.a];
        for (std::size_t i = 0; i < P.size(); ++i) ga_m[i] += k * (P[i] - n.aux[i]);
        break;
      }
      case Op::masked_mse: {
        if (n.scalar == 0.0) break;
        const auto& P = nodes_[n.a].value;
        auto& ga_m = grads_[n.a];
        for (std::size_t r = 0; r < P.rows(); ++r) {
          if (n.weights[r] == 0.0) continue;
          const double k = 2.0 * g[0] * n.weights[r] * n.scalar;
          for (std::size_t c = 0; c < P.cols(); ++c) ga_m(r, c) += k * (P(r, c) - n.aux(r, c));
        }
        break;
      }
    }
  }
}

double finite_diff_check(const GraphBuilder& build, std::span<const MatrixD> params, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_check needs eps > 0");

  std::vector<MatrixD> analytic;
  {
    Tape tape;
    std::vector<Var> handles;
    for (const auto& p : params) handles.push_back(tape.param(p));
    Var loss = build(tape, handles);
    tape.backward(loss);
    for (const auto& h : handles) analytic.push_back(tape.grad(h));
  }

  std::vector<MatrixD> work(params.begin(), params.end());
  auto eval = [&] {
    Tape tape;
    std::vector<Var> handles;
    for (const auto& p : work) handles.push_back(tape.param(p));
    return tape.scalar(build(tape, handles));
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + eps;
      const double up = eval();
      work[p][i] = orig - eps;
      const double down = eval();
      work[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mmpop::ad
