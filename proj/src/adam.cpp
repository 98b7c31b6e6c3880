#include "mmpop/adam.hpp"

#include <cmath>
#include <string>

namespace mmpop {

AdamState AdamState::for_params(std::span<const Matrix* const> params) {
  AdamState s;
  for (const Matrix* p : params) {
    s.m.emplace_back(p->rows(), p->cols());
    s.v.emplace_back(p->rows(), p->cols());
  }
  return s;
}

void adam_step(std::span<Matrix* const> params, std::span<const MatrixD> grads,
               AdamState& state, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.m.size()) + " moment slots");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);

  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = *params[p];
    const MatrixD& g = grads[p];
    MatrixD& m = state.m[p];
    MatrixD& v = state.v[p];
    if (!w.same_shape(Matrix(g.rows(), g.cols())) || !m.same_shape(g)) {
      throw ShapeError("adam_step: parameter " + w.shape() + " vs gradient " + g.shape());
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<float>(static_cast<double>(w[i]) -
                                hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

}  // namespace mmpop
