#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmpop/matrix.hpp"

namespace mmpop {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter matrix.
struct AdamState {
  std::vector<MatrixD> m;
  std::vector<MatrixD> v;
  std::int64_t step = 0;

  static AdamState for_params(std::span<const Matrix* const> params);
};

/// One bias-corrected Adam update, in place. Moments and the update are
/// computed in double; the result is rounded to the float parameter.
void adam_step(std::span<Matrix* const> params, std::span<const MatrixD> grads,
               AdamState& state, const AdamHyper& hyper = {});

}  // namespace mmpop
