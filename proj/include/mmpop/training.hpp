#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmpop/adam.hpp"
#include "mmpop/autodiff.hpp"
#include "mmpop/matrix.hpp"
#include "mmpop/rng.hpp"

namespace mmpop {

/// Named view of one trainable matrix inside a parameter struct.
struct ParamRef {
  std::string name;
  Matrix* value;
};

/// Glorot-uniform initialised weight matrix.
Matrix glorot(Rng& rng, std::size_t rows, std::size_t cols);

/// Standardises a transformed target: z = (y - mean) / scale.
struct TargetScaler {
  double mean = 0.0;
  double scale = 1.0;

  static TargetScaler fit(std::span<const double> values);
  double to_z(double y) const { return (y - mean) / scale; }
  double from_z(double z) const { return mean + scale * z; }
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t k = 10;
  std::size_t patience = 10;
};

struct LossHistory {
  /// Loss of the untrained model over the training set.
  double initial_loss = 0.0;
  /// Mean minibatch loss per epoch.
  std::vector<double> train_loss;
  /// Validation MSE (transformed space) per epoch; empty without a val set.
  std::vector<double> val_mse;
  std::size_t best_epoch = 0;
  std::vector<std::string> warnings;
};

/// Loss over the training items listed in `batch`; `params` mirrors the
/// ParamRef order.
using BatchLoss =
    std::function<ad::Var(ad::Tape&, std::span<const ad::Var> params, std::span<const std::size_t> batch)>;

/// Minibatch Adam over `n_items` training items, shuffled each epoch with a
/// generator seeded from config.seed. When `val_mse` is set, the parameters
/// of the epoch with the lowest validation MSE are restored at the end and
/// training stops after `patience` epochs without improvement.
LossHistory fit(std::span<const ParamRef> params, std::size_t n_items, const TrainConfig& config,
                const BatchLoss& batch_loss,
                const std::function<double()>* val_mse = nullptr);

/// Registers every matrix as a tape parameter, in order.
std::vector<ad::Var> register_params(ad::Tape& tape, std::span<const ParamRef> params);

}  // namespace mmpop
