#include "mmpop/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "mmpop/errors.hpp"

namespace mmpop {

Matrix glorot(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = static_cast<float>(rng.uniform(-limit, limit));
  return m;
}

TargetScaler TargetScaler::fit(std::span<const double> values) {
  TargetScaler s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  var /= static_cast<double>(values.size());
  s.scale = var > 1e-12 ? std::sqrt(var) : 1.0;
  return s;
}

std::vector<ad::Var> register_params(ad::Tape& tape, std::span<const ParamRef> params) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(tape.param(*p.value));
  return out;
}

LossHistory fit(std::span<const ParamRef> params, std::size_t n_items, const TrainConfig& config,
                const BatchLoss& batch_loss, const std::function<double()>* val_mse) {
  if (n_items == 0) throw UsageError("training set is empty");
  if (config.epochs == 0 || config.batch_size == 0) {
    throw UsageError("epochs and batch_size must be positive");
  }
  std::vector<Matrix*> ptrs;
  std::vector<const Matrix*> cptrs;
  for (const auto& p : params) {
    ptrs.push_back(p.value);
    cptrs.push_back(p.value);
  }
  AdamState state = AdamState::for_params(cptrs);
  AdamHyper hyper;
  hyper.lr = config.lr;

  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});

  LossHistory hist;
  {
    double acc = 0.0;
    for (std::size_t start = 0; start < n_items; start += config.batch_size) {
      const std::size_t end = std::min(n_items, start + config.batch_size);
      ad::Tape tape;
      auto vars = register_params(tape, params);
      const double l = tape.scalar(batch_loss(
          tape, vars, std::span<const std::size_t>(order.data() + start, end - start)));
      acc += l * static_cast<double>(end - start);
    }
    hist.initial_loss = acc / static_cast<double>(n_items);
  }

  Rng rng(config.seed);
  std::vector<Matrix> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double acc = 0.0;
    for (std::size_t start = 0; start < n_items; start += config.batch_size) {
      const std::size_t end = std::min(n_items, start + config.batch_size);
      ad::Tape tape;
      auto vars = register_params(tape, params);
      ad::Var loss = batch_loss(tape, vars,
                                std::span<const std::size_t>(order.data() + start, end - start));
      acc += tape.scalar(loss) * static_cast<double>(end - start);
      tape.backward(loss);
      std::vector<MatrixD> grads;
      grads.reserve(vars.size());
      for (auto v : vars) grads.push_back(tape.grad(v));
      adam_step(ptrs, grads, state, hyper);
    }
    hist.train_loss.push_back(acc / static_cast<double>(n_items));

    if (val_mse != nullptr) {
      const double v = (*val_mse)();
      hist.val_mse.push_back(v);
      if (v < best_val) {
        best_val = v;
        hist.best_epoch = epoch;
        since_best = 0;
        best.clear();
        for (const Matrix* p : cptrs) best.push_back(*p);
      } else if (++since_best >= config.patience) {
        break;
      }
    } else {
      hist.best_epoch = epoch;
    }
  }
  if (val_mse != nullptr && !best.empty()) {
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = best[i];
  }
  return hist;
}

}  // namespace mmpop
