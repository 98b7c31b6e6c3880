#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmpop/dataset.hpp"

namespace mmpop {

/// Every hyperparameter of a run. Serialized as a flat JSON object; unknown
/// keys are rejected on load.
struct RunConfig {
  /// Embedding widths used by `synth`.
  ModalityDims dims = {32, 32, 32};
  std::size_t model_dim = 64;
  std::size_t hidden = 64;
  /// Neighbours retrieved per query.
  std::size_t k = 10;
  double mask_prob = 0.3;
  double lambda = 0.5;
  double lr = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::size_t patience = 10;
  /// Epoch budget of the synthesis network (small input, cheap epochs).
  std::size_t synthesis_epochs = 300;
  std::size_t min_author_samples = 20;
  TransformKind transform = TransformKind::log1p;
  double ratio = 0.8;
  std::uint64_t seed = 42;
  /// Worker threads for independent trainings; 0 = hardware concurrency.
  std::size_t threads = 0;

  /// Throws UsageError on any out-of-range value.
  void validate() const;

  std::string to_json() const;
  /// Starts from defaults and applies the keys present in `json`.
  static RunConfig from_json(const std::string& json);
  static RunConfig load(const std::filesystem::path& path);

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace mmpop
