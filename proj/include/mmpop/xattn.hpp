#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "mmpop/autodiff.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/memory_bank.hpp"
#include "mmpop/training.hpp"

namespace mmpop::xattn {

/// Retrieval branch for one metric: the target video is encoded, attends
/// over its retrieved neighbours (embedding, known target, similarity) and
/// a small head regresses the transformed target.
struct Params {
  Metric metric = Metric::hearts;
  std::size_t model_dim = 64;
  std::size_t hidden = 64;
  /// Per-modality input projections, d_m x d.
  std::array<Matrix, kModalityCount> proj;
  Matrix enc_bias;  // 1 x d
  /// Learned stand-ins for missing modalities, 1 x d each.
  std::array<Matrix, kModalityCount> absence;
  Matrix w_query;  // d x d
  Matrix w_key;    // d x d
  /// Value projection over [fused embedding, neighbour target, similarity].
  Matrix w_value;  // (d + 2) x d
  Matrix head_w1;  // d x h
  Matrix head_b1;  // 1 x h
  Matrix head_w2;  // h x 1
  Matrix head_b2;  // 1 x 1
  TargetScaler scaler;

  static Params init(const ModalityDims& dims, std::size_t model_dim, std::size_t hidden,
                     Metric metric, std::uint64_t seed);

  std::vector<ParamRef> refs();
  std::vector<const Matrix*> matrices() const;
};

/// Raw embedding rows of one item; zero vector where a modality is absent.
struct ItemFeatures {
  ModalityMask mask = 0;
  std::array<std::vector<float>, kModalityCount> raw;

  static ItemFeatures from_record(const VideoRecord& record, const ModalityDims& dims);
  static ItemFeatures from_bank(const MemoryBank& bank, std::size_t index);
};

/// One prediction request: a target and its neighbour list.
struct Query {
  ItemFeatures target;
  RetrievalResult neighbors;
};

/// Fused target encoding (1 x d): tanh of the summed projections of the
/// available modalities plus absence vectors for the missing ones.
MatrixD encode_target(const VideoRecord& record, const Params& params);

/// Keys and values (n x d each) for the neighbours. Throws UsageError when
/// the neighbour list is empty.
std::pair<MatrixD, MatrixD> encode_neighbors(const RetrievalResult& neighbors,
                                             const MemoryBank& bank, const Params& params);

/// softmax(q K^T / sqrt(d)) V for a single query row.
MatrixD cross_attention(const MatrixD& q, const MatrixD& keys, const MatrixD& values);

/// Attention weights of the same computation (1 x n).
MatrixD attention_weights(const MatrixD& q, const MatrixD& keys);

/// Builds the batched forward graph; returns the n x 1 standardized
/// predictions. `param_vars` follows Params::refs() order.
ad::Var forward(ad::Tape& tape, std::span<const ad::Var> param_vars, const Params& params,
                std::span<const Query* const> queries, const MemoryBank& bank);

/// End-to-end prediction in transformed space. `exclude_id` removes an
/// item from retrieval (leave-one-out). Throws UsageError when the record
/// has no modality or no eligible neighbour exists.
double predict(const VideoRecord& record, const MemoryBank& bank, const Params& params,
               std::size_t k, const std::optional<std::string>& exclude_id = std::nullopt);

/// Batched predictions for prepared queries (transformed space).
std::vector<double> predict_queries(std::span<const Query> queries, const MemoryBank& bank,
                                    const Params& params);

/// Prepares queries with leave-one-out retrieval. Records whose neighbour
/// list comes back empty get std::nullopt.
std::vector<std::optional<Query>> prepare_queries(const std::vector<VideoRecord>& records,
                                                  const MemoryBank& bank, std::size_t k);

struct ModelConfig {
  std::size_t model_dim = 64;
  std::size_t hidden = 64;
  TrainConfig train;
};

struct TrainResult {
  Params params;
  LossHistory history;
};

/// Trains one metric's model with Adam on the MSE of standardized
/// transformed targets. Training queries retrieve with themselves excluded.
/// With an empty `val`, runs the fixed epoch count and records a warning.
TrainResult train(const std::vector<VideoRecord>& train_set, const std::vector<VideoRecord>& val,
                  const MemoryBank& bank, Metric metric, const TargetTransform& transform,
                  const ModelConfig& config);

}  // namespace mmpop::xattn
