#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmpop/completion.hpp"
#include "mmpop/config.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/memory_bank.hpp"
#include "mmpop/xattn.hpp"

namespace mmpop::ensemble {

inline constexpr std::size_t kSynthesisInputs = 4;

/// Inputs of the synthesis network for one record.
struct SynthesisFeatures {
  double xattn = 0.0;       // retrieval-branch prediction (transformed space)
  double completion = 0.0;  // completion-branch prediction (transformed space)
  double mean_similarity = 0.0;
  std::size_t neighbor_count = 0;

  friend bool operator==(const SynthesisFeatures&, const SynthesisFeatures&) = default;
};

/// 4 -> h -> 1 perceptron fusing the branch outputs.
struct SynthesisParams {
  std::size_t hidden = 64;
  Matrix w1;  // 4 x h
  Matrix b1;  // 1 x h
  Matrix w2;  // h x 1
  Matrix b2;  // 1 x 1
  TargetScaler scaler;

  static SynthesisParams init(std::size_t hidden, std::uint64_t seed);
  std::vector<ParamRef> refs();
  std::vector<const Matrix*> matrices() const;
};

/// Network input row: branch predictions standardized by the scaler, mean
/// similarity, log(1 + neighbour count).
std::array<double, kSynthesisInputs> synthesis_inputs(const SynthesisFeatures& f,
                                                      const TargetScaler& scaler);

/// Batched synthesis graph; n x 1 standardized output.
ad::Var synthesis_forward(ad::Tape& tape, std::span<const ad::Var> param_vars,
                          const SynthesisParams& params, std::span<const SynthesisFeatures> rows);

/// Synthesis outputs in transformed space.
std::vector<double> synthesize(const SynthesisParams& params, std::span<const SynthesisFeatures> rows);

struct SynthesisTrainResult {
  SynthesisParams params;
  LossHistory history;
};

/// Adam on MSE in (standardized) transformed space, early-stopped on the
/// validation rows when present.
SynthesisTrainResult train_synthesis(std::span<const SynthesisFeatures> train_rows,
                                     std::span<const double> train_targets,
                                     std::span<const SynthesisFeatures> val_rows,
                                     std::span<const double> val_targets, std::size_t hidden,
                                     const TrainConfig& config);

/// Trained models of one variant for one metric.
struct MetricModels {
  xattn::Params xattn;
  completion::Params completion;
  SynthesisParams synthesis;
};

/// One variant (global C, or one author's R): its memory bank and the four
/// independent per-metric model sets.
struct VariantModel {
  MemoryBank bank;
  std::array<MetricModels, kMetricCount> metrics;
};

enum class Variant { C, R };
std::string_view variant_name(Variant v);

/// Recorded validation MSE (raw-count space) of one author for one metric.
struct AuthorScores {
  std::size_t n_val = 0;
  std::optional<double> c_mse;
  std::optional<double> r_mse;
  Variant choice = Variant::C;
};

/// R only when its MSE is strictly lower; ties and a missing R go to C.
Variant choose_variant(const AuthorScores& scores);

/// Authors with at least `min_samples` records in `train`, ascending.
std::vector<std::string> eligible_authors(const std::vector<VideoRecord>& train,
                                          std::size_t min_samples);

struct TrainingLog {
  std::string variant;  // "C" or author id
  Metric metric = Metric::hearts;
  std::string role;     // "xattn", "completion", "synthesis"
  LossHistory history;
};

struct TrainedEnsemble {
  RunConfig config;
  ModalityDims dims{};
  VariantModel global;
  std::map<std::string, VariantModel> per_author;
  /// Per metric: author -> scores and E selection.
  std::array<std::map<std::string, AuthorScores>, kMetricCount> scores;
  std::vector<TrainingLog> logs;

  TargetTransform transform() const { return TargetTransform{config.transform}; }
  /// E routing; authors without a recorded choice are served by C.
  Variant select(Metric m, const std::string& author) const;
  const VariantModel& model(Variant v, const std::string& author) const;
};

/// Branch features for `records` from a variant's models for one metric.
/// Records with no eligible neighbour fall back to the completion prediction
/// for the retrieval input (similarity 0, count 0). Leave-one-out retrieval
/// is applied by video id.
std::vector<SynthesisFeatures> branch_features(const std::vector<VideoRecord>& records,
                                               const MemoryBank& bank, const MetricModels& models,
                                               std::size_t k);

/// Fold (0 or 1) of each training record: each author's records are
/// shuffled with a seeded generator and dealt alternately, starting on the
/// currently smaller fold. Throws UsageError with fewer than 2 records.
std::vector<int> crossfit_folds(const std::vector<VideoRecord>& train, std::uint64_t seed);

/// Out-of-fold branch features for every training record: a seeded
/// author-stratified 2-fold partition, where each fold's features come from
/// branch models trained (with an inner early-stopping split) on the other
/// fold. Throws UsageError when a fold has an empty training side.
std::vector<SynthesisFeatures> crossfit_module_outputs(const std::vector<VideoRecord>& train,
                                                       const std::vector<VideoRecord>& unlabeled,
                                                       const ModalityDims& dims, Metric metric,
                                                       const RunConfig& config,
                                                       std::uint64_t seed);

/// Trains bank + xattn + completion + synthesis for all four metrics.
VariantModel train_variant(const std::vector<VideoRecord>& train,
                           const std::vector<VideoRecord>& val,
                           const std::vector<VideoRecord>& unlabeled, const ModalityDims& dims,
                           const RunConfig& config, const std::string& label,
                           std::vector<TrainingLog>* logs = nullptr);

/// C on all authors, R per author with >= min_author_samples training
/// records, and the per-author, per-metric selection E = argmin val MSE
/// (ties and missing R go to C).
TrainedEnsemble train_variants(const std::vector<VideoRecord>& train,
                               const std::vector<VideoRecord>& val,
                               const std::vector<VideoRecord>& unlabeled,
                               const ModalityDims& dims, const RunConfig& config);

struct PredictionRow {
  std::string video_id;
  PopularityTargets predicted;
};

/// Which model serves a prediction.
enum class Routing { selected, global_only, author_only };

/// Transformed-space synthesis outputs for every record and metric.
/// `author_only` leaves records without an R model as nullopt.
std::vector<std::array<std::optional<double>, kMetricCount>> predict_transformed(
    const std::vector<VideoRecord>& records, const TrainedEnsemble& ensemble,
    Routing routing = Routing::selected);

/// Raw-count predictions (inverse transform, clamp at 0, rounded).
std::vector<PredictionRow> predict_rows(const std::vector<VideoRecord>& records,
                                        const TrainedEnsemble& ensemble);

/// Throws UsageError when the record has no modality.
PredictionRow predict_final(const VideoRecord& record, const TrainedEnsemble& ensemble);

/// `video_id,hearts,shares,comments,plays` with one row per prediction.
std::string predictions_csv(const std::vector<PredictionRow>& rows);

}  // namespace mmpop::ensemble
