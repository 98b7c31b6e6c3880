#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mmpop/autodiff.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/rng.hpp"
#include "mmpop/training.hpp"

namespace mmpop::completion {

/// Masking/completion branch for one metric. Visible modalities are encoded,
/// masked ones replaced by learned tokens; the fused representation feeds a
/// prediction head and per-modality reconstruction decoders.
struct Params {
  Metric metric = Metric::hearts;
  std::size_t model_dim = 64;
  std::size_t hidden = 64;
  std::array<Matrix, kModalityCount> enc_w;  // d_m x d
  std::array<Matrix, kModalityCount> enc_b;  // 1 x d
  std::array<Matrix, kModalityCount> token;  // 1 x d
  Matrix fuse_w;                             // d x d
  Matrix fuse_b;                             // 1 x d
  std::array<Matrix, kModalityCount> dec_w;  // d x d_m
  std::array<Matrix, kModalityCount> dec_b;  // 1 x d_m
  Matrix head_w1;                            // d x h
  Matrix head_b1;                            // 1 x h
  Matrix head_w2;                            // h x 1
  Matrix head_b2;                            // 1 x 1
  TargetScaler scaler;

  static Params init(const ModalityDims& dims, std::size_t model_dim, std::size_t hidden,
                     Metric metric, std::uint64_t seed);

  ModalityDims dims() const;
  std::vector<ParamRef> refs();
  std::vector<const Matrix*> matrices() const;
};

/// true = masked (hidden from the encoder).
struct MaskPattern {
  std::array<bool, kModalityCount> masked{};

  std::size_t visible_count() const;
  bool visible(Modality m) const { return !masked[static_cast<std::size_t>(m)]; }
  /// Every available modality of `record` visible.
  static MaskPattern from_availability(const VideoRecord& record);
  /// Only `m` hidden (on top of whatever the record lacks).
  static MaskPattern hide(const VideoRecord& record, Modality m);
};

/// Masks each available modality with probability p; missing modalities
/// count as masked. If everything ends up masked, one available modality
/// chosen uniformly is unmasked. Requires >= 1 available modality.
std::pair<VideoRecord, MaskPattern> mask_modalities(const VideoRecord& record, double p, Rng& rng);

/// Fused representation (1 x d) of a record under a pattern.
MatrixD encode_incomplete(const VideoRecord& record, const MaskPattern& pattern,
                          const Params& params);

/// Decoder outputs per modality (1 x d_m each) from a fused representation.
std::array<MatrixD, kModalityCount> reconstruct(const MatrixD& fused, const Params& params);

/// Prediction in transformed target space. Throws UsageError when the
/// pattern leaves nothing visible.
double predict_from_incomplete(const VideoRecord& record, const MaskPattern& pattern,
                               const Params& params);

std::vector<double> predict_batch(std::span<const VideoRecord> records,
                                  std::span<const MaskPattern> patterns, const Params& params);

/// Rows of one forward pass.
struct BatchInput {
  std::array<MatrixD, kModalityCount> x;        // visible embeddings, zero rows otherwise
  std::array<std::vector<double>, kModalityCount> visible;
  std::array<MatrixD, kModalityCount> truth;    // ground truth where present
  /// 1 where the modality is masked but truly present (reconstruction target).
  std::array<std::vector<double>, kModalityCount> recon_weight;

  static BatchInput build(std::span<const VideoRecord* const> records,
                          std::span<const MaskPattern> patterns, const ModalityDims& dims);
};

struct ForwardOut {
  ad::Var prediction;  // n x 1, standardized
  std::array<ad::Var, kModalityCount> recon;
};

ForwardOut forward(ad::Tape& tape, std::span<const ad::Var> param_vars, const BatchInput& input);

/// Reconstruction loss over masked-but-present slots: the mean of per-row
/// MSE across every contributing (row, modality) pair. Returns nullopt when
/// no slot contributes.
std::optional<ad::Var> reconstruction_loss(ad::Tape& tape, const ForwardOut& out,
                                           const BatchInput& input);

/// Leave-one-modality-out reconstruction MSE: for each record and each
/// available modality (records with >= 2 available), hide it, reconstruct
/// from the rest and average the per-element squared error.
double reconstruction_mse(const std::vector<VideoRecord>& records, const Params& params);

struct Config {
  std::size_t model_dim = 64;
  std::size_t hidden = 64;
  double mask_prob = 0.3;
  double lambda = 0.5;
  TrainConfig train;
};

struct TrainResult {
  Params params;
  LossHistory history;
  /// Samples that fed the reconstruction term (labeled + unlabeled).
  std::size_t recon_samples = 0;
};

/// Minimises L_sup + lambda * L_recon. L_sup is the MSE of standardized
/// transformed targets on labeled samples under fresh masks; L_recon runs
/// over labeled and unlabeled samples. Early-stopped on `val` (full
/// visibility). Throws UsageError when `labeled` is empty.
TrainResult train_semisupervised(const std::vector<VideoRecord>& labeled,
                                 const std::vector<VideoRecord>& val,
                                 const std::vector<VideoRecord>& unlabeled, Metric metric,
                                 const TargetTransform& transform, const Config& config);

/// Plain supervised training on full modalities.
TrainResult train_supervised(const std::vector<VideoRecord>& labeled,
                             const std::vector<VideoRecord>& val, Metric metric,
                             const TargetTransform& transform, Config config);

}  // namespace mmpop::completion
