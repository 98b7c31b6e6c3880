#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmpop/completion.hpp"
#include "mmpop/config.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/ensemble.hpp"
#include "mmpop/memory_bank.hpp"
#include "mmpop/rng.hpp"
#include "mmpop/xattn.hpp"

namespace testfx {

/// Labeled, playable synthetic records with small embeddings.
std::vector<mmpop::VideoRecord> synthetic(std::size_t n, std::size_t authors, std::size_t dim,
                                          double noise, std::uint64_t seed,
                                          double missing_rate = 0.0);

/// Fresh unlabeled videos drawn from the same world as `synthetic` with the
/// same seed (appended after the labeled block by the generator).
std::vector<mmpop::VideoRecord> synthetic_unlabeled(std::size_t n_labeled, std::size_t authors,
                                                    std::size_t dim, double noise,
                                                    std::uint64_t seed, std::size_t n_unlabeled);

/// A quick configuration for unit-scale training.
mmpop::RunConfig small_config(std::size_t dim);

/// Worst relative gradient error of the full branch graphs on a 3-record
/// toy instance with model dimension `d`.
double xattn_gradient_error(std::size_t d, std::uint64_t seed);
double completion_gradient_error(std::size_t d, std::uint64_t seed);
double synthesis_gradient_error(std::size_t hidden, std::uint64_t seed);

/// A small labeled world: four authors, the last one trimmed to 8 videos
/// so it stays below the per-author model threshold.
struct SmallWorld {
  std::vector<mmpop::VideoRecord> train, val, unlabeled;
  mmpop::RunConfig config;
};
const SmallWorld& small_world();

/// The ensemble trained on small_world(), built once per process.
const mmpop::ensemble::TrainedEnsemble& small_ensemble();

/// Bank records with embedding entries in {-1, 0, 1} (so exact score ties
/// are common) and each modality missing with probability 0.3.
std::vector<mmpop::VideoRecord> random_bank_records(mmpop::Rng& rng, std::size_t n,
                                                    std::size_t dim);

struct OracleHit {
  std::string id;
  double score;
};

/// Full scan, full sort by (score desc, id asc), then truncation to k.
std::vector<OracleHit> naive_retrieve(const mmpop::MemoryBank& bank,
                                      const mmpop::RetrievalQuery& q, std::size_t k,
                                      const std::optional<std::string>& exclude);

/// Number of (bank, query) pairs where retrieve() differs from
/// naive_retrieve() in ids, order or scores, over `trials` seeded banks.
std::size_t retrieval_mismatches(std::size_t trials, std::uint64_t seed);

/// Textbook two-pass Pearson correlation.
double pearson_two_pass(const std::vector<double>& x, const std::vector<double>& y);

/// Unique empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

std::vector<double> metric_column(const std::vector<mmpop::VideoRecord>& records,
                                  mmpop::Metric m, const mmpop::TargetTransform& t);

}  // namespace testfx
