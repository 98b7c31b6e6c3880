#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmpop {

enum class Modality : std::size_t { visual = 0, acoustic = 1, textual = 2 };
inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<Modality, kModalityCount> kModalities = {
    Modality::visual, Modality::acoustic, Modality::textual};
std::string_view modality_name(Modality m);

/// Predicted metrics, in report column order.
enum class Metric : std::size_t { hearts = 0, shares = 1, comments = 2, plays = 3 };
inline constexpr std::size_t kMetricCount = 4;
inline constexpr std::array<Metric, kMetricCount> kMetrics = {Metric::hearts, Metric::shares,
                                                              Metric::comments, Metric::plays};
std::string_view metric_name(Metric m);

struct PopularityTargets {
  std::uint64_t hearts = 0;
  std::uint64_t shares = 0;
  std::uint64_t comments = 0;
  std::uint64_t plays = 0;

  std::uint64_t get(Metric m) const;
  std::uint64_t& get(Metric m);
  friend bool operator==(const PopularityTargets&, const PopularityTargets&) = default;
};

using Embedding = std::vector<float>;

struct VideoRecord {
  std::string video_id;
  std::string author_id;
  bool playable = true;
  std::array<std::optional<Embedding>, kModalityCount> modalities;
  std::optional<PopularityTargets> targets;

  bool has(Modality m) const { return modalities[static_cast<std::size_t>(m)].has_value(); }
  const Embedding& embedding(Modality m) const {
    return *modalities[static_cast<std::size_t>(m)];
  }
  std::size_t available_count() const;
  bool labeled() const { return targets.has_value(); }

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

/// Embedding width per modality (d_v, d_a, d_t).
using ModalityDims = std::array<std::size_t, kModalityCount>;

struct ManifestReport {
  ModalityDims dims{};
  std::size_t total = 0;
  std::size_t playable = 0;
  std::size_t labeled = 0;
  /// Playable records lacking each modality.
  std::array<std::size_t, kModalityCount> missing{};
};

struct Manifest {
  ModalityDims dims{};
  std::vector<VideoRecord> records;
};

ManifestReport summarize(const Manifest& manifest);

/// Line-delimited manifest: header object {d_v, d_a, d_t}, then one record per line.
/// Throws DataError naming the offending line.
Manifest parse_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const Manifest& manifest);
/// Writes via a temporary file renamed into place.
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Keeps playable records, preserving order.
std::vector<VideoRecord> filter_playable(const std::vector<VideoRecord>& records);

struct DatasetSplit {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> val;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  std::vector<std::string> warnings;
};

/// Author-stratified split: within each author (records in input order),
/// shuffle with the seeded generator and send floor(ratio * n) to train.
/// Authors with a single record go to train with a warning.
DatasetSplit split(const std::vector<VideoRecord>& records, double ratio, std::uint64_t seed);

enum class TransformKind { log1p, identity };
std::string_view transform_name(TransformKind k);
TransformKind parse_transform(std::string_view name);

struct TargetTransform {
  TransformKind kind = TransformKind::log1p;

  double forward(double count) const;
  /// Clamps at 0, maps back to count space and rounds to the nearest count.
  std::uint64_t inverse(double value) const;
  std::array<double, kMetricCount> forward(const PopularityTargets& t) const;
  PopularityTargets inverse(const std::array<double, kMetricCount>& v) const;
};

struct SynthConfig {
  std::size_t n_videos = 1500;
  std::size_t n_authors = 15;
  ModalityDims dims = {32, 32, 32};
  double noise = 0.05;
  std::uint64_t seed = 42;
  /// Exact number of labeled videos flagged unplayable (embeddings omitted).
  std::size_t n_unplayable = 0;
  /// Per-modality probability that a playable video lacks that modality.
  double missing_rate = 0.0;
  /// Extra unlabeled, playable videos appended after the labeled ones.
  std::size_t n_unlabeled = 0;
};

/// Synthetic world: each author has a style vector, each video a latent
/// factor; modality embeddings are fixed random linear maps of
/// [latent, style] plus Gaussian noise, and each target is
/// exp(affine(latent, style)) rounded to a count.
Manifest generate_synthetic(const SynthConfig& config);

}  // namespace mmpop
