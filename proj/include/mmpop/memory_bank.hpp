#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmpop/dataset.hpp"
#include "mmpop/matrix.hpp"

namespace mmpop {

/// Bit m set when modality m is available.
using ModalityMask = std::uint8_t;

inline bool mask_has(ModalityMask mask, Modality m) {
  return (mask >> static_cast<unsigned>(m)) & 1U;
}
inline ModalityMask mask_with(ModalityMask mask, Modality m) {
  return static_cast<ModalityMask>(mask | (1U << static_cast<unsigned>(m)));
}

/// Score given to items sharing no modality with the query.
inline constexpr double kExcludedScore = -std::numeric_limits<double>::infinity();

/// Cosine similarity with 64-bit accumulation. Throws UsageError when either
/// vector has zero norm.
double cosine(std::span<const float> u, std::span<const float> v);

/// Mean of `sims` over modalities present in both masks; kExcludedScore when
/// nothing is shared.
double combined_score(const std::array<double, kModalityCount>& sims, ModalityMask query,
                      ModalityMask item);

/// Query side of retrieval: L2-normalized embeddings plus availability.
struct RetrievalQuery {
  std::string video_id;
  ModalityMask mask = 0;
  std::array<std::vector<float>, kModalityCount> unit;
  std::array<float, kModalityCount> norms{};

  /// Zero-norm embeddings are treated as unavailable.
  static RetrievalQuery from_record(const VideoRecord& record);
};

struct Neighbor {
  std::size_t index = 0;
  /// Cosine per modality; 0 where the modality is not shared.
  std::array<double, kModalityCount> sims{};
  double score = 0.0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Neighbor> neighbors;
};

/// Immutable store of training items: per-modality unit-norm embeddings,
/// their original norms, availability masks, ids and transformed targets.
class MemoryBank {
 public:
  MemoryBank() = default;

  /// Throws UsageError on empty input or unlabeled / unplayable records.
  static MemoryBank build(const std::vector<VideoRecord>& records, const ModalityDims& dims,
                          const TargetTransform& transform);

  /// Reassembles a bank from stored parts (bundle loading). Validates the
  /// parallel-array and unit-norm invariants; throws DataError on violation.
  static MemoryBank from_parts(ModalityDims dims, std::vector<std::string> ids,
                               std::vector<std::string> authors, std::vector<ModalityMask> masks,
                               std::array<Matrix, kModalityCount> unit,
                               std::array<std::vector<float>, kModalityCount> norms,
                               Matrix targets);

  std::size_t size() const { return ids_.size(); }
  const ModalityDims& dims() const { return dims_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::string& author(std::size_t i) const { return authors_[i]; }
  ModalityMask mask(std::size_t i) const { return masks_[i]; }
  bool available(std::size_t i, Modality m) const { return mask_has(masks_[i], m); }
  std::span<const float> unit(std::size_t i, Modality m) const {
    return unit_[static_cast<std::size_t>(m)].row(i);
  }
  float norm(std::size_t i, Modality m) const { return norms_[static_cast<std::size_t>(m)][i]; }
  /// Transformed target of item i for metric m.
  float target(std::size_t i, Metric m) const { return targets_(i, static_cast<std::size_t>(m)); }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& authors() const { return authors_; }
  const std::vector<ModalityMask>& masks() const { return masks_; }
  const Matrix& unit_matrix(Modality m) const { return unit_[static_cast<std::size_t>(m)]; }
  const std::vector<float>& norms(Modality m) const { return norms_[static_cast<std::size_t>(m)]; }
  const Matrix& targets() const { return targets_; }

 private:
  ModalityDims dims_{};
  std::vector<std::string> ids_;
  std::vector<std::string> authors_;
  std::vector<ModalityMask> masks_;
  std::array<Matrix, kModalityCount> unit_;
  std::array<std::vector<float>, kModalityCount> norms_;
  Matrix targets_;
};

/// Exact top-k by combined score over a full scan. Ordering is score
/// descending, ties by ascending video id. Items sharing no modality and
/// `exclude_id` are never returned. Throws UsageError when k == 0 or the
/// query has no available modality.
RetrievalResult retrieve(const MemoryBank& bank, const RetrievalQuery& query, std::size_t k,
                         const std::optional<std::string>& exclude_id = std::nullopt);
RetrievalResult retrieve(const MemoryBank& bank, const VideoRecord& query, std::size_t k,
                         const std::optional<std::string>& exclude_id = std::nullopt);

}  // namespace mmpop
