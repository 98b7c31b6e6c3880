#include "mmpop/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpop/errors.hpp"

namespace mmpop {

namespace {

double norm2(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine of vectors with lengths " + std::to_string(u.size()) + " and " +
                     std::to_string(v.size()));
  }
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu == 0.0 || nv == 0.0) throw UsageError("cosine similarity undefined for a zero vector");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] / nu) * (v[i] / nv);
  return std::clamp(acc, -1.0, 1.0);
}

double combined_score(const std::array<double, kModalityCount>& sims, ModalityMask query,
                      ModalityMask item) {
  double sum = 0.0;
  int shared = 0;
  for (Modality m : kModalities) {
    if (mask_has(query, m) && mask_has(item, m)) {
      sum += sims[static_cast<std::size_t>(m)];
      ++shared;
    }
  }
  return shared == 0 ? kExcludedScore : sum / shared;
}

RetrievalQuery RetrievalQuery::from_record(const VideoRecord& record) {
  RetrievalQuery q;
  q.video_id = record.video_id;
  for (Modality m : kModalities) {
    if (!record.has(m)) continue;
    const auto& e = record.embedding(m);
    const double n = norm2(e);
    if (n == 0.0) continue;
    const auto mi = static_cast<std::size_t>(m);
    q.unit[mi].resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) q.unit[mi][i] = static_cast<float>(e[i] / n);
    q.norms[mi] = static_cast<float>(n);
    q.mask = mask_with(q.mask, m);
  }
  return q;
}

MemoryBank MemoryBank::build(const std::vector<VideoRecord>& records, const ModalityDims& dims,
                             const TargetTransform& transform) {
  if (records.empty()) throw UsageError("memory bank needs at least one record");
  MemoryBank b;
  b.dims_ = dims;
  const std::size_t n = records.size();
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    b.unit_[m] = Matrix(n, dims[m]);
    b.norms_[m].assign(n, 0.0F);
  }
  b.targets_ = Matrix(n, kMetricCount);
  b.masks_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    if (!r.playable || !r.labeled()) {
      throw UsageError("memory bank record " + r.video_id + " must be playable and labeled");
    }
    b.ids_.push_back(r.video_id);
    b.authors_.push_back(r.author_id);
    RetrievalQuery q = RetrievalQuery::from_record(r);
    for (Modality m : kModalities) {
      const auto mi = static_cast<std::size_t>(m);
      if (!mask_has(q.mask, m)) continue;
      if (q.unit[mi].size() != dims[mi]) {
        throw UsageError("memory bank record " + r.video_id + ": " +
                         std::string(modality_name(m)) + " dim " +
                         std::to_string(q.unit[mi].size()) + " != " + std::to_string(dims[mi]));
      }
      std::copy(q.unit[mi].begin(), q.unit[mi].end(), b.unit_[mi].row(i).begin());
      b.norms_[mi][i] = q.norms[mi];
    }
    b.masks_[i] = q.mask;
    const auto t = transform.forward(*r.targets);
    for (std::size_t k = 0; k < kMetricCount; ++k) b.targets_(i, k) = static_cast<float>(t[k]);
  }
  return b;
}

MemoryBank MemoryBank::from_parts(ModalityDims dims, std::vector<std::string> ids,
                                  std::vector<std::string> authors,
                                  std::vector<ModalityMask> masks,
                                  std::array<Matrix, kModalityCount> unit,
                                  std::array<std::vector<float>, kModalityCount> norms,
                                  Matrix targets) {
  const std::size_t n = ids.size();
  if (n == 0 || authors.size() != n || masks.size() != n || targets.rows() != n ||
      targets.cols() != kMetricCount) {
    throw DataError("memory bank parts have inconsistent lengths");
  }
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (unit[m].rows() != n || unit[m].cols() != dims[m] || norms[m].size() != n) {
      throw DataError("memory bank " + std::string(modality_name(kModalities[m])) +
                      " block has shape " + unit[m].shape());
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask_has(masks[i], kModalities[m])) continue;
      if (std::abs(norm2(unit[m].row(i)) - 1.0) > 1e-5) {
        throw DataError("memory bank embedding " + ids[i] + " is not unit norm");
      }
    }
  }
  MemoryBank b;
  b.dims_ = dims;
  b.ids_ = std::move(ids);
  b.authors_ = std::move(authors);
  b.masks_ = std::move(masks);
  b.unit_ = std::move(unit);
  b.norms_ = std::move(norms);
  b.targets_ = std::move(targets);
  return b;
}

RetrievalResult retrieve(const MemoryBank& bank, const RetrievalQuery& query, std::size_t k,
                         const std::optional<std::string>& exclude_id) {
  if (k == 0) throw UsageError("retrieve needs k >= 1");
  if (query.mask == 0) {
    throw UsageError("query " + query.video_id + " has no available modality");
  }
  std::vector<Neighbor> cand;
  cand.reserve(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (exclude_id && bank.id(i) == *exclude_id) continue;
    Neighbor nb;
    nb.index = i;
    for (Modality m : kModalities) {
      if (!mask_has(query.mask, m) || !bank.available(i, m)) continue;
      const auto mi = static_cast<std::size_t>(m);
      nb.sims[mi] = dot(query.unit[mi], bank.unit(i, m));
    }
    nb.score = combined_score(nb.sims, query.mask, bank.mask(i));
    if (nb.score == kExcludedScore) continue;
    cand.push_back(nb);
  }
  auto before = [&bank](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return bank.id(a.index) < bank.id(b.index);
  };
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(take), cand.end(), before);
  cand.resize(take);
  return RetrievalResult{query.video_id, std::move(cand)};
}

RetrievalResult retrieve(const MemoryBank& bank, const VideoRecord& query, std::size_t k,
                         const std::optional<std::string>& exclude_id) {
  return retrieve(bank, RetrievalQuery::from_record(query), k, exclude_id);
}

}  // namespace mmpop
