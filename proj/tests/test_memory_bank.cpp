#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "mmpop/errors.hpp"
#include "mmpop/memory_bank.hpp"
#include "mmpop/rng.hpp"

using namespace mmpop;

namespace {

const TargetTransform kLog{TransformKind::log1p};

VideoRecord make(const std::string& id, std::array<std::optional<Embedding>, 3> mods) {
  VideoRecord r;
  r.video_id = id;
  r.author_id = "a";
  r.modalities = std::move(mods);
  r.targets = PopularityTargets{1, 2, 3, 4};
  return r;
}

std::vector<std::string> ids_of(const MemoryBank& bank, const RetrievalResult& r) {
  std::vector<std::string> out;
  for (const auto& n : r.neighbors) out.push_back(bank.id(n.index));
  return out;
}

}  // namespace

TEST_SUITE("memorybank") {

TEST_CASE("cosine hand cases") {
  const std::vector<float> a = {1, 1}, b = {1, 0}, c = {0, 1};
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  CHECK(cosine(b, c) == 0.0);
  CHECK(cosine(a, b) == doctest::Approx(0.70710678).epsilon(1e-8));
  const std::vector<float> z = {0, 0};
  CHECK_THROWS_AS((void)cosine(a, z), UsageError);
}

TEST_CASE("combined score is the mean over shared modalities") {
  CHECK(combined_score({0.6, 0.8, 1.0}, 0b111, 0b111) == doctest::Approx(0.8));
  CHECK(combined_score({0.1, 0.2, 0.9}, 0b100, 0b111) == doctest::Approx(0.9));
  CHECK(combined_score({0.1, 0.2, 0.9}, 0b001, 0b110) == kExcludedScore);
}

TEST_CASE("build normalizes, guards zero vectors and is deterministic") {
  auto r = make("x", {Embedding{0, 0}, Embedding{3, 4}, std::nullopt});
  const auto bank = MemoryBank::build({r}, {2, 2, 2}, kLog);
  CHECK(bank.size() == 1);
  CHECK_FALSE(bank.available(0, Modality::visual));
  CHECK(bank.available(0, Modality::acoustic));
  CHECK(bank.norm(0, Modality::acoustic) == doctest::Approx(5.0));
  CHECK(bank.unit(0, Modality::acoustic)[0] == doctest::Approx(0.6));

  Rng rng(4);
  const auto recs = testfx::random_bank_records(rng, 30, 4);
  const auto a = MemoryBank::build(recs, {4, 4, 4}, kLog);
  const auto b = MemoryBank::build(recs, {4, 4, 4}, kLog);
  CHECK(a.ids() == b.ids());
  CHECK(a.unit_matrix(Modality::visual) == b.unit_matrix(Modality::visual));
  CHECK(a.targets() == b.targets());

  CHECK_THROWS_AS((void)MemoryBank::build({}, {2, 2, 2}, kLog), UsageError);
  r.targets.reset();
  CHECK_THROWS_AS((void)MemoryBank::build({r}, {2, 2, 2}, kLog), UsageError);
}

TEST_CASE("retrieve hand case, exclusion and k clamp") {
  // Visual-only items with cosines 0.9, 0.5, 0.1 to the query (1, 0).
  auto at = [](double c) { return Embedding{static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))}; };
  std::vector<VideoRecord> recs = {make("A", {at(0.9), std::nullopt, std::nullopt}),
                                   make("B", {at(0.5), std::nullopt, std::nullopt}),
                                   make("C", {at(0.1), std::nullopt, std::nullopt})};
  const auto bank = MemoryBank::build(recs, {2, 2, 2}, kLog);
  auto q = make("Q", {Embedding{1, 0}, std::nullopt, std::nullopt});
  auto res = retrieve(bank, q, 2);
  CHECK(ids_of(bank, res) == std::vector<std::string>{"A", "B"});
  CHECK(res.neighbors[0].score == doctest::Approx(0.9).epsilon(1e-6));

  CHECK(retrieve(bank, q, 10).neighbors.size() == 3);
  q.video_id = "A";
  CHECK(ids_of(bank, retrieve(bank, q, 10, std::string("A"))) ==
        std::vector<std::string>{"B", "C"});

  const auto none = make("N", {std::nullopt, std::nullopt, std::nullopt});
  CHECK_THROWS_AS((void)retrieve(bank, none, 3), UsageError);
  CHECK_THROWS_AS((void)retrieve(bank, q, 0), UsageError);

  // An item sharing no modality with the query is never returned.
  const auto textual_q = make("T", {std::nullopt, std::nullopt, Embedding{1, 0}});
  CHECK(retrieve(bank, textual_q, 5).neighbors.empty());
}

TEST_CASE("retrieve equals a naive full-sort oracle on 100 random banks") {
  CHECK(testfx::retrieval_mismatches(100, 1000) == 0);
}

TEST_CASE("permuting bank insertion order never changes the result") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(50 + trial);
    auto recs = testfx::random_bank_records(rng, 60, 3);
    const auto a = MemoryBank::build(recs, {3, 3, 3}, kLog);
    rng.shuffle(recs);
    const auto b = MemoryBank::build(recs, {3, 3, 3}, kLog);
    const auto q = testfx::random_bank_records(rng, 1, 3).front();
    const auto ra = retrieve(a, q, 12), rb = retrieve(b, q, 12);
    CHECK(ids_of(a, ra) == ids_of(b, rb));
    for (std::size_t j = 0; j < ra.neighbors.size(); ++j) {
      CHECK(ra.neighbors[j].score == rb.neighbors[j].score);
    }
  }
}

TEST_CASE("raising one item's similarity never lowers its rank") {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    Rng rng(300 + trial);
    auto recs = testfx::random_bank_records(rng, 40, 4);
    const auto q = make("q", {Embedding{1, -1, 0, 1}, std::nullopt, std::nullopt});
    const auto bank = MemoryBank::build(recs, {4, 4, 4}, kLog);
    const auto before = ids_of(bank, retrieve(bank, q, recs.size()));
    if (before.empty()) continue;
    const std::string target = before[rng.index(before.size())];
    for (auto& r : recs) {
      if (r.video_id == target) r.modalities[0] = q.modalities[0];
    }
    const auto bank2 = MemoryBank::build(recs, {4, 4, 4}, kLog);
    const auto after = ids_of(bank2, retrieve(bank2, q, recs.size()));
    const auto pos = [&](const std::vector<std::string>& v) {
      return std::find(v.begin(), v.end(), target) - v.begin();
    };
    CHECK(pos(after) <= pos(before));
  }
}

TEST_CASE("from_parts validates unit norms and lengths") {
  Rng rng(9);
  const auto recs = testfx::random_bank_records(rng, 5, 3);
  const auto bank = MemoryBank::build(recs, {3, 3, 3}, kLog);
  std::array<Matrix, 3> unit = {bank.unit_matrix(Modality::visual),
                                bank.unit_matrix(Modality::acoustic),
                                bank.unit_matrix(Modality::textual)};
  std::array<std::vector<float>, 3> norms = {bank.norms(Modality::visual),
                                             bank.norms(Modality::acoustic),
                                             bank.norms(Modality::textual)};
  const auto copy = MemoryBank::from_parts(bank.dims(), bank.ids(), bank.authors(), bank.masks(),
                                           unit, norms, bank.targets());
  CHECK(copy.ids() == bank.ids());

  auto bad_unit = unit;
  for (std::size_t i = 0; i < 5; ++i) {
    if (bank.available(i, Modality::visual)) {
      bad_unit[0](i, 0) += 0.5f;
      break;
    }
  }
  CHECK_THROWS_AS((void)MemoryBank::from_parts(bank.dims(), bank.ids(), bank.authors(),
                                               bank.masks(), bad_unit, norms, bank.targets()),
                  DataError);
  auto short_ids = bank.ids();
  short_ids.pop_back();
  CHECK_THROWS_AS((void)MemoryBank::from_parts(bank.dims(), short_ids, bank.authors(), bank.masks(),
                                               unit, norms, bank.targets()),
                  DataError);
}

}  // TEST_SUITE
