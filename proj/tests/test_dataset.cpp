#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "mmpop/dataset.hpp"
#include "mmpop/errors.hpp"

using namespace mmpop;

namespace {

std::string vec_json(std::size_t n, float v) {
  std::string s = "[";
  for (std::size_t i = 0; i < n; ++i) s += (i ? "," : "") + std::to_string(v);
  return s + "]";
}

std::string record_line(const std::string& id, std::size_t dv, const std::string& author = "a1") {
  return R"({"video_id":")" + id + R"(","author_id":")" + author +
         R"(","playable":true,"visual":)" + vec_json(dv, 0.5f) + R"(,"acoustic":)" +
         vec_json(64, 0.25f) + R"(,"textual":null,"targets":{"hearts":1,"shares":2,"comments":3,"plays":4}})";
}

const std::string kHeader = R"({"d_v":64,"d_a":64,"d_t":64})";

std::vector<VideoRecord> labeled_records(std::size_t authors, std::size_t per_author) {
  std::vector<VideoRecord> out;
  for (std::size_t a = 0; a < authors; ++a) {
    for (std::size_t i = 0; i < per_author; ++i) {
      VideoRecord r;
      r.video_id = "v" + std::to_string(a) + "_" + std::to_string(i);
      r.author_id = "author" + std::to_string(a);
      r.modalities[0] = Embedding{1.0f, 0.0f};
      r.targets = PopularityTargets{i, i, i, i};
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("three-line manifest parses with declared dims") {
  std::istringstream in(kHeader + "\n" + record_line("a", 64) + "\n" + record_line("b", 64) + "\n" +
                        record_line("c", 64) + "\n");
  const Manifest m = parse_manifest(in);
  CHECK(m.records.size() == 3);
  const auto rep = summarize(m);
  CHECK(rep.dims == ModalityDims{64, 64, 64});
  CHECK(rep.playable == 3);
  CHECK(rep.labeled == 3);
  CHECK(rep.missing[2] == 3);
  CHECK_FALSE(m.records[0].has(Modality::textual));
  CHECK(m.records[1].targets->comments == 3);
}

TEST_CASE("dimension mismatch is reported with line, modality and both dims") {
  std::istringstream in(kHeader + "\n" + record_line("a", 64) + "\n" + record_line("b", 63) + "\n");
  try {
    (void)parse_manifest(in);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("visual") != std::string::npos);
    CHECK(msg.find("63") != std::string::npos);
    CHECK(msg.find("64") != std::string::npos);
  }
}

TEST_CASE("malformed lines and duplicate ids are data errors") {
  std::istringstream bad(kHeader + "\n{not json\n");
  CHECK_THROWS_AS((void)parse_manifest(bad), DataError);
  std::istringstream dup(kHeader + "\n" + record_line("a", 64) + "\n" + record_line("a", 64) + "\n");
  CHECK_THROWS_WITH_AS((void)parse_manifest(dup), doctest::Contains("line 3"), DataError);
  std::istringstream empty("");
  CHECK_THROWS_AS((void)parse_manifest(empty), DataError);
  std::istringstream neg(kHeader + "\n" +
                         R"({"video_id":"x","author_id":"a","playable":true,"visual":null,"acoustic":null,"textual":null,"targets":null})" +
                         "\n");
  CHECK_THROWS_AS((void)parse_manifest(neg), DataError);
}

TEST_CASE("write then parse reproduces records exactly") {
  SynthConfig c;
  c.n_videos = 40;
  c.n_authors = 4;
  c.missing_rate = 0.3;
  c.n_unplayable = 5;
  c.n_unlabeled = 6;
  const Manifest m = generate_synthetic(c);
  std::stringstream ss;
  write_manifest(ss, m);
  const Manifest back = parse_manifest(ss);
  CHECK(back.dims == m.dims);
  CHECK(back.records == m.records);
}

TEST_CASE("playability filter: 2203 records with 765 damaged keep 1438") {
  SynthConfig c;
  c.n_videos = 2203;
  c.n_unplayable = 765;
  c.dims = {8, 8, 8};
  const Manifest m = generate_synthetic(c);
  CHECK(m.records.size() == 2203);
  CHECK(summarize(m).playable == 1438);
  const auto kept = filter_playable(m.records);
  CHECK(kept.size() == 1438);
  CHECK(filter_playable(kept) == kept);
  for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].video_id < kept[i].video_id);

  std::vector<VideoRecord> none(3);
  for (auto& r : none) r.playable = false;
  CHECK(filter_playable(none).empty());
}

TEST_CASE("split arithmetic") {
  auto one = split(labeled_records(1, 10), 0.8, 1);
  CHECK(one.train.size() == 8);
  CHECK(one.val.size() == 2);

  const auto recs = labeled_records(15, 20);
  const auto s = split(recs, 0.8, 42);
  CHECK(s.train.size() == 240);
  CHECK(s.val.size() == 60);
  std::map<std::string, std::pair<int, int>> per;
  for (const auto& r : s.train) ++per[r.author_id].first;
  for (const auto& r : s.val) ++per[r.author_id].second;
  CHECK(per.size() == 15);
  for (const auto& [a, c] : per) {
    CHECK(c.first == 16);
    CHECK(c.second == 4);
  }

  // Partition: disjoint and covering.
  std::set<std::string> ids;
  for (const auto& r : s.train) ids.insert(r.video_id);
  for (const auto& r : s.val) CHECK(ids.insert(r.video_id).second);
  CHECK(ids.size() == recs.size());

  const auto again = split(recs, 0.8, 42);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);
  const auto other = split(recs, 0.8, 43);
  CHECK(other.train != s.train);
}

TEST_CASE("split per-author fraction stays within 1/n of the ratio") {
  for (std::size_t n : {3u, 7u, 11u, 19u}) {
    const auto s = split(labeled_records(2, n), 0.7, n);
    std::map<std::string, int> tr;
    for (const auto& r : s.train) ++tr[r.author_id];
    for (const auto& [a, c] : tr) CHECK(std::abs(c / static_cast<double>(n) - 0.7) <= 1.0 / n);
  }
}

TEST_CASE("singleton authors go to train with a warning") {
  auto recs = labeled_records(2, 5);
  auto solo = labeled_records(1, 1);
  solo[0].author_id = "solo";
  recs.push_back(solo[0]);
  const auto s = split(recs, 0.8, 3);
  CHECK(s.warnings.size() == 1);
  bool in_train = false;
  for (const auto& r : s.train) in_train |= r.author_id == "solo";
  CHECK(in_train);
}

TEST_CASE("split rejects bad ratios and unlabeled records") {
  auto recs = labeled_records(1, 4);
  CHECK_THROWS_AS((void)split(recs, 0.0, 1), UsageError);
  CHECK_THROWS_AS((void)split(recs, 1.0, 1), UsageError);
  recs[0].targets.reset();
  CHECK_THROWS_AS((void)split(recs, 0.8, 1), UsageError);
}

TEST_CASE("target transforms") {
  const TargetTransform log{TransformKind::log1p};
  const auto z = log.forward(PopularityTargets{0, 0, 0, 0});
  for (double v : z) CHECK(v == 0.0);
  CHECK(log.forward(std::exp(1.0) - 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(log.inverse(log.forward(12345.0)) == 12345u);
  CHECK(log.inverse(-0.4) == 0u);
  CHECK(log.inverse(std::nan("")) == 0u);

  const TargetTransform id{TransformKind::identity};
  CHECK(id.inverse(id.forward(987654321.0)) == 987654321u);
  CHECK(id.inverse(2.6) == 3u);

  // Round trip across magnitudes up to 2^53.
  for (std::uint64_t x = 1; x < (1ULL << 53); x = x * 3 + 1) {
    const auto back = log.inverse(log.forward(static_cast<double>(x)));
    CHECK(std::abs(static_cast<double>(back) - static_cast<double>(x)) <=
          1e-6 * static_cast<double>(x) + 0.5);
  }
  CHECK(parse_transform("identity") == TransformKind::identity);
  CHECK_THROWS_AS(parse_transform("sqrt"), UsageError);
}

TEST_CASE("synthetic generator is seed-determined and has the requested authors") {
  SynthConfig c;
  c.n_videos = 100;
  c.seed = 7;
  std::stringstream a, b;
  write_manifest(a, generate_synthetic(c));
  write_manifest(b, generate_synthetic(c));
  CHECK(a.str() == b.str());

  c.n_authors = 15;
  c.n_videos = 300;
  std::set<std::string> authors;
  for (const auto& r : generate_synthetic(c).records) authors.insert(r.author_id);
  CHECK(authors.size() == 15);

  SynthConfig bad;
  bad.dims = {3, 8, 8};
  CHECK_THROWS_AS((void)generate_synthetic(bad), UsageError);
  bad = SynthConfig{};
  bad.n_authors = 0;
  CHECK_THROWS_AS((void)generate_synthetic(bad), UsageError);
}

TEST_CASE("missing-rate drops modalities but keeps at least one") {
  SynthConfig c;
  c.n_videos = 300;
  c.missing_rate = 0.6;
  const auto m = generate_synthetic(c);
  std::size_t missing = 0;
  for (const auto& r : m.records) {
    CHECK(r.available_count() >= 1);
    missing += kModalityCount - r.available_count();
  }
  CHECK(missing > 0);
}

}  // TEST_SUITE
