#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"
#include "mmpop/cli.hpp"

namespace fs = std::filesystem;
using mmpop::cli::run;

namespace {

struct Captured {
  int code = 0;
  std::string out;
};

Captured capture(const std::vector<std::string>& args) {
  std::ostringstream buf;
  auto* old = std::cout.rdbuf(buf.rdbuf());
  Captured c;
  try {
    c.code = run(args);
  } catch (...) {
    std::cout.rdbuf(old);
    throw;
  }
  std::cout.rdbuf(old);
  c.out = buf.str();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Synthetic manifest plus a quick config inside `dir`.
void prepare(const fs::path& dir, std::size_t videos) {
  REQUIRE(run({"-q", "synth", "--out", (dir / "m.jsonl").string(), "--videos",
               std::to_string(videos), "--authors", "3", "--dims", "6,6,6", "--unlabeled", "15",
               "--unlabeled-out", (dir / "u.jsonl").string()}) == 0);
  auto cfg = testfx::small_config(6);
  cfg.epochs = 4;
  cfg.synthesis_epochs = 10;
  std::ofstream(dir / "c.json") << cfg.to_json();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run(std::vector<std::string>{}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"train", "--manifest", "x.jsonl"}) == 1);
  CHECK(run({"synth", "--out", "x.jsonl", "--videos", "many"}) == 1);
}

TEST_CASE("synth, validate and split") {
  const auto dir = testfx::temp_dir("cli-synth");
  const auto m = (dir / "m.jsonl").string();
  CHECK(run({"-q", "synth", "--out", m, "--videos", "40", "--authors", "4", "--unplayable", "5",
             "--dims", "8,8,8"}) == 0);
  const auto v = capture({"-q", "validate", "--manifest", m});
  CHECK(v.code == 0);
  CHECK(v.out.find("records") != std::string::npos);
  CHECK(v.out.find("40") != std::string::npos);
  CHECK(v.out.find("35") != std::string::npos);

  CHECK(run({"-q", "split", "--manifest", m, "--train-out", (dir / "t.jsonl").string(), "--val-out",
             (dir / "v.jsonl").string()}) == 0);
  CHECK(count_lines(slurp(dir / "t.jsonl")) + count_lines(slurp(dir / "v.jsonl")) == 35 + 2);

  // The synthetic run needs an unlabeled target when unlabeled videos are asked for.
  CHECK(run({"-q", "synth", "--out", (dir / "n.jsonl").string(), "--unlabeled", "3"}) == 1);
  CHECK_FALSE(fs::exists(dir / "n.jsonl"));
  fs::remove_all(dir);
}

TEST_CASE("data errors exit 2 and write nothing") {
  const auto dir = testfx::temp_dir("cli-data");
  CHECK(run({"-q", "validate", "--manifest", (dir / "absent.jsonl").string()}) == 2);
  std::ofstream(dir / "bad.jsonl") << "{\"d_v\":4,\"d_a\":4,\"d_t\":4}\n{broken\n";
  CHECK(run({"-q", "train", "--manifest", (dir / "bad.jsonl").string(), "--out-bundle",
             (dir / "b.bundle").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "b.bundle"));
  CHECK(run({"-q", "predict", "--bundle", (dir / "absent.bundle").string(), "--manifest",
             (dir / "bad.jsonl").string(), "--out", (dir / "p.csv").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "p.csv"));
  fs::remove_all(dir);
}

TEST_CASE("a bad config is a usage error and writes no bundle") {
  const auto dir = testfx::temp_dir("cli-config");
  prepare(dir, 60);
  std::ofstream(dir / "bad.json") << R"({"epochz": 3})";
  CHECK(run({"-q", "train", "--manifest", (dir / "m.jsonl").string(), "--config",
             (dir / "bad.json").string(), "--out-bundle", (dir / "b.bundle").string()}) == 1);
  CHECK(run({"-q", "train", "--manifest", (dir / "m.jsonl").string(), "--config",
             (dir / "c.json").string(), "--lr", "-1", "--out-bundle",
             (dir / "b.bundle").string()}) == 1);
  CHECK_FALSE(fs::exists(dir / "b.bundle"));
  fs::remove_all(dir);
}

TEST_CASE("train, evaluate and predict end to end; reruns are byte-identical") {
  const auto dir = testfx::temp_dir("cli-e2e");
  prepare(dir, 90);
  const auto m = (dir / "m.jsonl").string(), u = (dir / "u.jsonl").string(),
             c = (dir / "c.json").string();
  for (const char* name : {"a.bundle", "b.bundle"}) {
    REQUIRE(run({"-q", "train", "--manifest", m, "--unlabeled", u, "--config", c, "--out-bundle",
                 (dir / name).string()}) == 0);
  }
  CHECK(slurp(dir / "a.bundle") == slurp(dir / "b.bundle"));
  CHECK(fs::exists(dir / "a.bundle.history.json"));

  const auto e = capture({"-q", "evaluate", "--bundle", (dir / "a.bundle").string(), "--manifest",
                          m, "--report", (dir / "r.json").string()});
  CHECK(e.code == 0);
  CHECK(e.out.find("HEART MSE") != std::string::npos);
  CHECK(fs::exists(dir / "r.json"));

  const auto p1 = (dir / "p1.csv").string(), p2 = (dir / "p2.csv").string();
  CHECK(run({"-q", "predict", "--bundle", (dir / "a.bundle").string(), "--manifest", u, "--out",
             p1}) == 0);
  CHECK(run({"-q", "predict", "--bundle", (dir / "b.bundle").string(), "--manifest", u, "--out",
             p2}) == 0);
  const auto csv = slurp(p1);
  CHECK(csv == slurp(p2));
  CHECK(csv.rfind("video_id,hearts,shares,comments,plays\n", 0) == 0);
  CHECK(count_lines(csv) == 15 + 1);
  fs::remove_all(dir);
}

TEST_CASE("258 test videos give 258 prediction rows") {
  const auto dir = testfx::temp_dir("cli-258");
  prepare(dir, 60);
  REQUIRE(run({"-q", "train", "--manifest", (dir / "m.jsonl").string(), "--config",
               (dir / "c.json").string(), "--out-bundle", (dir / "b.bundle").string()}) == 0);
  REQUIRE(run({"-q", "synth", "--out", (dir / "test.jsonl").string(), "--videos", "258",
               "--authors", "3", "--dims", "6,6,6", "--seed", "99"}) == 0);
  REQUIRE(run({"-q", "predict", "--bundle", (dir / "b.bundle").string(), "--manifest",
               (dir / "test.jsonl").string(), "--out", (dir / "p.csv").string()}) == 0);
  const auto csv = slurp(dir / "p.csv");
  CHECK(count_lines(csv) == 259);
  CHECK(csv.rfind("video_id,hearts,shares,comments,plays\n", 0) == 0);
  fs::remove_all(dir);
}

}  // TEST_SUITE
