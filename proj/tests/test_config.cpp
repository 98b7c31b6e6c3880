#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "mmpop/config.hpp"
#include "mmpop/errors.hpp"

using namespace mmpop;

TEST_SUITE("config") {

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.model_dim == 64);
  CHECK(c.hidden == 64);
  CHECK(c.k == 10);
  CHECK(c.mask_prob == 0.3);
  CHECK(c.lambda == 0.5);
  CHECK(c.lr == 1e-3);
  CHECK(c.epochs == 60);
  CHECK(c.min_author_samples == 20);
  CHECK(c.ratio == 0.8);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip and partial overrides") {
  RunConfig c;
  c.k = 7;
  c.lr = 2.5e-4;
  c.seed = 1234567890123ULL;
  c.transform = TransformKind::identity;
  c.dims = {8, 16, 24};
  CHECK(RunConfig::from_json(c.to_json()) == c);

  const auto p = RunConfig::from_json(R"({"epochs": 5, "lambda": 0.0})");
  CHECK(p.epochs == 5);
  CHECK(p.lambda == 0.0);
  CHECK(p.k == RunConfig{}.k);

  const auto dir = testfx::temp_dir("config");
  std::ofstream(dir / "c.json") << c.to_json();
  CHECK(RunConfig::load(dir / "c.json") == c);
  CHECK_THROWS_AS((void)RunConfig::load(dir / "missing.json"), UsageError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unknown keys, bad values and out-of-range settings are rejected") {
  CHECK_THROWS_WITH_AS((void)RunConfig::from_json(R"({"epoch": 5})"), doctest::Contains("epoch"),
                       UsageError);
  CHECK_THROWS_AS((void)RunConfig::from_json("[1, 2]"), UsageError);
  CHECK_THROWS_AS((void)RunConfig::from_json("{"), UsageError);
  CHECK_THROWS_AS((void)RunConfig::from_json(R"({"k": "ten"})"), UsageError);
  CHECK_THROWS_AS((void)RunConfig::from_json(R"({"dims": [1, 2]})"), UsageError);
  CHECK_THROWS_AS((void)RunConfig::from_json(R"({"transform": "sqrt"})"), UsageError);

  RunConfig c;
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.mask_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

}  // TEST_SUITE
