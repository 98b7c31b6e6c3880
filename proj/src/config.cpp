#include "mmpop/config.hpp"

#include <json.hpp>

#include "mmpop/errors.hpp"
#include "mmpop/io.hpp"

namespace mmpop {

using nlohmann::json;

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string(name) + " must be positive");
  };
  for (std::size_t d : dims) positive(d, "dims");
  positive(model_dim, "model_dim");
  positive(hidden, "hidden");
  positive(k, "k");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  positive(patience, "patience");
  positive(synthesis_epochs, "synthesis_epochs");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw UsageError("mask_prob must be in [0, 1]");
  if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("ratio must be in (0, 1)");
}

std::string RunConfig::to_json() const {
  json j = json::object();
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["model_dim"] = model_dim;
  j["hidden"] = hidden;
  j["k"] = k;
  j["mask_prob"] = mask_prob;
  j["lambda"] = lambda;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["patience"] = patience;
  j["synthesis_epochs"] = synthesis_epochs;
  j["min_author_samples"] = min_author_samples;
  j["transform"] = std::string(transform_name(transform));
  j["ratio"] = ratio;
  j["seed"] = seed;
  j["threads"] = threads;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& v = it.value();
      if (key == "dims") {
        if (!v.is_array() || v.size() != kModalityCount) {
          throw UsageError("dims must be an array of three integers");
        }
        for (std::size_t i = 0; i < kModalityCount; ++i) c.dims[i] = v[i].get<std::size_t>();
      } else if (key == "model_dim") {
        c.model_dim = v.get<std::size_t>();
      } else if (key == "hidden") {
        c.hidden = v.get<std::size_t>();
      } else if (key == "k") {
        c.k = v.get<std::size_t>();
      } else if (key == "mask_prob") {
        c.mask_prob = v.get<double>();
      } else if (key == "lambda") {
        c.lambda = v.get<double>();
      } else if (key == "lr") {
        c.lr = v.get<double>();
      } else if (key == "epochs") {
        c.epochs = v.get<std::size_t>();
      } else if (key == "batch_size") {
        c.batch_size = v.get<std::size_t>();
      } else if (key == "patience") {
        c.patience = v.get<std::size_t>();
      } else if (key == "synthesis_epochs") {
        c.synthesis_epochs = v.get<std::size_t>();
      } else if (key == "min_author_samples") {
        c.min_author_samples = v.get<std::size_t>();
      } else if (key == "transform") {
        c.transform = parse_transform(v.get<std::string>());
      } else if (key == "ratio") {
        c.ratio = v.get<double>();
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (key == "threads") {
        c.threads = v.get<std::size_t>();
      } else {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw UsageError("cannot read config " + path.string());
  }
  return from_json(text);
}

}  // namespace mmpop
