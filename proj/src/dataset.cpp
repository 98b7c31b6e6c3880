#include "mmpop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmpop/errors.hpp"
#include "mmpop/io.hpp"
#include "mmpop/rng.hpp"

namespace mmpop {

namespace {

// Float number type so embeddings print and parse as 32-bit values.
using ManifestJson = nlohmann::basic_json<nlohmann::ordered_map, std::vector, std::string, bool,
                                          std::int64_t, std::uint64_t, float>;

constexpr std::array<const char*, kModalityCount> kDimKeys = {"d_v", "d_a", "d_t"};

[[noreturn]] void line_error(std::size_t line, const std::string& what) {
  throw DataError("manifest line " + std::to_string(line) + ": " + what);
}

std::size_t read_dim(const ManifestJson& header, const char* key) {
  auto it = header.find(key);
  if (it == header.end() || !it->is_number_unsigned() || it->get<std::uint64_t>() == 0) {
    line_error(1, std::string("header needs a positive integer ") + key);
  }
  return it->get<std::size_t>();
}

std::optional<Embedding> read_embedding(const ManifestJson& obj, Modality m, std::size_t dim,
                                        std::size_t line) {
  const std::string key(modality_name(m));
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_array()) line_error(line, key + " must be an array or null");
  if (it->size() != dim) {
    line_error(line, key + " has dimension " + std::to_string(it->size()) +
                         " but the header declares " + std::to_string(dim));
  }
  Embedding e;
  e.reserve(dim);
  for (const auto& v : *it) {
    if (!v.is_number()) line_error(line, key + " contains a non-number");
    const float f = v.get<float>();
    if (!std::isfinite(f)) line_error(line, key + " contains a non-finite value");
    e.push_back(f);
  }
  return e;
}

std::uint64_t read_count(const ManifestJson& t, const char* key, std::size_t line) {
  auto it = t.find(key);
  if (it == t.end() || !it->is_number_integer() ||
      (it->is_number_integer() && !it->is_number_unsigned())) {
    line_error(line, std::string("targets.") + key + " must be a nonnegative integer");
  }
  return it->get<std::uint64_t>();
}

VideoRecord parse_record(const ManifestJson& obj, const ModalityDims& dims, std::size_t line) {
  if (!obj.is_object()) line_error(line, "expected an object");
  VideoRecord r;
  auto str_field = [&](const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) {
      line_error(line, std::string(key) + " must be a nonempty string");
    }
    return it->get<std::string>();
  };
  r.video_id = str_field("video_id");
  r.author_id = str_field("author_id");
  auto pl = obj.find("playable");
  if (pl == obj.end() || !pl->is_boolean()) line_error(line, "playable must be a boolean");
  r.playable = pl->get<bool>();
  for (Modality m : kModalities) {
    r.modalities[static_cast<std::size_t>(m)] =
        read_embedding(obj, m, dims[static_cast<std::size_t>(m)], line);
  }
  if (r.playable && r.available_count() == 0) {
    line_error(line, "playable record " + r.video_id + " has no modality");
  }
  auto tg = obj.find("targets");
  if (tg != obj.end() && !tg->is_null()) {
    if (!tg->is_object()) line_error(line, "targets must be an object or null");
    PopularityTargets t;
    t.hearts = read_count(*tg, "hearts", line);
    t.shares = read_count(*tg, "shares", line);
    t.comments = read_count(*tg, "comments", line);
    t.plays = read_count(*tg, "plays", line);
    r.targets = t;
  }
  return r;
}

}  // namespace

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::visual: return "visual";
    case Modality::acoustic: return "acoustic";
    case Modality::textual: return "textual";
  }
  return "?";
}

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::hearts: return "hearts";
    case Metric::shares: return "shares";
    case Metric::comments: return "comments";
    case Metric::plays: return "plays";
  }
  return "?";
}

std::uint64_t PopularityTargets::get(Metric m) const {
  return const_cast<PopularityTargets*>(this)->get(m);
}

std::uint64_t& PopularityTargets::get(Metric m) {
  switch (m) {
    case Metric::hearts: return hearts;
    case Metric::shares: return shares;
    case Metric::comments: return comments;
    case Metric::plays: return plays;
  }
  return hearts;
}

std::size_t VideoRecord::available_count() const {
  return static_cast<std::size_t>(
      std::count_if(modalities.begin(), modalities.end(), [](const auto& e) { return e.has_value(); }));
}

ManifestReport summarize(const Manifest& manifest) {
  ManifestReport rep;
  rep.dims = manifest.dims;
  rep.total = manifest.records.size();
  for (const auto& r : manifest.records) {
    if (r.labeled()) ++rep.labeled;
    if (!r.playable) continue;
    ++rep.playable;
    for (Modality m : kModalities) {
      if (!r.has(m)) ++rep.missing[static_cast<std::size_t>(m)];
    }
  }
  return rep;
}

Manifest parse_manifest(std::istream& in) {
  Manifest out;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || std::all_of(line.begin(), line.end(), [](unsigned char c) {
          return std::isspace(c);
        })) {
      continue;
    }
    ManifestJson obj;
    try {
      obj = ManifestJson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      line_error(lineno, std::string("malformed record: ") + e.what());
    }
    if (!have_header) {
      if (!obj.is_object()) line_error(lineno, "header must be an object");
      try {
        for (std::size_t i = 0; i < kModalityCount; ++i) out.dims[i] = read_dim(obj, kDimKeys[i]);
      } catch (const nlohmann::json::exception& e) {
        line_error(lineno, e.what());
      }
      have_header = true;
      continue;
    }
    VideoRecord r;
    try {
      r = parse_record(obj, out.dims, lineno);
    } catch (const nlohmann::json::exception& e) {
      line_error(lineno, e.what());
    }
    if (!seen.insert(r.video_id).second) {
      line_error(lineno, "duplicate video_id " + r.video_id);
    }
    out.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError("manifest is empty (missing header line)");
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  ManifestJson header = ManifestJson::object();
  for (std::size_t i = 0; i < kModalityCount; ++i) header[kDimKeys[i]] = manifest.dims[i];
  out << header.dump() << '\n';
  for (const auto& r : manifest.records) {
    ManifestJson obj = ManifestJson::object();
    obj["video_id"] = r.video_id;
    obj["author_id"] = r.author_id;
    obj["playable"] = r.playable;
    for (Modality m : kModalities) {
      const std::string key(modality_name(m));
      obj[key] = r.has(m) ? ManifestJson(r.embedding(m)) : ManifestJson(nullptr);
    }
    if (r.targets) {
      ManifestJson t = ManifestJson::object();
      t["hearts"] = r.targets->hearts;
      t["shares"] = r.targets->shares;
      t["comments"] = r.targets->comments;
      t["plays"] = r.targets->plays;
      obj["targets"] = std::move(t);
    } else {
      obj["targets"] = nullptr;
    }
    out << obj.dump() << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ostringstream os;
  write_manifest(os, manifest);
  write_file_atomic(path, os.str());
}

std::vector<VideoRecord> filter_playable(const std::vector<VideoRecord>& records) {
  std::vector<VideoRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [](const VideoRecord& r) { return r.playable; });
  return out;
}

DatasetSplit split(const std::vector<VideoRecord>& records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw UsageError("split ratio must be in (0, 1), got " + std::to_string(ratio));
  }
  std::map<std::string, std::vector<std::size_t>> by_author;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].labeled()) {
      throw UsageError("split needs labeled records; " + records[i].video_id + " has no targets");
    }
    by_author[records[i].author_id].push_back(i);
  }

  DatasetSplit out;
  out.seed = seed;
  out.ratio = ratio;
  std::vector<bool> to_train(records.size(), false);
  Rng rng(seed);
  for (auto& [author, idx] : by_author) {
    if (idx.size() < 2) {
      out.warnings.push_back("author " + author + " has a single record; kept in train");
      to_train[idx.front()] = true;
      continue;
    }
    rng.shuffle(idx);
    const auto n_train =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size()) + 1e-9));
    for (std::size_t j = 0; j < n_train; ++j) to_train[idx[j]] = true;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    (to_train[i] ? out.train : out.val).push_back(records[i]);
  }
  return out;
}

std::string_view transform_name(TransformKind k) {
  return k == TransformKind::log1p ? "log1p" : "identity";
}

TransformKind parse_transform(std::string_view name) {
  if (name == "log1p") return TransformKind::log1p;
  if (name == "identity") return TransformKind::identity;
  throw UsageError("unknown target transform '" + std::string(name) + "'");
}

double TargetTransform::forward(double count) const {
  return kind == TransformKind::log1p ? std::log1p(count) : count;
}

std::uint64_t TargetTransform::inverse(double value) const {
  if (!(value > 0.0)) return 0;  // also maps NaN to 0
  const double raw = kind == TransformKind::log1p ? std::expm1(value) : value;
  constexpr double kMax = 9.0e18;
  if (!(raw < kMax)) return static_cast<std::uint64_t>(kMax);
  return static_cast<std::uint64_t>(std::llround(raw));
}

std::array<double, kMetricCount> TargetTransform::forward(const PopularityTargets& t) const {
  std::array<double, kMetricCount> out{};
  for (Metric m : kMetrics) {
    out[static_cast<std::size_t>(m)] = forward(static_cast<double>(t.get(m)));
  }
  return out;
}

PopularityTargets TargetTransform::inverse(const std::array<double, kMetricCount>& v) const {
  PopularityTargets t;
  for (Metric m : kMetrics) t.get(m) = inverse(v[static_cast<std::size_t>(m)]);
  return t;
}

Manifest generate_synthetic(const SynthConfig& c) {
  if (c.n_authors < 1) throw UsageError("synthetic data needs at least one author");
  for (std::size_t d : c.dims) {
    if (d < 4) throw UsageError("synthetic embedding dims must be >= 4");
  }
  if (c.n_videos < 1) throw UsageError("synthetic data needs at least one video");
  if (c.n_unplayable > c.n_videos) throw UsageError("more unplayable videos than videos");
  if (!(c.noise >= 0.0) || !(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) {
    throw UsageError("noise must be >= 0 and missing_rate in [0, 1)");
  }

  constexpr std::size_t kLatent = 8;
  constexpr std::size_t kStyle = 4;
  constexpr std::size_t kJoint = kLatent + kStyle;
  // Per-metric log-scale offsets: hearts, shares, comments, plays.
  constexpr std::array<double, kMetricCount> kBase = {8.0, 5.0, 4.5, 11.0};

  Rng world(derive_seed(c.seed, {"world"}));
  std::array<std::vector<double>, kModalityCount> maps;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    maps[m].resize(c.dims[m] * kJoint);
    for (auto& v : maps[m]) v = world.normal() / std::sqrt(static_cast<double>(kJoint));
  }
  std::array<std::array<double, kLatent>, kMetricCount> w_latent{};
  std::array<std::array<double, kStyle>, kMetricCount> w_style{};
  for (std::size_t t = 0; t < kMetricCount; ++t) {
    for (auto& v : w_latent[t]) v = world.normal() / std::sqrt(static_cast<double>(kLatent));
    for (auto& v : w_style[t]) v = 0.6 * world.normal() / std::sqrt(static_cast<double>(kStyle));
  }
  std::vector<std::array<double, kStyle>> styles(c.n_authors);
  for (auto& s : styles)
    for (auto& v : s) v = world.normal();

  const int author_width = std::max<int>(2, static_cast<int>(std::to_string(c.n_authors).size()));
  auto author_name = [&](std::size_t a) {
    std::string num = std::to_string(a + 1);
    return "author_" + std::string(static_cast<std::size_t>(author_width) - num.size(), '0') + num;
  };

  const std::size_t total = c.n_videos + c.n_unlabeled;
  Rng rng(derive_seed(c.seed, {"videos"}));
  Manifest out;
  out.dims = c.dims;
  out.records.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    VideoRecord r;
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%06zu", i + 1);
    r.video_id = buf;
    const std::size_t author = i % c.n_authors;
    r.author_id = author_name(author);

    std::array<double, kJoint> u{};
    for (std::size_t j = 0; j < kLatent; ++j) u[j] = rng.normal();
    for (std::size_t j = 0; j < kStyle; ++j) u[kLatent + j] = styles[author][j];

    for (std::size_t m = 0; m < kModalityCount; ++m) {
      Embedding e(c.dims[m]);
      for (std::size_t row = 0; row < c.dims[m]; ++row) {
        double acc = 0.0;
        for (std::size_t j = 0; j < kJoint; ++j) acc += maps[m][row * kJoint + j] * u[j];
        e[row] = static_cast<float>(acc + c.noise * rng.normal());
      }
      r.modalities[m] = std::move(e);
    }
    // Missing-modality draws; at least one modality always survives.
    std::array<bool, kModalityCount> drop{};
    for (auto& d : drop) d = rng.bernoulli(c.missing_rate);
    if (std::all_of(drop.begin(), drop.end(), [](bool d) { return d; })) {
      drop[rng.index(kModalityCount)] = false;
    }
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      if (drop[m]) r.modalities[m].reset();
    }

    PopularityTargets t;
    for (Metric metric : kMetrics) {
      const auto k = static_cast<std::size_t>(metric);
      double logv = kBase[k];
      for (std::size_t j = 0; j < kLatent; ++j) logv += w_latent[k][j] * u[j];
      for (std::size_t j = 0; j < kStyle; ++j) logv += w_style[k][j] * u[kLatent + j];
      t.get(metric) = static_cast<std::uint64_t>(std::llround(std::exp(logv)));
    }
    if (i < c.n_videos) r.targets = t;
    out.records.push_back(std::move(r));
  }

  // Damaged videos: an exact count among the labeled ones, chosen by shuffle.
  if (c.n_unplayable > 0) {
    std::vector<std::size_t> idx(c.n_videos);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng pick(derive_seed(c.seed, {"unplayable"}));
    pick.shuffle(idx);
    for (std::size_t j = 0; j < c.n_unplayable; ++j) {
      auto& r = out.records[idx[j]];
      r.playable = false;
      for (auto& e : r.modalities) e.reset();
    }
  }
  return out;
}

}  // namespace mmpop
