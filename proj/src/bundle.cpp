#include "mmpop/bundle.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <map>

#include <json.hpp>

#include "mmpop/errors.hpp"
#include "mmpop/io.hpp"

namespace mmpop {

using nlohmann::ordered_json;
using namespace ensemble;

namespace {

constexpr std::string_view kMagic = "mmpop-bundle";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xff00U) | ((v << 8) & 0xff0000U) | (v << 24);
  }
  return v;
}

void put_block(std::string& out, const std::string& name, const Matrix& m) {
  out += "block " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  const std::size_t at = out.size();
  out.resize(at + m.size() * 4);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(m.data()[i]));
    std::memcpy(out.data() + at + i * 4, &bits, 4);
  }
  out += "\n";
}

Matrix row_of(const std::vector<float>& v) { return Matrix(1, v.size(), v); }

ordered_json scaler_json(const TargetScaler& s) { return {s.mean, s.scale}; }

TargetScaler scaler_from(const ordered_json& j) {
  if (!j.is_array() || j.size() != 2) throw DataError("bundle: malformed target scaler");
  return TargetScaler{j[0].get<double>(), j[1].get<double>()};
}

std::string metric_key(Metric m) { return std::string(metric_name(m)); }

// Sequential reader over the bundle bytes; every failure is a DataError.
class Reader {
 public:
  explicit Reader(const std::string& bytes) : s_(bytes) {}

  std::string line() {
    const auto nl = s_.find('\n', pos_);
    if (nl == std::string::npos) throw DataError("bundle is truncated");
    std::string out = s_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  std::string_view take(std::size_t n) {
    if (s_.size() - pos_ < n) throw DataError("bundle is truncated");
    std::string_view out(s_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  void expect_newline() {
    if (take(1) != "\n") throw DataError("bundle block is not newline-terminated");
  }

  bool at_end() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::size_t parse_size(std::string_view text, const char* what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw DataError(std::string("bundle: bad ") + what + " '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> words(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const auto sp = line.find(' ', i);
    const auto end = sp == std::string_view::npos ? line.size() : sp;
    out.push_back(line.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

class Blocks {
 public:
  void add(std::string name, Matrix m) {
    if (!map_.emplace(std::move(name), std::move(m)).second) {
      throw DataError("bundle: duplicate block");
    }
  }

  Matrix take(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw DataError("bundle: missing block " + name);
    Matrix m = std::move(it->second);
    map_.erase(it);
    return m;
  }

  Matrix take(const std::string& name, std::size_t rows, std::size_t cols) {
    Matrix m = take(name);
    if (m.rows() != rows || m.cols() != cols) {
      throw DataError("bundle: block " + name + " has shape " + m.shape() + ", expected (" +
                      std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    return m;
  }

  void fill(const std::string& prefix, std::vector<ParamRef> refs) {
    for (auto& r : refs) *r.value = take(prefix + r.name, r.value->rows(), r.value->cols());
  }

  bool empty() const { return map_.empty(); }
  const std::string& first() const { return map_.begin()->first; }

 private:
  std::map<std::string, Matrix> map_;
};

}  // namespace

std::string serialize_bundle(const TrainedEnsemble& ens) {
  ordered_json meta = ordered_json::object();
  meta["format"] = std::string(kMagic);
  meta["version"] = kBundleVersion;
  meta["config"] = ordered_json::parse(ens.config.to_json());
  meta["seed"] = ens.config.seed;
  meta["dims"] = {ens.dims[0], ens.dims[1], ens.dims[2]};

  std::vector<std::pair<std::string, const VariantModel*>> variants;
  variants.emplace_back("", &ens.global);
  for (const auto& [author, vm] : ens.per_author) variants.emplace_back(author, &vm);

  std::string blocks;
  ordered_json vjson = ordered_json::array();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto& [author, vm] = variants[v];
    const std::string prefix = "v" + std::to_string(v) + "/";
    ordered_json vj = ordered_json::object();
    vj["variant"] = v == 0 ? "C" : "R";
    vj["author"] = v == 0 ? ordered_json(nullptr) : ordered_json(author);
    vj["bank_ids"] = vm->bank.ids();
    vj["bank_authors"] = vm->bank.authors();
    ordered_json masks = ordered_json::array();
    for (ModalityMask m : vm->bank.masks()) masks.push_back(static_cast<unsigned>(m));
    vj["bank_masks"] = std::move(masks);
    for (Modality m : kModalities) {
      const std::string mn(modality_name(m));
      put_block(blocks, prefix + "bank/unit_" + mn, vm->bank.unit_matrix(m));
      put_block(blocks, prefix + "bank/norm_" + mn, row_of(vm->bank.norms(m)));
    }
    put_block(blocks, prefix + "bank/targets", vm->bank.targets());

    ordered_json mj = ordered_json::object();
    for (Metric metric : kMetrics) {
      MetricModels models = vm->metrics[static_cast<std::size_t>(metric)];
      const std::string mp = prefix + metric_key(metric) + "/";
      ordered_json one = ordered_json::object();
      one["xattn"] = {{"model_dim", models.xattn.model_dim},
                      {"hidden", models.xattn.hidden},
                      {"scaler", scaler_json(models.xattn.scaler)}};
      one["completion"] = {{"model_dim", models.completion.model_dim},
                           {"hidden", models.completion.hidden},
                           {"scaler", scaler_json(models.completion.scaler)}};
      one["synthesis"] = {{"hidden", models.synthesis.hidden},
                          {"scaler", scaler_json(models.synthesis.scaler)}};
      mj[metric_key(metric)] = std::move(one);
      for (const auto& r : models.xattn.refs()) put_block(blocks, mp + "xattn/" + r.name, *r.value);
      for (const auto& r : models.completion.refs()) {
        put_block(blocks, mp + "completion/" + r.name, *r.value);
      }
      for (const auto& r : models.synthesis.refs()) {
        put_block(blocks, mp + "synthesis/" + r.name, *r.value);
      }
    }
    vj["metrics"] = std::move(mj);
    vjson.push_back(std::move(vj));
  }
  meta["variants"] = std::move(vjson);

  ordered_json scores = ordered_json::object();
  for (Metric metric : kMetrics) {
    ordered_json table = ordered_json::object();
    for (const auto& [author, s] : ens.scores[static_cast<std::size_t>(metric)]) {
      table[author] = {{"n_val", s.n_val},
                       {"c_mse", s.c_mse ? ordered_json(*s.c_mse) : ordered_json(nullptr)},
                       {"r_mse", s.r_mse ? ordered_json(*s.r_mse) : ordered_json(nullptr)},
                       {"choice", std::string(variant_name(s.choice))}};
    }
    scores[metric_key(metric)] = std::move(table);
  }
  meta["scores"] = std::move(scores);

  const std::string meta_text = meta.dump();
  std::string out = std::string(kMagic) + " " + std::to_string(kBundleVersion) + "\n";
  out += "meta " + std::to_string(meta_text.size()) + "\n" + meta_text + "\n";
  out += blocks;
  out += "end\n";
  return out;
}

TrainedEnsemble deserialize_bundle(const std::string& bytes) {
  Reader in(bytes);
  {
    const auto head = words(in.line());
    if (head.size() != 2 || head[0] != kMagic) throw DataError("not a model bundle");
    const std::size_t version = parse_size(head[1], "version");
    if (version != kBundleVersion) {
      throw DataError("bundle version " + std::to_string(version) +
                      " is not supported (this build reads version " +
                      std::to_string(kBundleVersion) + ")");
    }
  }
  ordered_json meta;
  {
    const auto w = words(in.line());
    if (w.size() != 2 || w[0] != "meta") throw DataError("bundle: missing metadata");
    const std::size_t n = parse_size(w[1], "metadata length");
    try {
      meta = ordered_json::parse(in.take(n));
    } catch (const ordered_json::parse_error& e) {
      throw DataError(std::string("bundle: corrupt metadata: ") + e.what());
    }
    in.expect_newline();
  }

  Blocks blocks;
  bool ended = false;
  while (!ended) {
    const std::string line = in.line();
    if (line == "end") {
      ended = true;
      break;
    }
    const auto w = words(line);
    if (w.size() != 4 || w[0] != "block") throw DataError("bundle: unexpected line '" + line + "'");
    const std::size_t rows = parse_size(w[2], "rows");
    const std::size_t cols = parse_size(w[3], "cols");
    if (cols != 0 && rows > (bytes.size() / 4) / cols) throw DataError("bundle is truncated");
    auto raw = in.take(rows * cols * 4);
    std::vector<float> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, raw.data() + i * 4, 4);
      values[i] = std::bit_cast<float>(to_le(bits));
    }
    in.expect_newline();
    blocks.add(std::string(w[1]), Matrix(rows, cols, std::move(values)));
  }
  if (!in.at_end()) throw DataError("bundle has trailing bytes after the end marker");

  TrainedEnsemble ens;
  try {
    ens.config = RunConfig::from_json(meta.at("config").dump());
    const auto& dj = meta.at("dims");
    for (std::size_t m = 0; m < kModalityCount; ++m) ens.dims[m] = dj.at(m).get<std::size_t>();

    const auto& vlist = meta.at("variants");
    if (!vlist.is_array() || vlist.empty()) throw DataError("bundle: no variants");
    for (std::size_t v = 0; v < vlist.size(); ++v) {
      const auto& vj = vlist[v];
      const std::string prefix = "v" + std::to_string(v) + "/";
      const bool global = v == 0;
      if (vj.at("variant").get<std::string>() != (global ? "C" : "R")) {
        throw DataError("bundle: variant list out of order");
      }
      VariantModel& vm =
          global ? ens.global : ens.per_author[vj.at("author").get<std::string>()];

      auto ids = vj.at("bank_ids").get<std::vector<std::string>>();
      auto authors = vj.at("bank_authors").get<std::vector<std::string>>();
      std::vector<ModalityMask> masks;
      for (const auto& m : vj.at("bank_masks")) masks.push_back(static_cast<ModalityMask>(m.get<unsigned>()));
      const std::size_t n = ids.size();
      std::array<Matrix, kModalityCount> unit;
      std::array<std::vector<float>, kModalityCount> norms;
      for (Modality m : kModalities) {
        const auto mi = static_cast<std::size_t>(m);
        const std::string mn(modality_name(m));
        unit[mi] = blocks.take(prefix + "bank/unit_" + mn, n, ens.dims[mi]);
        const Matrix nm = blocks.take(prefix + "bank/norm_" + mn, 1, n);
        norms[mi].assign(nm.data().begin(), nm.data().end());
      }
      Matrix targets = blocks.take(prefix + "bank/targets", n, kMetricCount);
      vm.bank = MemoryBank::from_parts(ens.dims, std::move(ids), std::move(authors),
                                       std::move(masks), std::move(unit), std::move(norms),
                                       std::move(targets));

      const auto& mj = vj.at("metrics");
      for (Metric metric : kMetrics) {
        const auto& one = mj.at(metric_key(metric));
        const std::string mp = prefix + metric_key(metric) + "/";
        MetricModels& models = vm.metrics[static_cast<std::size_t>(metric)];
        const auto& xj = one.at("xattn");
        models.xattn = xattn::Params::init(ens.dims, xj.at("model_dim").get<std::size_t>(),
                                           xj.at("hidden").get<std::size_t>(), metric, 0);
        models.xattn.scaler = scaler_from(xj.at("scaler"));
        blocks.fill(mp + "xattn/", models.xattn.refs());
        const auto& cj = one.at("completion");
        models.completion = completion::Params::init(
            ens.dims, cj.at("model_dim").get<std::size_t>(), cj.at("hidden").get<std::size_t>(),
            metric, 0);
        models.completion.scaler = scaler_from(cj.at("scaler"));
        blocks.fill(mp + "completion/", models.completion.refs());
        const auto& sj = one.at("synthesis");
        models.synthesis = SynthesisParams::init(sj.at("hidden").get<std::size_t>(), 0);
        models.synthesis.scaler = scaler_from(sj.at("scaler"));
        blocks.fill(mp + "synthesis/", models.synthesis.refs());
      }
    }

    const auto& sj = meta.at("scores");
    for (Metric metric : kMetrics) {
      auto& table = ens.scores[static_cast<std::size_t>(metric)];
      for (const auto& [author, s] : sj.at(metric_key(metric)).items()) {
        AuthorScores a;
        a.n_val = s.at("n_val").get<std::size_t>();
        if (!s.at("c_mse").is_null()) a.c_mse = s.at("c_mse").get<double>();
        if (!s.at("r_mse").is_null()) a.r_mse = s.at("r_mse").get<double>();
        const auto choice = s.at("choice").get<std::string>();
        if (choice != "C" && choice != "R") throw DataError("bundle: bad variant choice " + choice);
        a.choice = choice == "R" ? Variant::R : Variant::C;
        table[author] = a;
      }
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("bundle: corrupt metadata: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("bundle: ") + e.what());
  }
  if (!blocks.empty()) throw DataError("bundle: unexpected block " + blocks.first());
  return ens;
}

void save_bundle(const TrainedEnsemble& ensemble, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_bundle(ensemble));
}

TrainedEnsemble load_bundle(const std::filesystem::path& path) {
  return deserialize_bundle(read_file(path));
}

}  // namespace mmpop
