#include "mmpop/completion.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "mmpop/errors.hpp"

namespace mmpop::completion {

namespace {

enum Slot : std::size_t {
  kEncW = 0,
  kEncB = 3,
  kToken = 6,
  kFuseW = 9,
  kFuseB = 10,
  kDecW = 11,
  kDecB = 14,
  kHeadW1 = 17,
  kHeadB1 = 18,
  kHeadW2 = 19,
  kHeadB2 = 20,
  kSlotCount = 21,
};

constexpr std::size_t kPredictChunk = 512;

std::vector<ad::Var> constant_params(ad::Tape& tape, const Params& params) {
  std::vector<ad::Var> out;
  for (const Matrix* m : params.matrices()) out.push_back(tape.constant(*m));
  return out;
}

std::string mname(std::size_t m) { return std::string(modality_name(kModalities[m])); }

ad::Var fuse(ad::Tape& tape, std::span<const ad::Var> p, const BatchInput& in) {
  std::optional<ad::Var> acc;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    ad::Var enc = tape.tanh(tape.add_row(tape.matmul(tape.constant(in.x[m]), p[kEncW + m]),
                                         p[kEncB + m]));
    ad::Var slot = tape.scale_rows(enc, in.visible[m]);
    MatrixD hidden(in.visible[m].size(), 1);
    for (std::size_t r = 0; r < hidden.rows(); ++r) hidden(r, 0) = 1.0 - in.visible[m][r];
    slot = tape.add(slot, tape.matmul(tape.constant(std::move(hidden)), p[kToken + m]));
    acc = acc ? tape.add(*acc, slot) : slot;
  }
  ad::Var mean = tape.scale(*acc, 1.0 / static_cast<double>(kModalityCount));
  return tape.tanh(tape.add_row(tape.matmul(mean, p[kFuseW]), p[kFuseB]));
}

ad::Var head(ad::Tape& tape, std::span<const ad::Var> p, ad::Var fused) {
  ad::Var h = tape.tanh(tape.add_row(tape.matmul(fused, p[kHeadW1]), p[kHeadB1]));
  return tape.add_row(tape.matmul(h, p[kHeadW2]), p[kHeadB2]);
}

}  // namespace

Params Params::init(const ModalityDims& dims, std::size_t model_dim, std::size_t hidden,
                    Metric metric, std::uint64_t seed) {
  if (model_dim == 0 || hidden == 0) throw UsageError("model_dim and hidden must be positive");
  Rng rng(seed);
  Params p;
  p.metric = metric;
  p.model_dim = model_dim;
  p.hidden = hidden;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    p.enc_w[m] = glorot(rng, dims[m], model_dim);
    p.enc_b[m] = Matrix(1, model_dim);
    p.token[m] = glorot(rng, 1, model_dim);
    p.dec_w[m] = glorot(rng, model_dim, dims[m]);
    p.dec_b[m] = Matrix(1, dims[m]);
  }
  p.fuse_w = glorot(rng, model_dim, model_dim);
  p.fuse_b = Matrix(1, model_dim);
  p.head_w1 = glorot(rng, model_dim, hidden);
  p.head_b1 = Matrix(1, hidden);
  p.head_w2 = glorot(rng, hidden, 1);
  p.head_b2 = Matrix(1, 1);
  return p;
}

ModalityDims Params::dims() const {
  return {enc_w[0].rows(), enc_w[1].rows(), enc_w[2].rows()};
}

std::vector<ParamRef> Params::refs() {
  std::vector<ParamRef> r;
  r.reserve(kSlotCount);
  for (std::size_t m = 0; m < kModalityCount; ++m) r.push_back({"enc_w_" + mname(m), &enc_w[m]});
  for (std::size_t m = 0; m < kModalityCount; ++m) r.push_back({"enc_b_" + mname(m), &enc_b[m]});
  for (std::size_t m = 0; m < kModalityCount; ++m) r.push_back({"token_" + mname(m), &token[m]});
  r.push_back({"fuse_w", &fuse_w});
  r.push_back({"fuse_b", &fuse_b});
  for (std::size_t m = 0; m < kModalityCount; ++m) r.push_back({"dec_w_" + mname(m), &dec_w[m]});
  for (std::size_t m = 0; m < kModalityCount; ++m) r.push_back({"dec_b_" + mname(m), &dec_b[m]});
  r.push_back({"head_w1", &head_w1});
  r.push_back({"head_b1", &head_b1});
  r.push_back({"head_w2", &head_w2});
  r.push_back({"head_b2", &head_b2});
  return r;
}

std::vector<const Matrix*> Params::matrices() const {
  std::vector<const Matrix*> out;
  for (const auto& ref : const_cast<Params*>(this)->refs()) out.push_back(ref.value);
  return out;
}

std::size_t MaskPattern::visible_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), false));
}

MaskPattern MaskPattern::from_availability(const VideoRecord& record) {
  MaskPattern p;
  for (Modality m : kModalities) p.masked[static_cast<std::size_t>(m)] = !record.has(m);
  return p;
}

MaskPattern MaskPattern::hide(const VideoRecord& record, Modality m) {
  MaskPattern p = from_availability(record);
  p.masked[static_cast<std::size_t>(m)] = true;
  return p;
}

std::pair<VideoRecord, MaskPattern> mask_modalities(const VideoRecord& record, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("mask probability must be in [0, 1]");
  std::vector<std::size_t> available;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (record.has(kModalities[m])) available.push_back(m);
  }
  if (available.empty()) {
    throw UsageError("record " + record.video_id + " has no modality to mask");
  }
  MaskPattern pat = MaskPattern::from_availability(record);
  for (std::size_t m : available) pat.masked[m] = rng.bernoulli(p);
  if (pat.visible_count() == 0) pat.masked[available[rng.index(available.size())]] = false;

  VideoRecord out = record;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (pat.masked[m]) out.modalities[m].reset();
  }
  return {std::move(out), pat};
}

BatchInput BatchInput::build(std::span<const VideoRecord* const> records,
                             std::span<const MaskPattern> patterns, const ModalityDims& dims) {
  if (records.size() != patterns.size()) {
    throw UsageError("completion batch: records and patterns differ in length");
  }
  const std::size_t n = records.size();
  BatchInput in;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    in.x[m] = MatrixD(n, dims[m]);
    in.truth[m] = MatrixD(n, dims[m]);
    in.visible[m].assign(n, 0.0);
    in.recon_weight[m].assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const VideoRecord& r = *records[i];
    if (patterns[i].visible_count() == 0) {
      throw UsageError("record " + r.video_id + ": mask pattern hides every modality");
    }
    bool any_visible = false;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      const Modality mod = kModalities[m];
      if (!r.has(mod)) continue;
      const auto& e = r.embedding(mod);
      if (e.size() != dims[m]) {
        throw UsageError("record " + r.video_id + ": " + mname(m) + " has dim " +
                         std::to_string(e.size()) + ", expected " + std::to_string(dims[m]));
      }
      auto dst = patterns[i].visible(mod) ? in.x[m].row(i) : in.truth[m].row(i);
      for (std::size_t c = 0; c < e.size(); ++c) dst[c] = e[c];
      if (patterns[i].visible(mod)) {
        in.visible[m][i] = 1.0;
        any_visible = true;
      } else {
        in.recon_weight[m][i] = 1.0;
      }
    }
    if (!any_visible) {
      throw UsageError("record " + r.video_id + ": no visible modality under the mask pattern");
    }
  }
  return in;
}

ForwardOut forward(ad::Tape& tape, std::span<const ad::Var> p, const BatchInput& input) {
  ForwardOut out;
  ad::Var fused = fuse(tape, p, input);
  out.prediction = head(tape, p, fused);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    out.recon[m] = tape.add_row(tape.matmul(fused, p[kDecW + m]), p[kDecB + m]);
  }
  return out;
}

std::optional<ad::Var> reconstruction_loss(ad::Tape& tape, const ForwardOut& out,
                                           const BatchInput& input) {
  std::array<double, kModalityCount> counts{};
  double total = 0.0;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    for (double w : input.recon_weight[m]) counts[m] += w;
    total += counts[m];
  }
  if (total == 0.0) return std::nullopt;
  std::optional<ad::Var> acc;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (counts[m] == 0.0) continue;
    ad::Var term = tape.scale(tape.masked_mse(out.recon[m], input.truth[m], input.recon_weight[m]),
                              counts[m] / total);
    acc = acc ? tape.add(*acc, term) : term;
  }
  return acc;
}

MatrixD encode_incomplete(const VideoRecord& record, const MaskPattern& pattern,
                          const Params& params) {
  const VideoRecord* rp = &record;
  BatchInput in = BatchInput::build(std::span<const VideoRecord* const>(&rp, 1),
                                    std::span<const MaskPattern>(&pattern, 1), params.dims());
  ad::Tape tape;
  auto p = constant_params(tape, params);
  return tape.value(fuse(tape, p, in));
}

std::array<MatrixD, kModalityCount> reconstruct(const MatrixD& fused, const Params& params) {
  std::array<MatrixD, kModalityCount> out;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    out[m] = matmul(fused, MatrixD::cast(params.dec_w[m]));
    for (std::size_t r = 0; r < out[m].rows(); ++r)
      for (std::size_t c = 0; c < out[m].cols(); ++c) out[m](r, c) += params.dec_b[m][c];
  }
  return out;
}

std::vector<double> predict_batch(std::span<const VideoRecord> records,
                                  std::span<const MaskPattern> patterns, const Params& params) {
  if (records.size() != patterns.size()) {
    throw UsageError("predict_batch: records and patterns differ in length");
  }
  std::vector<double> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += kPredictChunk) {
    const std::size_t end = std::min(records.size(), start + kPredictChunk);
    std::vector<const VideoRecord*> rs;
    for (std::size_t i = start; i < end; ++i) rs.push_back(&records[i]);
    BatchInput in = BatchInput::build(rs, patterns.subspan(start, end - start), params.dims());
    ad::Tape tape;
    auto p = constant_params(tape, params);
    const MatrixD& z = tape.value(head(tape, p, fuse(tape, p, in)));
    for (std::size_t i = 0; i < rs.size(); ++i) out.push_back(params.scaler.from_z(z(i, 0)));
  }
  return out;
}

double predict_from_incomplete(const VideoRecord& record, const MaskPattern& pattern,
                               const Params& params) {
  return predict_batch(std::span<const VideoRecord>(&record, 1),
                       std::span<const MaskPattern>(&pattern, 1), params)
      .front();
}

double reconstruction_mse(const std::vector<VideoRecord>& records, const Params& params) {
  std::vector<const VideoRecord*> rs;
  std::vector<MaskPattern> pats;
  for (const auto& r : records) {
    if (r.available_count() < 2) continue;
    for (Modality m : kModalities) {
      if (!r.has(m)) continue;
      rs.push_back(&r);
      pats.push_back(MaskPattern::hide(r, m));
    }
  }
  if (rs.empty()) throw UsageError("reconstruction_mse: no record has two or more modalities");
  double acc = 0.0;
  double count = 0.0;
  for (std::size_t start = 0; start < rs.size(); start += kPredictChunk) {
    const std::size_t end = std::min(rs.size(), start + kPredictChunk);
    BatchInput in = BatchInput::build(std::span<const VideoRecord* const>(rs).subspan(start, end - start),
                                      std::span<const MaskPattern>(pats).subspan(start, end - start),
                                      params.dims());
    ad::Tape tape;
    auto p = constant_params(tape, params);
    ForwardOut out = forward(tape, p, in);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      const MatrixD& rec = tape.value(out.recon[m]);
      for (std::size_t i = 0; i < rec.rows(); ++i) {
        if (in.recon_weight[m][i] == 0.0) continue;
        for (std::size_t c = 0; c < rec.cols(); ++c) {
          const double d = rec(i, c) - in.truth[m](i, c);
          acc += d * d;
        }
        count += static_cast<double>(rec.cols());
      }
    }
  }
  return acc / count;
}

TrainResult train_semisupervised(const std::vector<VideoRecord>& labeled,
                                 const std::vector<VideoRecord>& val,
                                 const std::vector<VideoRecord>& unlabeled, Metric metric,
                                 const TargetTransform& transform, const Config& config) {
  if (labeled.empty()) throw UsageError("completion training needs labeled samples");
  if (!(config.lambda >= 0.0)) throw UsageError("lambda must be >= 0");
  const auto mi = static_cast<std::size_t>(metric);

  std::vector<const VideoRecord*> lab;
  std::vector<double> ly;
  for (const auto& r : labeled) {
    if (!r.labeled()) throw UsageError("labeled set contains unlabeled record " + r.video_id);
    if (r.available_count() == 0) continue;
    lab.push_back(&r);
    ly.push_back(transform.forward(*r.targets)[mi]);
  }
  if (lab.empty()) throw UsageError("no labeled record has an available modality");
  std::vector<const VideoRecord*> unl;
  for (const auto& r : unlabeled) {
    if (r.available_count() > 0) unl.push_back(&r);
  }
  std::vector<VideoRecord> vrec;
  std::vector<MaskPattern> vpat;
  std::vector<double> vy;
  for (const auto& r : val) {
    if (!r.labeled() || r.available_count() == 0) continue;
    vrec.push_back(r);
    vpat.push_back(MaskPattern::from_availability(r));
    vy.push_back(transform.forward(*r.targets)[mi]);
  }

  const ModalityDims dims = [&] {
    ModalityDims d{};
    for (const auto* r : lab)
      for (std::size_t m = 0; m < kModalityCount; ++m)
        if (r->has(kModalities[m])) d[m] = r->embedding(kModalities[m]).size();
    for (auto& v : d)
      if (v == 0) throw UsageError("a modality never appears in the labeled set; cannot size it");
    return d;
  }();

  TrainResult res;
  res.params = Params::init(dims, config.model_dim, config.hidden, metric,
                            derive_seed(config.train.seed, {"completion-init"}));
  res.params.scaler = TargetScaler::fit(ly);
  Params& params = res.params;
  const bool use_recon = config.lambda > 0.0;
  res.recon_samples = use_recon ? lab.size() + unl.size() : 0;

  const std::size_t steps =
      (lab.size() + config.train.batch_size - 1) / config.train.batch_size;
  Rng mask_rng(derive_seed(config.train.seed, {"completion-mask-labeled"}));
  Rng unl_rng(derive_seed(config.train.seed, {"completion-mask-unlabeled"}));
  std::size_t call = 0;

  BatchLoss loss = [&](ad::Tape& tape, std::span<const ad::Var> p,
                       std::span<const std::size_t> batch) {
    const std::size_t step = call++ % steps;
    std::vector<const VideoRecord*> rs;
    std::vector<MaskPattern> pats;
    MatrixD y(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      rs.push_back(lab[batch[i]]);
      pats.push_back(mask_modalities(*lab[batch[i]], config.mask_prob, mask_rng).second);
      y(i, 0) = params.scaler.to_z(ly[batch[i]]);
    }
    BatchInput in = BatchInput::build(rs, pats, dims);
    ForwardOut out = forward(tape, p, in);
    ad::Var total = tape.mse(out.prediction, std::move(y));
    if (!use_recon) return total;

    // Unlabeled samples join only the reconstruction term.
    const std::size_t u0 = step * unl.size() / steps;
    const std::size_t u1 = (step + 1) * unl.size() / steps;
    std::optional<ad::Var> recon = reconstruction_loss(tape, out, in);
    double n_lab = 0.0, n_unl = 0.0;
    for (const auto& w : in.recon_weight)
      for (double v : w) n_lab += v;
    std::optional<ad::Var> recon_u;
    if (u1 > u0) {
      std::vector<const VideoRecord*> us(unl.begin() + static_cast<long>(u0),
                                         unl.begin() + static_cast<long>(u1));
      std::vector<MaskPattern> upats;
      for (const auto* r : us) upats.push_back(mask_modalities(*r, config.mask_prob, unl_rng).second);
      BatchInput uin = BatchInput::build(us, upats, dims);
      for (const auto& w : uin.recon_weight)
        for (double v : w) n_unl += v;
      ForwardOut uout = forward(tape, p, uin);
      recon_u = reconstruction_loss(tape, uout, uin);
    }
    // Pool both parts as one mean over contributing (row, modality) slots.
    std::optional<ad::Var> pooled;
    if (recon) pooled = tape.scale(*recon, n_lab / (n_lab + n_unl));
    if (recon_u) {
      ad::Var t = tape.scale(*recon_u, n_unl / (n_lab + n_unl));
      pooled = pooled ? tape.add(*pooled, t) : t;
    }
    if (pooled) total = tape.add(total, tape.scale(*pooled, config.lambda));
    return total;
  };

  std::function<double()> val_fn = [&] {
    auto pred = predict_batch(vrec, vpat, params);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - vy[i]) * (pred[i] - vy[i]);
    return acc / static_cast<double>(pred.size());
  };

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.train.seed, {"completion-shuffle"});
  auto refs = params.refs();
  res.history = fit(refs, lab.size(), tc, loss, vrec.empty() ? nullptr : &val_fn);
  if (vrec.empty()) res.history.warnings.push_back("empty validation set; trained fixed epochs");
  return res;
}

TrainResult train_supervised(const std::vector<VideoRecord>& labeled,
                             const std::vector<VideoRecord>& val, Metric metric,
                             const TargetTransform& transform, Config config) {
  config.mask_prob = 0.0;
  config.lambda = 0.0;
  return train_semisupervised(labeled, val, {}, metric, transform, config);
}

}  // namespace mmpop::completion
