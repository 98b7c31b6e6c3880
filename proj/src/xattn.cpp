#include "mmpop/xattn.hpp"

#include <cmath>

#include "mmpop/errors.hpp"

namespace mmpop::xattn {

namespace {

constexpr double kMaskedLogit = -1e30;
constexpr std::size_t kPredictChunk = 256;

enum Slot : std::size_t {
  kProj0 = 0,
  kEncBias = 3,
  kAbsence0 = 4,
  kWQuery = 7,
  kWKey = 8,
  kWValue = 9,
  kHeadW1 = 10,
  kHeadB1 = 11,
  kHeadW2 = 12,
  kHeadB2 = 13,
  kSlotCount = 14,
};

/// Row-stacked raw features plus absence indicators for a set of items.
struct Rows {
  std::array<MatrixD, kModalityCount> x;
  std::array<MatrixD, kModalityCount> absent;
};

Rows make_rows(std::size_t n, const ModalityDims& dims) {
  Rows r;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    r.x[m] = MatrixD(n, dims[m]);
    r.absent[m] = MatrixD(n, 1, 1.0);
  }
  return r;
}

void put_row(Rows& rows, std::size_t at, const ItemFeatures& f) {
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (!mask_has(f.mask, kModalities[m])) continue;
    auto dst = rows.x[m].row(at);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = f.raw[m][c];
    rows.absent[m](at, 0) = 0.0;
  }
}

ad::Var encode_rows(ad::Tape& tape, std::span<const ad::Var> p, Rows rows) {
  std::optional<ad::Var> acc;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    ad::Var x = tape.constant(std::move(rows.x[m]));
    ad::Var a = tape.constant(std::move(rows.absent[m]));
    ad::Var term = tape.add(tape.matmul(x, p[kProj0 + m]), tape.matmul(a, p[kAbsence0 + m]));
    acc = acc ? tape.add(*acc, term) : term;
  }
  return tape.tanh(tape.add_row(*acc, p[kEncBias]));
}

std::vector<ad::Var> constant_params(ad::Tape& tape, const Params& params) {
  std::vector<ad::Var> out;
  for (const Matrix* m : params.matrices()) out.push_back(tape.constant(*m));
  return out;
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
  for (std::size_t m = 0; m < kModalityCount; ++m) p.proj[m] = glorot(rng, dims[m], model_dim);
  p.enc_bias = Matrix(1, model_dim);
  for (std::size_t m = 0; m < kModalityCount; ++m) p.absence[m] = glorot(rng, 1, model_dim);
  p.w_query = glorot(rng, model_dim, model_dim);
  p.w_key = glorot(rng, model_dim, model_dim);
  p.w_value = glorot(rng, model_dim + 2, model_dim);
  p.head_w1 = glorot(rng, model_dim, hidden);
  p.head_b1 = Matrix(1, hidden);
  p.head_w2 = glorot(rng, hidden, 1);
  p.head_b2 = Matrix(1, 1);
  return p;
}

std::vector<ParamRef> Params::refs() {
  std::vector<ParamRef> r;
  r.reserve(kSlotCount);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    r.push_back({"proj_" + std::string(modality_name(kModalities[m])), &proj[m]});
  }
  r.push_back({"enc_bias", &enc_bias});
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    r.push_back({"absence_" + std::string(modality_name(kModalities[m])), &absence[m]});
  }
  r.push_back({"w_query", &w_query});
  r.push_back({"w_key", &w_key});
  r.push_back({"w_value", &w_value});
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

ItemFeatures ItemFeatures::from_record(const VideoRecord& record, const ModalityDims& dims) {
  ItemFeatures f;
  for (Modality m : kModalities) {
    if (!record.has(m)) continue;
    const auto& e = record.embedding(m);
    const auto mi = static_cast<std::size_t>(m);
    if (e.size() != dims[mi]) {
      throw UsageError("record " + record.video_id + ": " + std::string(modality_name(m)) +
                       " has dim " + std::to_string(e.size()) + ", expected " +
                       std::to_string(dims[mi]));
    }
    const bool nonzero = std::any_of(e.begin(), e.end(), [](float v) { return v != 0.0F; });
    if (!nonzero) continue;
    f.raw[mi] = e;
    f.mask = mask_with(f.mask, m);
  }
  return f;
}

ItemFeatures ItemFeatures::from_bank(const MemoryBank& bank, std::size_t index) {
  ItemFeatures f;
  f.mask = bank.mask(index);
  for (Modality m : kModalities) {
    if (!bank.available(index, m)) continue;
    const auto mi = static_cast<std::size_t>(m);
    auto u = bank.unit(index, m);
    const float n = bank.norm(index, m);
    f.raw[mi].resize(u.size());
    for (std::size_t c = 0; c < u.size(); ++c) f.raw[mi][c] = u[c] * n;
  }
  return f;
}

ad::Var forward(ad::Tape& tape, std::span<const ad::Var> p, const Params& params,
                std::span<const Query* const> queries, const MemoryBank& bank) {
  if (queries.empty()) throw UsageError("xattn forward needs at least one query");
  const std::size_t b = queries.size();
  std::size_t block = 0;
  for (const Query* q : queries) {
    if (q->neighbors.neighbors.empty()) {
      throw UsageError("query " + q->neighbors.query_id + " has an empty neighbour list");
    }
    block = std::max(block, q->neighbors.neighbors.size());
  }
  const auto& dims = bank.dims();

  Rows target_rows = make_rows(b, dims);
  Rows nb_rows = make_rows(b * block, dims);
  MatrixD extra(b * block, 2);
  MatrixD logit_mask(b, block, kMaskedLogit);
  for (std::size_t i = 0; i < b; ++i) {
    put_row(target_rows, i, queries[i]->target);
    const auto& nbs = queries[i]->neighbors.neighbors;
    for (std::size_t j = 0; j < nbs.size(); ++j) {
      const std::size_t row = i * block + j;
      put_row(nb_rows, row, ItemFeatures::from_bank(bank, nbs[j].index));
      extra(row, 0) = params.scaler.to_z(bank.target(nbs[j].index, params.metric));
      extra(row, 1) = nbs[j].score;
      logit_mask(i, j) = 0.0;
    }
  }

  ad::Var enc_t = encode_rows(tape, p, std::move(target_rows));
  ad::Var enc_n = encode_rows(tape, p, std::move(nb_rows));
  ad::Var q = tape.matmul(enc_t, p[kWQuery]);
  ad::Var keys = tape.matmul(enc_n, p[kWKey]);
  ad::Var values = tape.matmul(tape.concat_cols(enc_n, tape.constant(std::move(extra))), p[kWValue]);
  ad::Var logits = tape.scale(tape.block_dot(q, keys, block),
                              1.0 / std::sqrt(static_cast<double>(params.model_dim)));
  logits = tape.add(logits, tape.constant(std::move(logit_mask)));
  ad::Var weights = tape.row_softmax(logits);
  ad::Var context = tape.block_weighted_sum(weights, values);
  // Residual: the head sees the attended context plus the target encoding.
  ad::Var hidden = tape.tanh(tape.add_row(tape.matmul(tape.add(context, enc_t), p[kHeadW1]), p[kHeadB1]));
  return tape.add_row(tape.matmul(hidden, p[kHeadW2]), p[kHeadB2]);
}

MatrixD encode_target(const VideoRecord& record, const Params& params) {
  ItemFeatures f = ItemFeatures::from_record(record, {params.proj[0].rows(), params.proj[1].rows(),
                                                      params.proj[2].rows()});
  if (f.mask == 0) throw UsageError("record " + record.video_id + " has no available modality");
  ad::Tape tape;
  auto p = constant_params(tape, params);
  Rows rows = make_rows(1, {params.proj[0].rows(), params.proj[1].rows(), params.proj[2].rows()});
  put_row(rows, 0, f);
  return tape.value(encode_rows(tape, p, std::move(rows)));
}

std::pair<MatrixD, MatrixD> encode_neighbors(const RetrievalResult& neighbors,
                                             const MemoryBank& bank, const Params& params) {
  const auto& nbs = neighbors.neighbors;
  if (nbs.empty()) throw UsageError("encode_neighbors: empty neighbour list");
  ad::Tape tape;
  auto p = constant_params(tape, params);
  Rows rows = make_rows(nbs.size(), bank.dims());
  MatrixD extra(nbs.size(), 2);
  for (std::size_t j = 0; j < nbs.size(); ++j) {
    put_row(rows, j, ItemFeatures::from_bank(bank, nbs[j].index));
    extra(j, 0) = params.scaler.to_z(bank.target(nbs[j].index, params.metric));
    extra(j, 1) = nbs[j].score;
  }
  ad::Var enc = encode_rows(tape, p, std::move(rows));
  ad::Var keys = tape.matmul(enc, p[kWKey]);
  ad::Var values = tape.matmul(tape.concat_cols(enc, tape.constant(std::move(extra))), p[kWValue]);
  return {tape.value(keys), tape.value(values)};
}

MatrixD attention_weights(const MatrixD& q, const MatrixD& keys) {
  if (q.rows() != 1 || q.cols() != keys.cols() || keys.rows() == 0) {
    throw ShapeError("attention shapes: q " + q.shape() + ", keys " + keys.shape());
  }
  MatrixD logits(1, keys.rows());
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (std::size_t j = 0; j < keys.rows(); ++j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < q.cols(); ++c) acc += q(0, c) * keys(j, c);
    logits(0, j) = acc * inv;
  }
  return row_softmax(logits);
}

MatrixD cross_attention(const MatrixD& q, const MatrixD& keys, const MatrixD& values) {
  if (values.rows() != keys.rows()) {
    throw ShapeError("attention shapes: keys " + keys.shape() + ", values " + values.shape());
  }
  return matmul(attention_weights(q, keys), values);
}

std::vector<double> predict_queries(std::span<const Query> queries, const MemoryBank& bank,
                                    const Params& params) {
  std::vector<double> out;
  out.reserve(queries.size());
  for (std::size_t start = 0; start < queries.size(); start += kPredictChunk) {
    const std::size_t end = std::min(queries.size(), start + kPredictChunk);
    std::vector<const Query*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&queries[i]);
    ad::Tape tape;
    auto p = constant_params(tape, params);
    const MatrixD& z = tape.value(forward(tape, p, params, chunk, bank));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(params.scaler.from_z(z(i, 0)));
  }
  return out;
}

std::vector<std::optional<Query>> prepare_queries(const std::vector<VideoRecord>& records,
                                                  const MemoryBank& bank, std::size_t k) {
  std::vector<std::optional<Query>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Query q;
    q.target = ItemFeatures::from_record(r, bank.dims());
    if (q.target.mask == 0) {
      out.emplace_back();
      continue;
    }
    q.neighbors = retrieve(bank, RetrievalQuery::from_record(r), k, r.video_id);
    if (q.neighbors.neighbors.empty()) {
      out.emplace_back();
      continue;
    }
    out.emplace_back(std::move(q));
  }
  return out;
}

double predict(const VideoRecord& record, const MemoryBank& bank, const Params& params,
               std::size_t k, const std::optional<std::string>& exclude_id) {
  Query q;
  q.target = ItemFeatures::from_record(record, bank.dims());
  if (q.target.mask == 0) {
    throw UsageError("record " + record.video_id + " has no available modality");
  }
  q.neighbors = retrieve(bank, RetrievalQuery::from_record(record), k, exclude_id);
  if (q.neighbors.neighbors.empty()) {
    throw UsageError("record " + record.video_id + " has no eligible neighbour in the bank");
  }
  return predict_queries(std::span<const Query>(&q, 1), bank, params).front();
}

TrainResult train(const std::vector<VideoRecord>& train_set, const std::vector<VideoRecord>& val,
                  const MemoryBank& bank, Metric metric, const TargetTransform& transform,
                  const ModelConfig& config) {
  if (train_set.empty()) throw UsageError("xattn training set is empty");
  const auto mi = static_cast<std::size_t>(metric);

  auto collect = [&](const std::vector<VideoRecord>& records, std::vector<Query>& queries,
                     std::vector<double>& targets, std::size_t& dropped) {
    auto prepared = prepare_queries(records, bank, config.train.k);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!prepared[i] || !records[i].labeled()) {
        ++dropped;
        continue;
      }
      queries.push_back(std::move(*prepared[i]));
      targets.push_back(transform.forward(*records[i].targets)[mi]);
    }
  };

  std::vector<Query> tq, vq;
  std::vector<double> ty, vy;
  std::size_t dropped = 0;
  collect(train_set, tq, ty, dropped);
  collect(val, vq, vy, dropped);
  if (tq.empty()) throw UsageError("no training record has an eligible neighbour");

  TrainResult res;
  res.params = Params::init(bank.dims(), config.model_dim, config.hidden, metric,
                            derive_seed(config.train.seed, {"xattn-init"}));
  res.params.scaler = TargetScaler::fit(ty);
  Params& params = res.params;

  MatrixD ty_z(ty.size(), 1);
  for (std::size_t i = 0; i < ty.size(); ++i) ty_z(i, 0) = params.scaler.to_z(ty[i]);

  BatchLoss loss = [&](ad::Tape& tape, std::span<const ad::Var> p,
                       std::span<const std::size_t> batch) {
    std::vector<const Query*> qs;
    MatrixD y(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      qs.push_back(&tq[batch[i]]);
      y(i, 0) = ty_z(batch[i], 0);
    }
    return tape.mse(forward(tape, p, params, qs, bank), std::move(y));
  };

  std::function<double()> val_fn = [&] {
    auto pred = predict_queries(vq, bank, params);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - vy[i]) * (pred[i] - vy[i]);
    return acc / static_cast<double>(pred.size());
  };

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.train.seed, {"xattn-shuffle"});
  auto refs = params.refs();
  res.history = fit(refs, tq.size(), tc, loss, vq.empty() ? nullptr : &val_fn);
  if (vq.empty()) res.history.warnings.push_back("empty validation set; trained fixed epochs");
  if (dropped > 0) {
    res.history.warnings.push_back(std::to_string(dropped) +
                                   " records skipped (no modality, label or neighbour)");
  }
  return res;
}

}  // namespace mmpop::xattn
