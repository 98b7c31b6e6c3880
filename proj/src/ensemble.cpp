#include "mmpop/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mmpop/errors.hpp"

namespace mmpop::ensemble {

namespace {

constexpr std::size_t kSynthChunk = 1024;

// Runs fn(0..n-1) on up to `threads` workers. Each index writes only its own
// output slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

xattn::ModelConfig xattn_config(const RunConfig& c, std::uint64_t seed) {
  xattn::ModelConfig m;
  m.model_dim = c.model_dim;
  m.hidden = c.hidden;
  m.train = TrainConfig{c.epochs, c.batch_size, c.lr, seed, c.k, c.patience};
  return m;
}

completion::Config completion_config(const RunConfig& c, std::uint64_t seed) {
  completion::Config m;
  m.model_dim = c.model_dim;
  m.hidden = c.hidden;
  m.mask_prob = c.mask_prob;
  m.lambda = c.lambda;
  m.train = TrainConfig{c.epochs, c.batch_size, c.lr, seed, c.k, c.patience};
  return m;
}

std::vector<double> transformed_targets(const std::vector<VideoRecord>& records, Metric metric,
                                        const TargetTransform& t) {
  std::vector<double> y;
  y.reserve(records.size());
  for (const auto& r : records) {
    if (!r.labeled()) throw UsageError("record " + r.video_id + " has no targets");
    y.push_back(t.forward(*r.targets)[static_cast<std::size_t>(metric)]);
  }
  return y;
}

std::uint64_t raw_count(const TargetTransform& t, double transformed) {
  return t.inverse(transformed);
}

}  // namespace

SynthesisParams SynthesisParams::init(std::size_t hidden, std::uint64_t seed) {
  Rng rng(seed);
  SynthesisParams p;
  p.hidden = hidden;
  p.w1 = glorot(rng, kSynthesisInputs, hidden);
  p.b1 = Matrix(1, hidden);
  p.w2 = glorot(rng, hidden, 1);
  p.b2 = Matrix(1, 1);
  return p;
}

std::vector<ParamRef> SynthesisParams::refs() {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

std::vector<const Matrix*> SynthesisParams::matrices() const { return {&w1, &b1, &w2, &b2}; }

std::array<double, kSynthesisInputs> synthesis_inputs(const SynthesisFeatures& f,
                                                      const TargetScaler& scaler) {
  return {scaler.to_z(f.xattn), scaler.to_z(f.completion), f.mean_similarity,
          std::log1p(static_cast<double>(f.neighbor_count))};
}

ad::Var synthesis_forward(ad::Tape& tape, std::span<const ad::Var> p, const SynthesisParams& params,
                          std::span<const SynthesisFeatures> rows) {
  if (p.size() != 4) throw UsageError("synthesis_forward expects 4 parameter variables");
  MatrixD x(rows.size(), kSynthesisInputs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto in = synthesis_inputs(rows[i], params.scaler);
    for (std::size_t j = 0; j < kSynthesisInputs; ++j) x(i, j) = in[j];
  }
  auto h = tape.tanh(tape.add_row(tape.matmul(tape.constant(std::move(x)), p[0]), p[1]));
  return tape.add_row(tape.matmul(h, p[2]), p[3]);
}

std::vector<double> synthesize(const SynthesisParams& params, std::span<const SynthesisFeatures> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += kSynthChunk) {
    const std::size_t end = std::min(rows.size(), start + kSynthChunk);
    ad::Tape tape;
    std::vector<ad::Var> p;
    for (const Matrix* m : params.matrices()) p.push_back(tape.constant(*m));
    const MatrixD& z = tape.value(synthesis_forward(tape, p, params, rows.subspan(start, end - start)));
    for (std::size_t i = 0; i < end - start; ++i) out.push_back(params.scaler.from_z(z(i, 0)));
  }
  return out;
}

SynthesisTrainResult train_synthesis(std::span<const SynthesisFeatures> train_rows,
                                     std::span<const double> train_targets,
                                     std::span<const SynthesisFeatures> val_rows,
                                     std::span<const double> val_targets, std::size_t hidden,
                                     const TrainConfig& config) {
  if (train_rows.size() != train_targets.size() || val_rows.size() != val_targets.size()) {
    throw UsageError("synthesis rows and targets differ in length");
  }
  if (train_rows.empty()) throw UsageError("synthesis training set is empty");
  SynthesisTrainResult res;
  res.params = SynthesisParams::init(hidden, derive_seed(config.seed, {"synthesis-init"}));
  res.params.scaler = TargetScaler::fit(train_targets);
  SynthesisParams& params = res.params;

  BatchLoss loss = [&](ad::Tape& tape, std::span<const ad::Var> p,
                       std::span<const std::size_t> batch) {
    std::vector<SynthesisFeatures> rows;
    MatrixD y(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      rows.push_back(train_rows[batch[i]]);
      y(i, 0) = params.scaler.to_z(train_targets[batch[i]]);
    }
    return tape.mse(synthesis_forward(tape, p, params, rows), std::move(y));
  };
  std::function<double()> val_fn = [&] {
    auto pred = synthesize(params, val_rows);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      acc += (pred[i] - val_targets[i]) * (pred[i] - val_targets[i]);
    }
    return acc / static_cast<double>(pred.size());
  };

  TrainConfig tc = config;
  tc.seed = derive_seed(config.seed, {"synthesis-shuffle"});
  auto refs = params.refs();
  res.history = fit(refs, train_rows.size(), tc, loss, val_rows.empty() ? nullptr : &val_fn);
  if (val_rows.empty()) res.history.warnings.push_back("empty validation set; trained fixed epochs");
  return res;
}

std::string_view variant_name(Variant v) { return v == Variant::C ? "C" : "R"; }

Variant choose_variant(const AuthorScores& scores) {
  if (!scores.c_mse) return Variant::C;
  return (scores.r_mse && *scores.r_mse < *scores.c_mse) ? Variant::R : Variant::C;
}

std::vector<std::string> eligible_authors(const std::vector<VideoRecord>& train,
                                          std::size_t min_samples) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : train) ++counts[r.author_id];
  std::vector<std::string> out;
  for (const auto& [a, n] : counts) {
    if (n >= min_samples) out.push_back(a);
  }
  return out;
}

Variant TrainedEnsemble::select(Metric m, const std::string& author) const {
  const auto& table = scores[static_cast<std::size_t>(m)];
  auto it = table.find(author);
  if (it == table.end() || !per_author.contains(author)) return Variant::C;
  return it->second.choice;
}

const VariantModel& TrainedEnsemble::model(Variant v, const std::string& author) const {
  if (v == Variant::R) {
    auto it = per_author.find(author);
    if (it != per_author.end()) return it->second;
  }
  return global;
}

std::vector<SynthesisFeatures> branch_features(const std::vector<VideoRecord>& records,
                                               const MemoryBank& bank, const MetricModels& models,
                                               std::size_t k) {
  for (const auto& r : records) {
    if (r.available_count() == 0) {
      throw UsageError("record " + r.video_id + " has no available modality");
    }
  }
  std::vector<completion::MaskPattern> patterns;
  patterns.reserve(records.size());
  for (const auto& r : records) patterns.push_back(completion::MaskPattern::from_availability(r));
  auto comp = completion::predict_batch(records, patterns, models.completion);

  auto prepared = xattn::prepare_queries(records, bank, k);
  std::vector<xattn::Query> queries;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!prepared[i]) continue;
    queries.push_back(std::move(*prepared[i]));
    owner.push_back(i);
  }
  auto xa = xattn::predict_queries(queries, bank, models.xattn);

  std::vector<SynthesisFeatures> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[i].xattn = comp[i];
    out[i].completion = comp[i];
  }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto& f = out[owner[q]];
    const auto& nb = queries[q].neighbors.neighbors;
    double sim = 0.0;
    for (const auto& n : nb) sim += n.score;
    f.xattn = xa[q];
    f.mean_similarity = sim / static_cast<double>(nb.size());
    f.neighbor_count = nb.size();
  }
  return out;
}

namespace {

// Branch models for one fold or one variant: bank over `train`, xattn and
// completion trained on `train` and early-stopped on `val`.
struct BranchFit {
  MemoryBank bank;
  MetricModels models;
  std::vector<TrainingLog> logs;
};

BranchFit fit_branches(const std::vector<VideoRecord>& train, const std::vector<VideoRecord>& val,
                       const std::vector<VideoRecord>& unlabeled, const ModalityDims& dims,
                       Metric metric, const RunConfig& config, std::uint64_t seed) {
  BranchFit out;
  const TargetTransform transform{config.transform};
  out.bank = MemoryBank::build(train, dims, transform);
  auto xa = xattn::train(train, val, out.bank, metric, transform,
                         xattn_config(config, derive_seed(seed, {"xattn"})));
  auto comp = completion::train_semisupervised(
      train, val, unlabeled, metric, transform,
      completion_config(config, derive_seed(seed, {"completion"})));
  out.models.xattn = std::move(xa.params);
  out.models.completion = std::move(comp.params);
  out.logs.push_back({"", metric, "xattn", std::move(xa.history)});
  out.logs.push_back({"", metric, "completion", std::move(comp.history)});
  return out;
}

}  // namespace

std::vector<int> crossfit_folds(const std::vector<VideoRecord>& train, std::uint64_t seed) {
  if (train.size() < 2) throw UsageError("cross-fitting needs at least 2 training records");
  std::map<std::string, std::vector<std::size_t>> by_author;
  for (std::size_t i = 0; i < train.size(); ++i) by_author[train[i].author_id].push_back(i);
  Rng rng(derive_seed(seed, {"folds"}));
  std::vector<int> fold(train.size(), 0);
  std::size_t counts[2] = {0, 0};
  for (auto& [author, idx] : by_author) {
    rng.shuffle(idx);
    // Start each author on the currently smaller fold so singletons balance.
    std::size_t f = counts[0] <= counts[1] ? 0 : 1;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      fold[idx[j]] = static_cast<int>((f + j) % 2);
      ++counts[(f + j) % 2];
    }
  }
  return fold;
}

std::vector<SynthesisFeatures> crossfit_module_outputs(const std::vector<VideoRecord>& train,
                                                       const std::vector<VideoRecord>& unlabeled,
                                                       const ModalityDims& dims, Metric metric,
                                                       const RunConfig& config,
                                                       std::uint64_t seed) {
  const std::vector<int> fold = crossfit_folds(train, seed);

  std::vector<SynthesisFeatures> out(train.size());
  for (int f = 0; f < 2; ++f) {
    std::vector<VideoRecord> held, other;
    std::vector<std::size_t> held_idx;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (fold[i] == f) {
        held.push_back(train[i]);
        held_idx.push_back(i);
      } else {
        other.push_back(train[i]);
      }
    }
    if (other.empty()) throw UsageError("cross-fitting fold has an empty training side");
    const std::string label = "fold" + std::to_string(f);
    auto inner = split(other, config.ratio, derive_seed(seed, {label, "inner-split"}));
    auto fit = fit_branches(inner.train, inner.val, unlabeled, dims, metric, config,
                            derive_seed(seed, {label}));
    auto feats = branch_features(held, fit.bank, fit.models, config.k);
    for (std::size_t j = 0; j < held.size(); ++j) out[held_idx[j]] = feats[j];
  }
  return out;
}

namespace {

MetricModels train_metric(const std::vector<VideoRecord>& train, const std::vector<VideoRecord>& val,
                          const std::vector<VideoRecord>& unlabeled, const ModalityDims& dims,
                          Metric metric, const RunConfig& config, std::uint64_t seed,
                          std::vector<TrainingLog>& logs) {
  const TargetTransform transform{config.transform};
  auto oof = crossfit_module_outputs(train, unlabeled, dims, metric, config,
                                     derive_seed(seed, {"crossfit"}));
  auto fit = fit_branches(train, val, unlabeled, dims, metric, config, derive_seed(seed, {"final"}));
  auto val_feats = branch_features(val, fit.bank, fit.models, config.k);

  TrainConfig tc{config.synthesis_epochs, config.batch_size, config.lr,
                 derive_seed(seed, {"synthesis"}), config.k, config.patience};
  auto ty = transformed_targets(train, metric, transform);
  auto vy = transformed_targets(val, metric, transform);
  auto syn = train_synthesis(oof, ty, val_feats, vy, config.hidden, tc);

  MetricModels out = std::move(fit.models);
  out.synthesis = std::move(syn.params);
  for (auto& l : fit.logs) logs.push_back(std::move(l));
  logs.push_back({"", metric, "synthesis", std::move(syn.history)});
  return out;
}

std::vector<VideoRecord> of_author(const std::vector<VideoRecord>& records, const std::string& a) {
  std::vector<VideoRecord> out;
  for (const auto& r : records) {
    if (r.author_id == a) out.push_back(r);
  }
  return out;
}

}  // namespace

VariantModel train_variant(const std::vector<VideoRecord>& train,
                           const std::vector<VideoRecord>& val,
                           const std::vector<VideoRecord>& unlabeled, const ModalityDims& dims,
                           const RunConfig& config, const std::string& label,
                           std::vector<TrainingLog>* logs) {
  VariantModel out;
  out.bank = MemoryBank::build(train, dims, TargetTransform{config.transform});
  std::array<std::vector<TrainingLog>, kMetricCount> task_logs;
  for (Metric m : kMetrics) {
    const auto mi = static_cast<std::size_t>(m);
    out.metrics[mi] = train_metric(train, val, unlabeled, dims, m, config,
                                   derive_seed(config.seed, {label, metric_name(m)}), task_logs[mi]);
  }
  if (logs) {
    for (auto& tl : task_logs) {
      for (auto& l : tl) {
        l.variant = label;
        logs->push_back(std::move(l));
      }
    }
  }
  return out;
}

TrainedEnsemble train_variants(const std::vector<VideoRecord>& train,
                               const std::vector<VideoRecord>& val,
                               const std::vector<VideoRecord>& unlabeled,
                               const ModalityDims& dims, const RunConfig& config) {
  config.validate();
  if (train.empty()) throw UsageError("training set is empty");

  TrainedEnsemble ens;
  ens.config = config;
  ens.dims = dims;
  const TargetTransform transform{config.transform};

  std::set<std::string> authors;
  for (const auto& r : train) authors.insert(r.author_id);
  for (const auto& r : val) authors.insert(r.author_id);

  // Variant 0 is C; the rest are R for authors with enough training data.
  struct Job {
    std::string label;
    std::vector<VideoRecord> train, val;
    VariantModel* target = nullptr;
  };
  std::vector<Job> jobs;
  jobs.push_back({"C", train, val, &ens.global});
  for (const auto& a : eligible_authors(train, config.min_author_samples)) {
    jobs.push_back({a, of_author(train, a), of_author(val, a), nullptr});
  }
  for (std::size_t j = 1; j < jobs.size(); ++j) jobs[j].target = &ens.per_author[jobs[j].label];
  for (auto& job : jobs) job.target->bank = MemoryBank::build(job.train, dims, transform);

  const std::size_t n_tasks = jobs.size() * kMetricCount;
  std::vector<std::vector<TrainingLog>> task_logs(n_tasks);
  parallel_for(n_tasks, config.threads, [&](std::size_t t) {
    Job& job = jobs[t / kMetricCount];
    const Metric m = kMetrics[t % kMetricCount];
    job.target->metrics[t % kMetricCount] =
        train_metric(job.train, job.val, unlabeled, dims, m, config,
                     derive_seed(config.seed, {job.label, metric_name(m)}), task_logs[t]);
    for (auto& l : task_logs[t]) l.variant = job.label;
  });
  for (auto& tl : task_logs) {
    for (auto& l : tl) ens.logs.push_back(std::move(l));
  }

  // Per-author, per-metric validation MSE of both variants in raw counts.
  auto c_pred = predict_transformed(val, ens, Routing::global_only);
  auto r_pred = predict_transformed(val, ens, Routing::author_only);
  for (Metric m : kMetrics) {
    const auto mi = static_cast<std::size_t>(m);
    std::map<std::string, std::array<double, 2>> sq;  // author -> {C sum, R sum}
    auto& table = ens.scores[mi];
    for (const auto& a : authors) table[a] = AuthorScores{};
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto& r = val[i];
      auto& s = table[r.author_id];
      const double truth = static_cast<double>(r.targets->get(m));
      const double c = static_cast<double>(raw_count(transform, *c_pred[i][mi])) - truth;
      ++s.n_val;
      sq[r.author_id][0] += c * c;
      if (r_pred[i][mi]) {
        const double d = static_cast<double>(raw_count(transform, *r_pred[i][mi])) - truth;
        sq[r.author_id][1] += d * d;
      }
    }
    for (auto& [a, s] : table) {
      if (s.n_val == 0) continue;
      const double n = static_cast<double>(s.n_val);
      s.c_mse = sq[a][0] / n;
      if (ens.per_author.contains(a)) s.r_mse = sq[a][1] / n;
      s.choice = choose_variant(s);
    }
  }
  return ens;
}

std::vector<std::array<std::optional<double>, kMetricCount>> predict_transformed(
    const std::vector<VideoRecord>& records, const TrainedEnsemble& ensemble, Routing routing) {
  for (const auto& r : records) {
    if (r.available_count() == 0) {
      throw UsageError("record " + r.video_id + " has no available modality");
    }
  }
  std::vector<std::array<std::optional<double>, kMetricCount>> out(records.size());
  for (Metric m : kMetrics) {
    const auto mi = static_cast<std::size_t>(m);
    // Group records by serving model so each model runs one batch.
    std::map<const VariantModel*, std::vector<std::size_t>> groups;
    std::vector<const VariantModel*> order;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& a = records[i].author_id;
      const VariantModel* vm = nullptr;
      switch (routing) {
        case Routing::selected:
          vm = &ensemble.model(ensemble.select(m, a), a);
          break;
        case Routing::global_only:
          vm = &ensemble.global;
          break;
        case Routing::author_only: {
          auto it = ensemble.per_author.find(a);
          if (it != ensemble.per_author.end()) vm = &it->second;
          break;
        }
      }
      if (!vm) continue;
      auto [it, inserted] = groups.try_emplace(vm);
      if (inserted) order.push_back(vm);
      it->second.push_back(i);
    }
    for (const VariantModel* vm : order) {
      const auto& idx = groups[vm];
      std::vector<VideoRecord> subset;
      subset.reserve(idx.size());
      for (std::size_t i : idx) subset.push_back(records[i]);
      const auto& models = vm->metrics[mi];
      auto feats = branch_features(subset, vm->bank, models, ensemble.config.k);
      auto y = synthesize(models.synthesis, feats);
      for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]][mi] = y[j];
    }
  }
  return out;
}

std::vector<PredictionRow> predict_rows(const std::vector<VideoRecord>& records,
                                        const TrainedEnsemble& ensemble) {
  const auto t = ensemble.transform();
  auto pred = predict_transformed(records, ensemble, Routing::selected);
  std::vector<PredictionRow> rows(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    rows[i].video_id = records[i].video_id;
    rows[i].predicted = PopularityTargets{raw_count(t, *pred[i][0]), raw_count(t, *pred[i][1]),
                                          raw_count(t, *pred[i][2]), raw_count(t, *pred[i][3])};
  }
  return rows;
}

PredictionRow predict_final(const VideoRecord& record, const TrainedEnsemble& ensemble) {
  return predict_rows({record}, ensemble).front();
}

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::ostringstream os;
  os << "video_id,hearts,shares,comments,plays\n";
  for (const auto& r : rows) {
    os << r.video_id << ',' << r.predicted.hearts << ',' << r.predicted.shares << ','
       << r.predicted.comments << ',' << r.predicted.plays << '\n';
  }
  return os.str();
}

}  // namespace mmpop::ensemble
