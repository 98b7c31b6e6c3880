#include "fixtures.hpp"

#include <atomic>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "mmpop/autodiff.hpp"
#include "mmpop/memory_bank.hpp"

using namespace mmpop;

namespace testfx {

namespace {

std::vector<MatrixD> as_double(const std::vector<const Matrix*>& ms) {
  std::vector<MatrixD> out;
  for (const Matrix* m : ms) out.push_back(MatrixD::cast(*m));
  return out;
}

// Six bank items and three queries; the second query lacks its acoustic
// embedding so absence vectors are exercised too.
struct Toy {
  std::vector<VideoRecord> bank_records;
  std::vector<VideoRecord> queries;
  ModalityDims dims{};
};

Toy toy(std::uint64_t seed) {
  Toy t;
  t.dims = {5, 4, 6};
  // Uneven dims so shapes cannot be confused.
  SynthConfig c;
  c.n_videos = 9;
  c.n_authors = 3;
  c.dims = t.dims;
  c.noise = 0.1;
  c.seed = seed;
  const auto all = generate_synthetic(c).records;
  t.bank_records.assign(all.begin(), all.begin() + 6);
  t.queries.assign(all.begin() + 6, all.end());
  t.queries[1].modalities[1].reset();
  return t;
}

}  // namespace

std::vector<VideoRecord> synthetic(std::size_t n, std::size_t authors, std::size_t dim,
                                   double noise, std::uint64_t seed, double missing_rate) {
  SynthConfig c;
  c.n_videos = n;
  c.n_authors = authors;
  c.dims = {dim, dim, dim};
  c.noise = noise;
  c.seed = seed;
  c.missing_rate = missing_rate;
  return generate_synthetic(c).records;
}

std::vector<VideoRecord> synthetic_unlabeled(std::size_t n_labeled, std::size_t authors,
                                             std::size_t dim, double noise, std::uint64_t seed,
                                             std::size_t n_unlabeled) {
  SynthConfig c;
  c.n_videos = n_labeled;
  c.n_authors = authors;
  c.dims = {dim, dim, dim};
  c.noise = noise;
  c.seed = seed;
  c.n_unlabeled = n_unlabeled;
  std::vector<VideoRecord> out;
  for (auto& r : generate_synthetic(c).records) {
    if (!r.labeled()) out.push_back(std::move(r));
  }
  return out;
}

RunConfig small_config(std::size_t dim) {
  RunConfig c;
  c.dims = {dim, dim, dim};
  c.model_dim = 16;
  c.hidden = 16;
  c.k = 5;
  c.lr = 3e-3;
  c.epochs = 15;
  c.patience = 5;
  c.synthesis_epochs = 60;
  c.min_author_samples = 20;
  c.threads = 1;
  return c;
}

double xattn_gradient_error(std::size_t d, std::uint64_t seed) {
  const Toy t = toy(seed);
  const TargetTransform tr{TransformKind::log1p};
  const MemoryBank bank = MemoryBank::build(t.bank_records, t.dims, tr);
  xattn::Params params = xattn::Params::init(t.dims, d, d, Metric::plays, seed);
  std::vector<double> ys;
  std::vector<xattn::Query> queries;
  for (const auto& r : t.queries) {
    xattn::Query q;
    q.target = xattn::ItemFeatures::from_record(r, t.dims);
    q.neighbors = retrieve(bank, r, 3);
    queries.push_back(q);
    ys.push_back(tr.forward(*r.targets)[static_cast<std::size_t>(Metric::plays)]);
  }
  // Uneven neighbour counts exercise the padding mask.
  queries[2].neighbors.neighbors.resize(2);
  params.scaler = TargetScaler::fit(ys);
  MatrixD y(ys.size(), 1);
  for (std::size_t i = 0; i < ys.size(); ++i) y(i, 0) = params.scaler.to_z(ys[i]);
  std::vector<const xattn::Query*> qs;
  for (const auto& q : queries) qs.push_back(&q);

  ad::GraphBuilder build = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    return tape.mse(xattn::forward(tape, p, params, qs, bank), y);
  };
  return ad::finite_diff_check(build, as_double(params.matrices()), 1e-5);
}

double completion_gradient_error(std::size_t d, std::uint64_t seed) {
  const Toy t = toy(seed);
  completion::Params params = completion::Params::init(t.dims, d, d, Metric::hearts, seed);
  std::vector<const VideoRecord*> rs;
  std::vector<completion::MaskPattern> pats;
  for (const auto& r : t.queries) {
    rs.push_back(&r);
    pats.push_back(completion::MaskPattern::from_availability(r));
  }
  // Hide present modalities so reconstruction terms are active.
  pats[0].masked[0] = true;
  pats[2].masked[2] = true;
  const auto input = completion::BatchInput::build(rs, pats, t.dims);
  MatrixD y(rs.size(), 1);
  for (std::size_t i = 0; i < rs.size(); ++i) y(i, 0) = 0.3 * static_cast<double>(i) - 0.2;

  ad::GraphBuilder build = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    const auto out = completion::forward(tape, p, input);
    ad::Var loss = tape.mse(out.prediction, y);
    auto recon = completion::reconstruction_loss(tape, out, input);
    return tape.add(loss, tape.scale(*recon, 0.5));
  };
  return ad::finite_diff_check(build, as_double(params.matrices()), 1e-5);
}

double synthesis_gradient_error(std::size_t hidden, std::uint64_t seed) {
  ensemble::SynthesisParams params = ensemble::SynthesisParams::init(hidden, seed);
  params.scaler = TargetScaler{1.5, 0.7};
  const std::vector<ensemble::SynthesisFeatures> rows = {
      {1.2, 1.0, 0.8, 5}, {2.1, 2.4, 0.3, 1}, {0.4, 0.9, 0.0, 0}};
  const MatrixD y = MatrixD::from_rows({{0.5}, {-0.1}, {1.3}});
  ad::GraphBuilder build = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    return tape.mse(ensemble::synthesis_forward(tape, p, params, rows), y);
  };
  return ad::finite_diff_check(build, as_double(params.matrices()), 1e-5);
}

const SmallWorld& small_world() {
  static const SmallWorld world = [] {
    SmallWorld w;
    auto recs = synthetic(150, 4, 6, 0.05, 7);
    std::vector<VideoRecord> kept;
    std::size_t last = 0;
    for (auto& r : recs) {
      if (r.author_id == recs.back().author_id && ++last > 8) continue;
      kept.push_back(std::move(r));
    }
    w.config = small_config(6);
    auto s = split(kept, w.config.ratio, w.config.seed);
    w.train = std::move(s.train);
    w.val = std::move(s.val);
    w.unlabeled = synthetic_unlabeled(150, 4, 6, 0.05, 7, 20);
    return w;
  }();
  return world;
}

const ensemble::TrainedEnsemble& small_ensemble() {
  static const ensemble::TrainedEnsemble ens = [] {
    const auto& w = small_world();
    return ensemble::train_variants(w.train, w.val, w.unlabeled, w.config.dims, w.config);
  }();
  return ens;
}

std::vector<VideoRecord> random_bank_records(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<VideoRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::optional<Embedding>, 3> mods;
    for (auto& m : mods) {
      if (rng.bernoulli(0.3)) continue;
      Embedding e(dim);
      bool nonzero = false;
      for (auto& v : e) {
        v = static_cast<float>(static_cast<int>(rng.index(3)) - 1);
        nonzero |= v != 0.0f;
      }
      if (!nonzero) e[0] = 1.0f;
      m = e;
    }
    if (!mods[0] && !mods[1] && !mods[2]) mods[2] = Embedding(dim, 1.0f);
    char id[16];
    std::snprintf(id, sizeof id, "id%04zu", rng.index(100000));
    VideoRecord r;
    r.video_id = id + std::to_string(i);
    r.author_id = "a";
    r.modalities = std::move(mods);
    r.targets = PopularityTargets{1, 2, 3, 4};
    out.push_back(std::move(r));
  }
  return out;
}

// Own similarity loop over the stored unit vectors.
std::vector<OracleHit> naive_retrieve(const MemoryBank& bank, const RetrievalQuery& q, std::size_t k,
                              const std::optional<std::string>& exclude) {
  std::vector<OracleHit> all;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (exclude && bank.id(i) == *exclude) continue;
    double sum = 0.0;
    int shared = 0;
    for (Modality m : kModalities) {
      const auto mi = static_cast<std::size_t>(m);
      if (!mask_has(q.mask, m) || !bank.available(i, m)) continue;
      auto u = bank.unit(i, m);
      double s = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) {
        s += static_cast<double>(q.unit[mi][j]) * static_cast<double>(u[j]);
      }
      sum += s;
      ++shared;
    }
    if (shared == 0) continue;
    all.push_back({bank.id(i), sum / shared});
  }
  std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::size_t retrieval_mismatches(std::size_t trials, std::uint64_t seed) {
  const TargetTransform tr{TransformKind::log1p};
  std::size_t bad = 0;
  for (std::uint64_t trial = 0; trial < trials; ++trial) {
    Rng rng(seed + trial);
    const std::size_t n = 1 + rng.index(200);
    const std::size_t dim = 2 + rng.index(3);
    const auto recs = random_bank_records(rng, n, dim);
    const auto bank = MemoryBank::build(recs, {dim, dim, dim}, tr);
    const auto queries = random_bank_records(rng, 5, dim);
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto q = RetrievalQuery::from_record(queries[qi]);
      const std::size_t k = 1 + rng.index(15);
      std::optional<std::string> exclude;
      if (qi % 2 == 0) exclude = bank.id(rng.index(n));
      const auto got = retrieve(bank, q, k, exclude);
      const auto want = naive_retrieve(bank, q, k, exclude);
      bool same = got.neighbors.size() == want.size();
      for (std::size_t j = 0; same && j < want.size(); ++j) {
        same = bank.id(got.neighbors[j].index) == want[j].id &&
               got.neighbors[j].score == want[j].score;
      }
      bad += same ? 0 : 1;
    }
  }
  return bad;
}

double pearson_two_pass(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double num = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return num / (std::sqrt(vx) * std::sqrt(vy));
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             ("mmpop-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<double> metric_column(const std::vector<VideoRecord>& records, Metric m,
                                  const TargetTransform& t) {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(t.forward(*r.targets)[static_cast<std::size_t>(m)]);
  return out;
}

}  // namespace testfx
