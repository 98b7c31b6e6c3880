#include "mmpop/cli.hpp"

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "mmpop/bundle.hpp"
#include "mmpop/config.hpp"
#include "mmpop/dataset.hpp"
#include "mmpop/ensemble.hpp"
#include "mmpop/errors.hpp"
#include "mmpop/io.hpp"
#include "mmpop/metrics.hpp"

namespace mmpop::cli {

namespace {

using Logger = std::shared_ptr<spdlog::logger>;

Logger make_logger(bool quiet) {
  auto log = std::make_shared<spdlog::logger>("mmpop", std::make_shared<spdlog::sinks::stderr_sink_st>());
  log->set_pattern("[%H:%M:%S] %l: %v");
  log->set_level(quiet ? spdlog::level::warn : spdlog::level::info);
  return log;
}

std::string dims_text(const ModalityDims& d) {
  return std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]);
}

// Labeled, playable records for training or evaluation; unlabeled playable
// ones go to `pool` when given.
std::vector<VideoRecord> usable(const Manifest& m, const Logger& log,
                                std::vector<VideoRecord>* pool = nullptr) {
  std::vector<VideoRecord> out;
  std::size_t unplayable = 0, unlabeled = 0;
  for (const auto& r : m.records) {
    if (!r.playable) {
      ++unplayable;
    } else if (!r.labeled()) {
      ++unlabeled;
      if (pool) pool->push_back(r);
    } else {
      out.push_back(r);
    }
  }
  if (unplayable > 0) log->info("skipping {} unplayable records", unplayable);
  if (unlabeled > 0 && !pool) log->info("skipping {} unlabeled records", unlabeled);
  return out;
}

std::string history_json(const ensemble::TrainedEnsemble& ens) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& l : ens.logs) {
    j.push_back({{"variant", l.variant},
                 {"metric", std::string(metric_name(l.metric))},
                 {"role", l.role},
                 {"initial_loss", l.history.initial_loss},
                 {"train_loss", l.history.train_loss},
                 {"val_mse", l.history.val_mse},
                 {"best_epoch", l.history.best_epoch},
                 {"warnings", l.history.warnings}});
  }
  return j.dump(1) + "\n";
}

struct SynthArgs {
  std::string out;
  SynthConfig synth;
  std::vector<std::size_t> dims;
  std::string unlabeled_out;
  std::string config_out;
};

int do_synth(const SynthArgs& a, const Logger& log) {
  SynthConfig c = a.synth;
  if (!a.dims.empty()) {
    if (a.dims.size() != kModalityCount) throw UsageError("--dims takes three integers");
    for (std::size_t m = 0; m < kModalityCount; ++m) c.dims[m] = a.dims[m];
  }
  if (c.n_unlabeled > 0 && a.unlabeled_out.empty()) {
    throw UsageError("--unlabeled requires --unlabeled-out");
  }
  Manifest all = generate_synthetic(c);
  Manifest labeled{all.dims, {}};
  Manifest pool{all.dims, {}};
  for (auto& r : all.records) (r.labeled() ? labeled : pool).records.push_back(std::move(r));

  save_manifest(a.out, labeled);
  log->info("wrote {} videos ({} authors, dims {}) to {}", labeled.records.size(), c.n_authors,
            dims_text(c.dims), a.out);
  if (!a.unlabeled_out.empty()) {
    save_manifest(a.unlabeled_out, pool);
    log->info("wrote {} unlabeled videos to {}", pool.records.size(), a.unlabeled_out);
  }
  if (!a.config_out.empty()) {
    RunConfig rc;
    rc.dims = c.dims;
    rc.seed = c.seed;
    write_file_atomic(a.config_out, rc.to_json() + "\n");
    log->info("wrote default config to {}", a.config_out);
  }
  return kExitOk;
}

int do_validate(const std::string& path) {
  const Manifest m = load_manifest(path);
  const ManifestReport r = summarize(m);
  std::cout << "records   " << r.total << "\n"
            << "playable  " << r.playable << "\n"
            << "labeled   " << r.labeled << "\n"
            << "dims      " << dims_text(r.dims) << "\n";
  for (Modality mod : kModalities) {
    std::cout << "missing " << modality_name(mod) << " "
              << r.missing[static_cast<std::size_t>(mod)] << "\n";
  }
  return kExitOk;
}

struct SplitArgs {
  std::string manifest, train_out, val_out;
  double ratio = 0.8;
  std::uint64_t seed = 42;
};

int do_split(const SplitArgs& a, const Logger& log) {
  const Manifest m = load_manifest(a.manifest);
  auto s = split(usable(m, log), a.ratio, a.seed);
  for (const auto& w : s.warnings) log->warn("{}", w);
  save_manifest(a.train_out, Manifest{m.dims, s.train});
  save_manifest(a.val_out, Manifest{m.dims, s.val});
  log->info("split {} train / {} val", s.train.size(), s.val.size());
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, config, bundle, unlabeled;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, threads, k;
  std::optional<double> lr, lambda, mask_prob;
};

int do_train(const TrainArgs& a, const Logger& log) {
  RunConfig c = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.threads) c.threads = *a.threads;
  if (a.k) c.k = *a.k;
  if (a.lr) c.lr = *a.lr;
  if (a.lambda) c.lambda = *a.lambda;
  if (a.mask_prob) c.mask_prob = *a.mask_prob;
  c.validate();

  const Manifest m = load_manifest(a.manifest);
  std::vector<VideoRecord> pool;
  auto records = usable(m, log, &pool);
  if (!a.unlabeled.empty()) {
    const Manifest u = load_manifest(a.unlabeled);
    if (u.dims != m.dims) {
      throw DataError("unlabeled manifest dims " + dims_text(u.dims) +
                      " differ from training manifest dims " + dims_text(m.dims));
    }
    for (const auto& r : u.records) {
      if (r.playable) pool.push_back(r);
    }
  }
  if (records.empty()) throw DataError("manifest has no labeled playable records");
  auto s = split(records, c.ratio, c.seed);
  for (const auto& w : s.warnings) log->warn("{}", w);
  log->info("training on {} records, validating on {}, unlabeled pool {}", s.train.size(),
            s.val.size(), pool.size());

  auto ens = ensemble::train_variants(s.train, s.val, pool, m.dims, c);
  save_bundle(ens, a.bundle);
  write_file_atomic(a.bundle + ".history.json", history_json(ens));
  log->info("trained C and {} author models; bundle written to {}", ens.per_author.size(),
            a.bundle);
  for (Metric metric : kMetrics) {
    std::size_t r_choices = 0;
    for (const auto& [author, sc] : ens.scores[static_cast<std::size_t>(metric)]) {
      if (sc.choice == ensemble::Variant::R) ++r_choices;
    }
    log->info("{}: E selects R for {} of {} authors", metric_name(metric), r_choices,
              ens.scores[static_cast<std::size_t>(metric)].size());
  }
  return kExitOk;
}

struct EvalArgs {
  std::string bundle, manifest, report;
  bool all = false;
};

int do_evaluate(const EvalArgs& a, const Logger& log) {
  const auto ens = load_bundle(a.bundle);
  const Manifest m = load_manifest(a.manifest);
  if (m.dims != ens.dims) {
    throw DataError("manifest dims " + dims_text(m.dims) + " differ from bundle dims " +
                    dims_text(ens.dims));
  }
  auto records = usable(m, log);
  if (!a.all) records = split(records, ens.config.ratio, ens.config.seed).val;
  if (records.empty()) throw DataError("no labeled playable records to evaluate");
  const MetricsTable table = evaluate(ens, records);
  std::cout << emit_report(table, ReportFormat::text);
  if (!a.report.empty()) {
    write_file_atomic(a.report, emit_report(table, ReportFormat::structured));
    log->info("structured report written to {}", a.report);
  }
  return kExitOk;
}

struct PredictArgs {
  std::string bundle, manifest, out;
};

int do_predict(const PredictArgs& a, const Logger& log) {
  const auto ens = load_bundle(a.bundle);
  const Manifest m = load_manifest(a.manifest);
  if (m.dims != ens.dims) {
    throw DataError("manifest dims " + dims_text(m.dims) + " differ from bundle dims " +
                    dims_text(ens.dims));
  }
  auto records = filter_playable(m.records);
  if (records.size() < m.records.size()) {
    log->warn("skipping {} unplayable records", m.records.size() - records.size());
  }
  const auto rows = ensemble::predict_rows(records, ens);
  write_file_atomic(a.out, ensemble::predictions_csv(rows));
  log->info("wrote {} predictions to {}", rows.size(), a.out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Retrieval-augmented multi-modal popularity prediction", "mmpop"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest");
  synth->add_option("--out", sa.out, "Output manifest")->required();
  synth->add_option("--seed", sa.synth.seed, "Generator seed")->capture_default_str();
  synth->add_option("--videos", sa.synth.n_videos, "Labeled videos")->capture_default_str();
  synth->add_option("--authors", sa.synth.n_authors, "Authors")->capture_default_str();
  synth->add_option("--noise", sa.synth.noise, "Embedding noise std")->capture_default_str();
  synth->add_option("--dims", sa.dims, "Embedding widths d_v,d_a,d_t")->delimiter(',');
  synth->add_option("--unplayable", sa.synth.n_unplayable, "Labeled videos marked unplayable");
  synth->add_option("--missing-rate", sa.synth.missing_rate, "Per-modality drop probability");
  synth->add_option("--unlabeled", sa.synth.n_unlabeled, "Extra unlabeled videos");
  synth->add_option("--unlabeled-out", sa.unlabeled_out, "Manifest for the unlabeled videos");
  synth->add_option("--config-out", sa.config_out, "Write a default run config here");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a manifest and summarize it");
  validate->add_option("--manifest", validate_path, "Manifest")->required();

  SplitArgs sp;
  auto* split_cmd = app.add_subcommand("split", "Author-stratified train/val split");
  split_cmd->add_option("--manifest", sp.manifest, "Manifest")->required();
  split_cmd->add_option("--train-out", sp.train_out, "Train manifest")->required();
  split_cmd->add_option("--val-out", sp.val_out, "Validation manifest")->required();
  split_cmd->add_option("--ratio", sp.ratio, "Train fraction")->capture_default_str();
  split_cmd->add_option("--seed", sp.seed, "Split seed")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train C, R and E models");
  train->add_option("--manifest", ta.manifest, "Labeled manifest")->required();
  train->add_option("--config", ta.config, "Run config (JSON)");
  train->add_option("--out-bundle", ta.bundle, "Model bundle to write")->required();
  train->add_option("--unlabeled", ta.unlabeled, "Unlabeled manifest for the completion branch");
  train->add_option("--seed", ta.seed, "Override config seed");
  train->add_option("--epochs", ta.epochs, "Override config epochs");
  train->add_option("--threads", ta.threads, "Override worker threads (0 = all cores)");
  train->add_option("--k", ta.k, "Override neighbours per query");
  train->add_option("--lr", ta.lr, "Override learning rate");
  train->add_option("--lambda", ta.lambda, "Override reconstruction weight");
  train->add_option("--mask-prob", ta.mask_prob, "Override modality mask probability");

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Report MSE/PLCC for R, C and E");
  eval->add_option("--bundle", ea.bundle, "Model bundle")->required();
  eval->add_option("--manifest", ea.manifest, "Labeled manifest")->required();
  eval->add_option("--report", ea.report, "Write the structured (JSON) report here");
  eval->add_flag("--all", ea.all, "Evaluate every record instead of the validation split");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Write predictions for a manifest");
  predict->add_option("--bundle", pa.bundle, "Model bundle")->required();
  predict->add_option("--manifest", pa.manifest, "Manifest to predict")->required();
  predict->add_option("--out", pa.out, "Predictions CSV")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  auto log = make_logger(quiet);
  try {
    if (*synth) return do_synth(sa, log);
    if (*validate) return do_validate(validate_path);
    if (*split_cmd) return do_split(sp, log);
    if (*train) return do_train(ta, log);
    if (*eval) return do_evaluate(ea, log);
    if (*predict) return do_predict(pa, log);
  } catch (const UsageError& e) {
    log->error("{}", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    log->error("{}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace mmpop::cli
