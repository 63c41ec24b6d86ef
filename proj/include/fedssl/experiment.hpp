// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: config -> data -> split -> fleet -> rounds -> artifacts.
// Everything written to metrics.csv is a pure function of the config and
// seeds; wall-clock time goes to timing.csv so metrics stay byte-comparable.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedssl/config.hpp"
#include "fedssl/dataset.hpp"
#include "fedssl/diagnostics.hpp"
#include "fedssl/io.hpp"
#include "fedssl/partition.hpp"
#include "fedssl/server.hpp"

namespace fedssl {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "FEDSSL_OUTPUT_DIR";

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// IDX files, or synthetic blobs whose test rows share the training centres.
inline TrainTest load_datasets(const DatasetConfig& d) {
  if (d.source == "synthetic") {
    Dataset all = synth_blobs(d.classes, d.per_class + d.test_per_class, d.input_dim, d.spread, d.seed);
    const std::size_t n_train = d.classes * d.per_class;
    std::vector<std::size_t> train_rows(n_train);
    std::vector<std::size_t> test_rows(all.size() - n_train);
    for (std::size_t i = 0; i < train_rows.size(); ++i) train_rows[i] = i;
    for (std::size_t i = 0; i < test_rows.size(); ++i) test_rows[i] = n_train + i;
    return {subset(all, train_rows), subset(all, test_rows)};
  }
  return {load_idx(d.train_images, d.train_labels, d.classes),
          load_idx(d.test_images, d.test_labels, d.classes)};
}

inline FederatedSplit make_split(const RunConfig& cfg, const Dataset& train, std::uint64_t seed) {
  const auto& p = cfg.partition;
  if (p.kind == "dirichlet") {
    return split_dirichlet_unlabeled(train, cfg.clients, p.concentration,
                                     {p.classes_per_client, p.labeled_per_client},
                                     p.unlabeled_total, seed);
  }
  if (p.kind == "mismatch") {
    return split_mismatch_ratio(train, cfg.clients,
                                {p.classes_per_client, p.labeled_per_client,
                                 p.unlabeled_per_client, p.ratio, p.concentration},
                                seed);
  }
  return split_iid(train, cfg.clients, p.labeled_per_client, p.samples_per_client, seed);
}

inline LossWeights loss_weights(const RunConfig& cfg) {
  LossWeights w;
  w.alpha0 = cfg.alpha0;
  w.alpha1 = cfg.label_mode == "hard" ? 0.0 : cfg.alpha1;
  w.alpha2 = cfg.alpha2;
  w.alpha0_ramp_epochs = cfg.alpha0_ramp_epochs;
  return w;
}

/// eta = sqrt(K / (T tau_bar)).
inline double theorem_learning_rate(std::size_t clients, std::size_t rounds, double tau_bar) {
  return std::sqrt(static_cast<double>(clients) / (static_cast<double>(rounds) * tau_bar));
}

inline Fleet build_fleet(const RunConfig& cfg, std::size_t input_dim, std::size_t classes,
                         std::vector<ClientData> data, std::uint64_t seed) {
  Rng init = derive_rng(seed, StreamTag::kModelInit);
  ModelParams theta0 = ModelParams::glorot({input_dim, cfg.hidden, classes}, init);
  RoundOptions options;
  options.local_epochs = cfg.local_epochs;
  options.gap_interval = cfg.gap_interval;
  options.threads = cfg.threads;
  options.correction_form = cfg.correction_form == "gradient-memory"
                                ? CorrectionForm::kGradientMemory
                                : CorrectionForm::kRecursive;
  const Sampling sampling =
      cfg.sampling == "with-replacement" ? Sampling::kWithReplacement : Sampling::kEpochShuffle;
  const Variant variant = parse_variant(cfg.algorithm).value();
  Fleet fleet = make_fleet(std::move(theta0), std::move(data), loss_weights(cfg), variant,
                           cfg.learning_rate.value, options, cfg.batch_labeled,
                           cfg.batch_unlabeled, sampling, seed);
  if (cfg.learning_rate.mode == "theorem") {
    fleet.server.eta = theorem_learning_rate(cfg.clients, cfg.rounds, fleet.server.tau_bar);
  }
  return fleet;
}

struct SeedRun {
  std::uint64_t seed = 0;
  FederatedSplit split;
  std::vector<RoundMetrics> rounds;
  Fleet fleet;  // state after the last round
};

using RoundCallback = std::function<void(const SeedRun&, const RoundMetrics&)>;

inline SeedRun run_seed(const RunConfig& cfg, const TrainTest& data, std::uint64_t seed,
                        const RoundCallback& on_round = {}) {
  SeedRun run;
  run.seed = seed;
  run.split = make_split(cfg, data.train, seed);
  run.fleet = build_fleet(cfg, data.train.input_dim(), data.train.classes,
                          materialize(data.train, run.split), seed);
  const EvalSet eval{data.test.features, data.test.labels};
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    run.rounds.push_back(run_round(run.fleet, &eval));
    if (on_round) on_round(run, run.rounds.back());
  }
  return run;
}

inline std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
    return std::filesystem::path(env);
  }
  return std::filesystem::path(cfg.output_dir);
}

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h{
      "seed",       "round",        "alpha0", "train_loss", "test_accuracy",
      "grad_norm_sq", "label_motion", "gap",    "correction_residual"};
  return h;
}

inline void write_metrics_row(CsvWriter& csv, std::uint64_t seed, const RoundMetrics& m) {
  csv.cell(seed).cell(static_cast<std::uint64_t>(m.round)).cell(m.alpha0).cell(m.train_loss);
  csv.cell(m.test_accuracy);
  if (m.gap) {
    csv.cell(m.gap->grad_norm_sq).cell(m.gap->label_motion).cell(m.gap->gap);
  } else {
    csv.empty().empty().empty();
  }
  csv.cell(m.correction_residual);
  csv.end_row();
}

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> accuracy;  // [seed][round]
  std::vector<double> final_accuracy;         // per seed
};

/// Runs every seed and writes metrics.csv, timing.csv, gap.csv (when the gap
/// is sampled), accuracy_summary.csv (two or more seeds), manifest.json, and
/// per seed split_<seed>.json and checkpoint_<seed>.bin.
inline ExperimentResult run_experiment(const RunConfig& cfg,
                                       const std::vector<std::string>& overrides = {},
                                       std::ostream* progress = nullptr) {
  {
    auto issues = validate(cfg);
    if (!issues.empty()) throw ValidationError(std::move(issues));
  }
  ExperimentResult result;
  result.output_dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(result.output_dir);
  const auto& dir = result.output_dir;

  const TrainTest data = load_datasets(cfg.dataset);
  CsvWriter metrics(dir / "metrics.csv", metrics_header());
  CsvWriter timing(dir / "timing.csv", {"seed", "round", "wall_ms"});
  std::optional<CsvWriter> gaps;
  if (cfg.gap_interval > 0) {
    gaps.emplace(dir / "gap.csv",
                 std::vector<std::string>{"seed", "round", "grad_norm_sq", "label_motion", "gap"});
  }

  nlohmann::json per_seed = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    auto on_round = [&](const SeedRun&, const RoundMetrics& m) {
      write_metrics_row(metrics, seed, m);
      timing.cell(seed).cell(static_cast<std::uint64_t>(m.round)).cell(m.wall_ms).end_row();
      if (gaps && m.gap) {
        gaps->cell(seed).cell(static_cast<std::uint64_t>(m.round)).cell(m.gap->grad_norm_sq);
        gaps->cell(m.gap->label_motion).cell(m.gap->gap).end_row();
      }
      if (progress != nullptr) {
        *progress << "seed " << seed << " round " << m.round << "/" << cfg.rounds
                  << " loss " << format_double(m.train_loss) << " acc "
                  << format_double(m.test_accuracy) << '\n';
      }
    };
    SeedRun run = run_seed(cfg, data, seed, on_round);
    metrics.flush();

    std::vector<double> acc;
    for (const auto& m : run.rounds) acc.push_back(m.test_accuracy);
    result.final_accuracy.push_back(acc.empty() ? std::nan("") : acc.back());
    result.accuracy.push_back(std::move(acc));
    result.seeds.push_back(seed);

    {
      std::ofstream out(dir / ("split_" + std::to_string(seed) + ".json"));
      out << to_json(run.split).dump() << '\n';
    }
    Checkpoint ck;
    ck.round = run.fleet.server.round;
    ck.params = pending_global_model(run.fleet);
    for (const auto& c : run.fleet.clients) ck.tables.push_back(c.vhat);
    save_checkpoint(dir / ("checkpoint_" + std::to_string(seed) + ".bin"), ck);

    std::vector<std::size_t> labeled_sizes;
    std::vector<std::size_t> unlabeled_sizes;
    for (const auto& c : run.fleet.clients) {
      labeled_sizes.push_back(c.labeled.size());
      unlabeled_sizes.push_back(c.unlabeled.size());
    }
    per_seed.push_back({{"seed", seed},
                        {"eta", run.fleet.server.eta},
                        {"tau_bar", run.fleet.server.tau_bar},
                        {"taus", run.fleet.server.taus},
                        {"omegas", run.fleet.server.omegas},
                        {"labeled_sizes", labeled_sizes},
                        {"unlabeled_sizes", unlabeled_sizes}});
  }

  if (result.accuracy.size() >= 2) {
    const auto sd = accuracy_std(result.accuracy);
    CsvWriter summary(dir / "accuracy_summary.csv", {"round", "mean_accuracy", "std_accuracy"});
    for (std::size_t t = 0; t < sd.size(); ++t) {
      double mean = 0.0;
      for (const auto& s : result.accuracy) mean += s[t];
      mean /= static_cast<double>(result.accuracy.size());
      summary.cell(static_cast<std::uint64_t>(t + 1)).cell(mean).cell(sd[t]).end_row();
    }
  }

  nlohmann::json manifest{{"version", kVersion},
                          {"config", to_json(cfg)},
                          {"overrides", overrides},
                          {"seeds", cfg.seeds},
                          {"runs", per_seed}};
  if (cfg.learning_rate.mode == "theorem") {
    manifest["notes"].push_back(
        "theorem learning rate used without checking the smoothness-based step ceiling");
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  return result;
}

/// F on a 2-D slice through a saved model, with the saved pseudo labels held
/// fixed. The split is rebuilt from (config, seed); alpha0 takes its ramped
/// value at the checkpoint round. Writes beta1, beta2, q rows to `csv_path`.
inline LandscapeGrid run_landscape(const RunConfig& cfg, const Checkpoint& ck, std::uint64_t seed,
                                   const std::filesystem::path& csv_path) {
  const TrainTest data = load_datasets(cfg.dataset);
  const FederatedSplit split = make_split(cfg, data.train, seed);
  const Fleet fleet = build_fleet(cfg, data.train.input_dim(), data.train.classes,
                                  materialize(data.train, split), seed);
  if (ck.params.shape().parameter_count() != fleet.server.theta.shape().parameter_count() ||
      ck.params.shape().input != data.train.input_dim()) {
    throw DataError("checkpoint model shape does not match the configured network");
  }
  if (ck.tables.size() != fleet.clients.size()) {
    throw DataError("checkpoint holds " + std::to_string(ck.tables.size()) +
                    " pseudo-label tables for " + std::to_string(fleet.clients.size()) +
                    " clients");
  }
  LossWeights w = fleet.weights;
  w.alpha0 = ramped_alpha0(fleet.weights, static_cast<std::size_t>(ck.round) * cfg.local_epochs);
  std::vector<ClientObjectiveContext> contexts;
  for (std::size_t k = 0; k < fleet.clients.size(); ++k) {
    contexts.push_back({fleet.clients[k].labeled, fleet.clients[k].unlabeled, ck.tables[k], w});
    check_context(contexts.back());
  }
  LandscapeGrid grid = landscape_slice(contexts, fleet.server.omegas, ck.params,
                                       {cfg.landscape.radius, cfg.landscape.points},
                                       cfg.landscape.direction_seed);
  CsvWriter csv(csv_path, {"beta1", "beta2", "q"});
  for (std::size_t i = 0; i < grid.beta1.size(); ++i) {
    for (std::size_t j = 0; j < grid.beta2.size(); ++j) {
      csv.cell(grid.beta1[i]).cell(grid.beta2[j]);
      csv.cell(grid.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))).end_row();
    }
  }
  return grid;
}

}  // namespace fedssl
