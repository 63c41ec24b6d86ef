// SPDX-License-Identifier: Apache-2.0
//
// fedssl: run | sweep | landscape | verify.
// Exit status: 0 success, 1 failed check or runtime error, 2 invalid input.
// Errors are printed to stderr as one JSON object.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedssl/fedssl.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string algorithm;
  std::string output_dir;
  std::vector<std::uint64_t> seeds;
  long long rounds = -1;
  long long threads = -1;
  bool quiet = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "JSON config file; missing keys keep defaults");
  app->add_option("--set", o.sets, "Override a config key, e.g. --set partition.kind=dirichlet")
      ->type_name("KEY=VALUE");
  app->add_option("--algorithm", o.algorithm, "fed-shvr | fed-sh | fed-svr | fedavg | fed-pseudo");
  app->add_option("--output-dir", o.output_dir, "Output directory (FEDSSL_OUTPUT_DIR wins)");
  app->add_option("--seeds", o.seeds, "Seed list");
  app->add_option("--rounds", o.rounds, "Communication rounds T");
  app->add_option("--threads", o.threads, "Client worker threads");
  app->add_flag("-q,--quiet", o.quiet, "No per-round progress");
}

/// Config file, then named flags, then --set entries, in that order.
std::pair<fedssl::RunConfig, std::vector<std::string>> resolve(const CommonOptions& o) {
  nlohmann::json doc = o.config_path.empty() ? nlohmann::json::object()
                                             : fedssl::read_config_file(o.config_path);
  std::vector<std::string> applied;
  auto apply = [&](const std::string& assignment) {
    fedssl::apply_override(doc, assignment);
    applied.push_back(assignment);
  };
  if (!o.algorithm.empty()) apply("algorithm=\"" + o.algorithm + "\"");
  if (!o.output_dir.empty()) apply("output_dir=" + nlohmann::json(o.output_dir).dump());
  if (!o.seeds.empty()) apply("seeds=" + nlohmann::json(o.seeds).dump());
  if (o.rounds >= 0) apply("rounds=" + std::to_string(o.rounds));
  if (o.threads >= 0) apply("threads=" + std::to_string(o.threads));
  for (const auto& s : o.sets) apply(s);
  return {fedssl::parse_config(doc), applied};
}

int report_error(const char* kind, const std::string& message,
                 const std::vector<std::string>& issues = {}) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  if (!issues.empty()) err["issues"] = issues;
  std::cerr << err.dump() << '\n';
  return std::string(kind) == "invalid_config" || std::string(kind) == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised learning simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedssl::kVersion);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "Train one configuration over its seed list");
  add_common(run, run_opts);

  CommonOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Train over a seed list and write per-round accuracy std");
  add_common(sweep, sweep_opts);

  CommonOptions land_opts;
  std::string checkpoint_path;
  std::string landscape_csv;
  std::uint64_t land_seed = 0;
  auto* landscape = app.add_subcommand("landscape", "Evaluate the objective on a 2-D slice");
  add_common(landscape, land_opts);
  landscape->add_option("--checkpoint", checkpoint_path, "Checkpoint written by run")->required();
  landscape->add_option("--seed", land_seed, "Seed the checkpoint was trained with");
  landscape->add_option("--out", landscape_csv, "CSV path (default <output_dir>/landscape.csv)");

  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run the identity self-checks");
  verify->add_option("--seed", verify_seed, "Seed for the synthetic problems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage", e.what());
  }

  try {
    if (*verify) {
      bool ok = true;
      for (const auto& r : fedssl::run_all_checks(verify_seed)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " value="
                  << fedssl::format_double(r.value) << " threshold="
                  << fedssl::format_double(r.threshold) << '\n';
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
    if (*run || *sweep) {
      const CommonOptions& o = *run ? run_opts : sweep_opts;
      auto [cfg, applied] = resolve(o);
      if (*sweep && cfg.seeds.size() < 2) {
        return report_error("invalid_config", "sweep needs at least two seeds",
                            {"seeds: sweep needs at least two seeds"});
      }
      const auto result = fedssl::run_experiment(cfg, applied, o.quiet ? nullptr : &std::cerr);
      for (std::size_t i = 0; i < result.seeds.size(); ++i) {
        std::cout << "seed " << result.seeds[i] << " final_accuracy "
                  << fedssl::format_double(result.final_accuracy[i]) << '\n';
      }
      std::cout << "output " << result.output_dir.string() << '\n';
      return 0;
    }
    if (*landscape) {
      auto [cfg, applied] = resolve(land_opts);
      const auto ck = fedssl::load_checkpoint(checkpoint_path);
      const auto dir = fedssl::resolve_output_dir(cfg);
      std::filesystem::create_directories(dir);
      const std::filesystem::path out = landscape_csv.empty() ? dir / "landscape.csv"
                                                              : std::filesystem::path(landscape_csv);
      fedssl::run_landscape(cfg, ck, land_seed, out);
      std::cout << "output " << out.string() << '\n';
      return 0;
    }
  } catch (const fedssl::ValidationError& e) {
    return report_error("invalid_config", e.what(), e.issues());
  } catch (const fedssl::ConfigError& e) {
    return report_error("invalid_config", e.what());
  } catch (const fedssl::IdxError& e) {
    return report_error("data", e.what());
  } catch (const fedssl::DataError& e) {
    return report_error("data", e.what());
  } catch (const std::exception& e) {
    return report_error("runtime", e.what());
  }
  return 0;
}
