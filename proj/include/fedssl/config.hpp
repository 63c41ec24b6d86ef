// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a JSON document whose every key is optional, plus
// "path.to.key=value" overrides applied on top of it before validation.
// Defaults are the MNIST protocol (K=10, E=2, B=32, eta=0.01, alpha1=0.75,
// alpha2=0.1, T=100).
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedssl/error.hpp"

namespace fedssl {

struct DatasetConfig {
  std::string source = "idx";  // "idx" | "synthetic"
  std::string train_images = "data/mnist/train-images-idx3-ubyte";
  std::string train_labels = "data/mnist/train-labels-idx1-ubyte";
  std::string test_images = "data/mnist/t10k-images-idx3-ubyte";
  std::string test_labels = "data/mnist/t10k-labels-idx1-ubyte";
  std::size_t classes = 10;
  // synthetic only
  std::size_t per_class = 300;
  std::size_t test_per_class = 100;
  std::size_t input_dim = 10;
  double spread = 0.15;
  std::uint64_t seed = 0;
};

struct PartitionConfig {
  std::string kind = "iid";  // "iid" | "dirichlet" | "mismatch"
  std::size_t labeled_per_client = 60;
  std::size_t samples_per_client = 6000;  // iid; 0 = dataset size / K
  double concentration = 0.1;             // dirichlet; mismatch sizing when > 0
  std::size_t classes_per_client = 2;     // labeled classes (dirichlet, mismatch)
  std::size_t unlabeled_total = 0;        // dirichlet; 0 = all remaining
  std::size_t unlabeled_per_client = 500; // mismatch
  double ratio = 0.5;                     // mismatch
};

struct LearningRateConfig {
  std::string mode = "fixed";  // "fixed" | "theorem" (eta = sqrt(K / (T tau_bar)))
  double value = 0.01;
};

struct LandscapeConfig {
  double radius = 1.0;
  std::size_t points = 21;
  std::uint64_t direction_seed = 0;
};

struct RunConfig {
  DatasetConfig dataset;
  PartitionConfig partition;
  std::size_t clients = 10;
  std::size_t local_epochs = 2;
  std::size_t batch_labeled = 32;
  std::size_t batch_unlabeled = 32;
  std::size_t hidden = 128;
  std::size_t rounds = 100;
  LearningRateConfig learning_rate;
  double alpha0 = 1.0;
  double alpha1 = 0.75;
  double alpha2 = 0.1;
  std::size_t alpha0_ramp_epochs = 50;
  std::string label_mode = "auto";  // "auto" | "soft" | "hard"
  std::string algorithm = "fed-shvr";
  std::string sampling = "epoch-shuffle";  // | "with-replacement"
  std::string correction_form = "recursive";  // | "gradient-memory"
  std::vector<std::uint64_t> seeds{0};
  std::size_t gap_interval = 0;
  std::size_t threads = 1;
  LandscapeConfig landscape;
  std::string output_dir = "runs/default";
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"train_images", c.dataset.train_images},
        {"train_labels", c.dataset.train_labels},
        {"test_images", c.dataset.test_images},
        {"test_labels", c.dataset.test_labels},
        {"classes", c.dataset.classes},
        {"per_class", c.dataset.per_class},
        {"test_per_class", c.dataset.test_per_class},
        {"input_dim", c.dataset.input_dim},
        {"spread", c.dataset.spread},
        {"seed", c.dataset.seed}}},
      {"partition",
       {{"kind", c.partition.kind},
        {"labeled_per_client", c.partition.labeled_per_client},
        {"samples_per_client", c.partition.samples_per_client},
        {"concentration", c.partition.concentration},
        {"classes_per_client", c.partition.classes_per_client},
        {"unlabeled_total", c.partition.unlabeled_total},
        {"unlabeled_per_client", c.partition.unlabeled_per_client},
        {"ratio", c.partition.ratio}}},
      {"clients", c.clients},
      {"local_epochs", c.local_epochs},
      {"batch_labeled", c.batch_labeled},
      {"batch_unlabeled", c.batch_unlabeled},
      {"hidden", c.hidden},
      {"rounds", c.rounds},
      {"learning_rate", {{"mode", c.learning_rate.mode}, {"value", c.learning_rate.value}}},
      {"alpha0", c.alpha0},
      {"alpha1", c.alpha1},
      {"alpha2", c.alpha2},
      {"alpha0_ramp_epochs", c.alpha0_ramp_epochs},
      {"label_mode", c.label_mode},
      {"algorithm", c.algorithm},
      {"sampling", c.sampling},
      {"correction_form", c.correction_form},
      {"seeds", c.seeds},
      {"gap_interval", c.gap_interval},
      {"threads", c.threads},
      {"landscape",
       {{"radius", c.landscape.radius},
        {"points", c.landscape.points},
        {"direction_seed", c.landscape.direction_seed}}},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

/// Reads known keys from a JSON object, recording unknown keys and type
/// errors against their dotted path instead of stopping at the first.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& node, std::string path, std::vector<std::string>& issues)
      : node_(node), path_(std::move(path)), issues_(issues) {
    if (!node_.is_object()) {
      issues_.push_back(display(path_) + ": expected an object");
      return;
    }
    for (const auto& [key, _] : node_.items()) pending_.push_back(key);
  }

  template <class T>
  void read(const char* key, T& out) {
    consume(key);
    if (!node_.is_object() || !node_.contains(key)) return;
    const auto& value = node_.at(key);
    const std::string where = join(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!value.is_number_integer() || value.get<long long>() < 0) {
        issues_.push_back(where + ": expected a non-negative integer");
        return;
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!value.is_number()) {
        issues_.push_back(where + ": expected a number");
        return;
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) {
        issues_.push_back(where + ": expected a string");
        return;
      }
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!value.is_array()) {
        issues_.push_back(where + ": expected an array of integers");
        return;
      }
      for (const auto& e : value) {
        if (!e.is_number_integer() || e.get<long long>() < 0) {
          issues_.push_back(where + ": expected an array of non-negative integers");
          return;
        }
      }
    }
    out = value.get<T>();
  }

  FieldReader child(const char* key) {
    consume(key);
    static const nlohmann::json kEmpty = nlohmann::json::object();
    const auto& sub = node_.is_object() && node_.contains(key) ? node_.at(key) : kEmpty;
    return FieldReader(sub, join(key), issues_);
  }

  /// Reports keys nobody asked for.
  void finish() {
    for (const auto& key : pending_) issues_.push_back(join(key) + ": unknown key");
  }

 private:
  void consume(const std::string& key) { std::erase(pending_, key); }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  static std::string display(const std::string& path) { return path.empty() ? "<root>" : path; }

  const nlohmann::json& node_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::vector<std::string> pending_;
};

inline void require(bool ok, std::vector<std::string>& issues, const std::string& message) {
  if (!ok) issues.push_back(message);
}

template <class T>
bool one_of(const T& v, std::initializer_list<T> options) {
  for (const auto& o : options) {
    if (v == o) return true;
  }
  return false;
}

}  // namespace detail

/// Range and consistency checks; returns every problem found.
inline std::vector<std::string> validate(const RunConfig& c) {
  using detail::require;
  using S = std::string;
  std::vector<std::string> issues;
  require(detail::one_of<S>(c.dataset.source, {"idx", "synthetic"}), issues,
          "dataset.source: must be \"idx\" or \"synthetic\"");
  require(c.dataset.classes >= 2, issues, "dataset.classes: must be >= 2");
  if (c.dataset.source == "synthetic") {
    require(c.dataset.per_class >= 1, issues, "dataset.per_class: must be >= 1");
    require(c.dataset.test_per_class >= 1, issues, "dataset.test_per_class: must be >= 1");
    require(c.dataset.input_dim >= 1, issues, "dataset.input_dim: must be >= 1");
    require(c.dataset.spread >= 0.0, issues, "dataset.spread: must be >= 0");
  }
  require(detail::one_of<S>(c.partition.kind, {"iid", "dirichlet", "mismatch"}), issues,
          "partition.kind: must be \"iid\", \"dirichlet\" or \"mismatch\"");
  if (c.partition.kind == "dirichlet") {
    require(c.partition.concentration > 0.0, issues, "partition.concentration: must be > 0");
  }
  if (c.partition.kind != "iid") {
    require(c.partition.classes_per_client >= 1 &&
                c.partition.classes_per_client <= c.dataset.classes,
            issues, "partition.classes_per_client: must be in [1, dataset.classes]");
  }
  if (c.partition.kind == "mismatch") {
    require(c.partition.ratio >= 0.0 && c.partition.ratio <= 1.0, issues,
            "partition.ratio: must be in [0, 1]");
    require(c.partition.concentration >= 0.0, issues, "partition.concentration: must be >= 0");
  }
  require(c.clients >= 1, issues, "clients: must be >= 1");
  require(c.local_epochs >= 1, issues, "local_epochs: must be >= 1");
  require(c.batch_labeled >= 1, issues, "batch_labeled: must be >= 1");
  require(c.batch_unlabeled >= 1, issues, "batch_unlabeled: must be >= 1");
  require(c.hidden >= 1, issues, "hidden: must be >= 1");
  require(detail::one_of<S>(c.learning_rate.mode, {"fixed", "theorem"}), issues,
          "learning_rate.mode: must be \"fixed\" or \"theorem\"");
  if (c.learning_rate.mode == "fixed") {
    require(c.learning_rate.value > 0.0, issues, "learning_rate.value: must be > 0");
  } else {
    require(c.rounds >= 1, issues, "rounds: theorem learning rate needs rounds >= 1");
  }
  require(c.alpha0 >= 0.0, issues, "alpha0: must be >= 0");
  require(c.alpha1 >= 0.0, issues, "alpha1: must be >= 0");
  require(c.alpha2 >= 0.0, issues, "alpha2: must be >= 0");
  require(detail::one_of<S>(c.label_mode, {"auto", "soft", "hard"}), issues,
          "label_mode: must be \"auto\", \"soft\" or \"hard\"");
  if (c.label_mode == "soft") {
    require(c.alpha1 > 0.0, issues, "label_mode: \"soft\" requires alpha1 > 0");
  }
  require(detail::one_of<S>(c.algorithm, {"fed-shvr", "fed-sh", "fed-svr", "fedavg", "fed-pseudo"}),
          issues, "algorithm: must be one of fed-shvr, fed-sh, fed-svr, fedavg, fed-pseudo");
  require(detail::one_of<S>(c.sampling, {"epoch-shuffle", "with-replacement"}), issues,
          "sampling: must be \"epoch-shuffle\" or \"with-replacement\"");
  require(detail::one_of<S>(c.correction_form, {"recursive", "gradient-memory"}), issues,
          "correction_form: must be \"recursive\" or \"gradient-memory\"");
  require(!c.seeds.empty(), issues, "seeds: must list at least one seed");
  require(c.threads >= 1, issues, "threads: must be >= 1");
  require(c.landscape.points >= 1 && c.landscape.points % 2 == 1, issues,
          "landscape.points: must be odd");
  require(c.landscape.radius > 0.0, issues, "landscape.radius: must be > 0");
  require(!c.output_dir.empty(), issues, "output_dir: must not be empty");
  return issues;
}

/// Parses a JSON tree (missing keys keep defaults) and validates it.
inline RunConfig parse_config(const nlohmann::json& doc) {
  std::vector<std::string> issues;
  RunConfig c;
  const nlohmann::json tree = doc.is_null() ? nlohmann::json::object() : doc;
  detail::FieldReader root(tree, "", issues);
  {
    auto d = root.child("dataset");
    d.read("source", c.dataset.source);
    d.read("train_images", c.dataset.train_images);
    d.read("train_labels", c.dataset.train_labels);
    d.read("test_images", c.dataset.test_images);
    d.read("test_labels", c.dataset.test_labels);
    d.read("classes", c.dataset.classes);
    d.read("per_class", c.dataset.per_class);
    d.read("test_per_class", c.dataset.test_per_class);
    d.read("input_dim", c.dataset.input_dim);
    d.read("spread", c.dataset.spread);
    d.read("seed", c.dataset.seed);
    d.finish();
  }
  {
    auto p = root.child("partition");
    p.read("kind", c.partition.kind);
    p.read("labeled_per_client", c.partition.labeled_per_client);
    p.read("samples_per_client", c.partition.samples_per_client);
    p.read("concentration", c.partition.concentration);
    p.read("classes_per_client", c.partition.classes_per_client);
    p.read("unlabeled_total", c.partition.unlabeled_total);
    p.read("unlabeled_per_client", c.partition.unlabeled_per_client);
    p.read("ratio", c.partition.ratio);
    p.finish();
  }
  root.read("clients", c.clients);
  root.read("local_epochs", c.local_epochs);
  root.read("batch_labeled", c.batch_labeled);
  root.read("batch_unlabeled", c.batch_unlabeled);
  root.read("hidden", c.hidden);
  root.read("rounds", c.rounds);
  {
    auto lr = root.child("learning_rate");
    lr.read("mode", c.learning_rate.mode);
    lr.read("value", c.learning_rate.value);
    lr.finish();
  }
  root.read("alpha0", c.alpha0);
  root.read("alpha1", c.alpha1);
  root.read("alpha2", c.alpha2);
  root.read("alpha0_ramp_epochs", c.alpha0_ramp_epochs);
  root.read("label_mode", c.label_mode);
  root.read("algorithm", c.algorithm);
  root.read("sampling", c.sampling);
  root.read("correction_form", c.correction_form);
  root.read("seeds", c.seeds);
  root.read("gap_interval", c.gap_interval);
  root.read("threads", c.threads);
  {
    auto l = root.child("landscape");
    l.read("radius", c.landscape.radius);
    l.read("points", c.landscape.points);
    l.read("direction_seed", c.landscape.direction_seed);
    l.finish();
  }
  root.read("output_dir", c.output_dir);
  root.finish();

  if (issues.empty()) {
    auto more = validate(c);
    issues.insert(issues.end(), more.begin(), more.end());
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return c;
}

/// Applies "a.b.c=value"; the value is parsed as JSON when possible and kept
/// as a string otherwise. Intermediate objects are created as needed.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override \"" + assignment + "\" is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  if (!doc.is_object()) doc = nlohmann::json::object();
  nlohmann::json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) keys.push_back(part);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    auto& next = (*node)[keys[i]];
    if (!next.is_object()) next = nlohmann::json::object();
    node = &next;
  }
  (*node)[keys.back()] = std::move(value);
}

inline nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace fedssl
