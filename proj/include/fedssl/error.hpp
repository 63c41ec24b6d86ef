// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fedssl {

/// Invalid shapes, dimensions or run settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Server/client message contract violated (missing or duplicate uploads).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A split or sampling request the dataset cannot satisfy.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Config validation failure carrying every offending field path.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : ConfigError(join(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = "invalid configuration:";
    for (const auto& issue : issues) out += "\n  " + issue;
    return out;
  }

  std::vector<std::string> issues_;
};

}  // namespace fedssl
