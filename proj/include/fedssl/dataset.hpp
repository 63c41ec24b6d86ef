// SPDX-License-Identifier: Apache-2.0
//
// Datasets: IDX (MNIST) ingestion and Gaussian-blob synthetic data.
//
// IDX layout, all integers big-endian:
//   images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, count*rows*cols u8
//   labels: u32 magic 0x00000801, u32 count, count u8
// Files may be gzip-compressed; uncompressed files are read as-is.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/rng.hpp"

namespace fedssl {

struct Dataset {
  DenseMatrix features;  // samples x input_dim, values in [0, 1]
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features.cols()); }
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kCountMismatch, kBadLabel };

  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw IdxError(IdxError::Kind::kIo, "cannot open " + path.string());
  }
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw IdxError(IdxError::Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t> chunk(1 << 16);
  for (;;) {
    const int n = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(file);
      throw IdxError(IdxError::Kind::kIo, "read error in " + path.string());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(file);
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

inline void require_bytes(const std::vector<std::uint8_t>& b, std::size_t n,
                          const std::filesystem::path& path) {
  if (b.size() < n) {
    throw IdxError(IdxError::Kind::kTruncated, path.string() + ": truncated (" +
                                                   std::to_string(b.size()) + " bytes, need " +
                                                   std::to_string(n) + ")");
  }
}

inline void require_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& p) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08X (expected 0x%08X)", got, want);
    throw IdxError(IdxError::Kind::kBadMagic, p.string() + buf);
  }
}

}  // namespace detail

/// Loads an image/label file pair, scaling pixels by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t classes = 10) {
  const auto img = detail::read_maybe_gzipped(images_path);
  detail::require_bytes(img, 16, images_path);
  detail::require_magic(detail::read_be32(img, 0), kIdxImageMagic, images_path);
  const std::size_t count = detail::read_be32(img, 4);
  const std::size_t dim = std::size_t{detail::read_be32(img, 8)} * detail::read_be32(img, 12);
  detail::require_bytes(img, 16 + count * dim, images_path);

  const auto lab = detail::read_maybe_gzipped(labels_path);
  detail::require_bytes(lab, 8, labels_path);
  detail::require_magic(detail::read_be32(lab, 0), kIdxLabelMagic, labels_path);
  const std::size_t label_count = detail::read_be32(lab, 4);
  detail::require_bytes(lab, 8 + label_count, labels_path);
  if (label_count != count) {
    throw IdxError(IdxError::Kind::kCountMismatch,
                   images_path.string() + " has " + std::to_string(count) + " images but " +
                       labels_path.string() + " has " + std::to_string(label_count) + " labels");
  }

  Dataset ds;
  ds.classes = classes;
  ds.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  const std::uint8_t* pixels = img.data() + 16;
  for (std::size_t i = 0; i < count * dim; ++i) ds.features.data()[i] = pixels[i] / 255.0;
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[8 + i];
    if (static_cast<std::size_t>(ds.labels[i]) >= classes) {
      throw IdxError(IdxError::Kind::kBadLabel, labels_path.string() + ": label " +
                                                    std::to_string(ds.labels[i]) +
                                                    " out of range");
    }
  }
  return ds;
}

/// Balanced Gaussian clusters. Centres are uniform in [0.2, 0.8]^dim, samples
/// centre + N(0, spread^2) clipped to [0, 1]; sample i has label i mod C.
inline Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t input_dim,
                           double spread, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_blobs needs at least two classes");
  if (input_dim == 0) throw ConfigError("synth_blobs needs input_dim >= 1");
  Rng rng = derive_rng(seed, StreamTag::kDataset);
  std::uniform_real_distribution<double> centre_dist(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, 1.0);
  DenseMatrix centres(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(input_dim));
  for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = centre_dist(rng);

  Dataset ds;
  ds.classes = classes;
  const std::size_t n = classes * per_class;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i % classes);
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < input_dim; ++j) {
      const double x = centres(c, static_cast<Eigen::Index>(j)) + spread * noise(rng);
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::clamp(x, 0.0, 1.0);
    }
  }
  return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.classes = ds.classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) =
        ds.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = ds.labels[rows[i]];
  }
  return out;
}

}  // namespace fedssl
