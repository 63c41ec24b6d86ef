// SPDX-License-Identifier: Apache-2.0
//
// On-disk artifacts: CSV tables with shortest round-trip float text, and
// binary checkpoints.
//
// Checkpoint layout, every integer and double little-endian:
//   8 bytes  "FSSLCKPT"
//   u32      version (1)
//   u32      reserved, 0
//   u64      round
//   u64 x 3  input, hidden, classes
//   f64 x P  flat parameters, P = parameter_count()
//   u64      table count
//   per table: i64 client id, u64 rows, u64 cols, f64 x rows*cols (row-major)
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "fedssl/error.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/pseudo_label.hpp"

namespace fedssl {

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw DataError("not a number: \"" + std::string(text) + "\"");
  }
  return v;
}

/// Writes a header line on open; cells are appended row by row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()) {
    if (!out_) throw DataError("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  CsvWriter& cell(double v) { return raw(format_double(v)); }
  CsvWriter& cell(std::uint64_t v) { return raw(std::to_string(v)); }
  CsvWriter& empty() { return raw(""); }

  CsvWriter& optional(const std::optional<double>& v) { return v ? cell(*v) : empty(); }

  void end_row() {
    if (in_row_ != columns_) throw std::logic_error("CSV row has the wrong number of cells");
    out_ << '\n';
    in_row_ = 0;
  }

  void flush() { out_.flush(); }

 private:
  CsvWriter& raw(const std::string& text) {
    out_ << (in_row_ ? "," : "") << text;
    ++in_row_;
    return *this;
  }

  std::ofstream out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

struct Checkpoint {
  std::uint64_t round = 0;
  ModelParams params;
  std::vector<PseudoLabelTable> tables;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'F', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, 0);
  detail::put_u64(out, ck.round);
  const MlpShape s = ck.params.shape();
  detail::put_u64(out, s.input);
  detail::put_u64(out, s.hidden);
  detail::put_u64(out, s.classes);
  for (Eigen::Index i = 0; i < ck.params.flat().size(); ++i) detail::put_f64(out, ck.params.flat()[i]);
  detail::put_u64(out, ck.tables.size());
  for (const auto& t : ck.tables) {
    detail::put_u64(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(t.client_id)));
    detail::put_u64(out, static_cast<std::uint64_t>(t.rows.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(t.rows.cols()));
    for (Eigen::Index i = 0; i < t.rows.size(); ++i) detail::put_f64(out, t.rows.data()[i]);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(kCheckpointMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  r.u32();
  Checkpoint ck;
  ck.round = r.u64();
  MlpShape s;
  s.input = r.u64();
  s.hidden = r.u64();
  s.classes = r.u64();
  if (s.input == 0 || s.hidden == 0 || s.classes < 2 || s.input > (1u << 24) ||
      s.hidden > (1u << 24) || s.classes > (1u << 24)) {
    throw DataError("checkpoint has an invalid model shape");
  }
  r.need(s.parameter_count() * 8);
  Vector flat(static_cast<Eigen::Index>(s.parameter_count()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = r.f64();
  ck.params = ModelParams(s, std::move(flat));
  const std::uint64_t tables = r.u64();
  for (std::uint64_t k = 0; k < tables; ++k) {
    PseudoLabelTable t;
    t.client_id = static_cast<int>(static_cast<std::int64_t>(r.u64()));
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (cols != 0 && rows > r.remaining() / 8 / cols) throw DataError("checkpoint truncated");
    t.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.rows.size(); ++i) t.rows.data()[i] = r.f64();
    ck.tables.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw DataError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fedssl
