// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <zlib.h>

#include <fstream>
#include <set>

#include "test_support.hpp"

namespace fedssl {
namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                                     std::uint32_t cols, std::size_t pixels) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::size_t i = 0; i < pixels; ++i) b.push_back(static_cast<std::uint8_t>(i * 37 % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& b, bool gz) {
  if (gz) {
    gzFile f = gzopen(p.string().c_str(), "wb");
    gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
    gzclose(f);
  } else {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()),
                                            static_cast<std::streamsize>(b.size()));
  }
}

IdxError::Kind load_error(const std::filesystem::path& img, const std::filesystem::path& lab) {
  try {
    load_idx(img, lab, 10);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an IdxError";
  return IdxError::Kind::kIo;
}

TEST(Idx, LoadsPlainAndGzippedFixtures) {
  const auto dir = testing::scratch_dir("idx_ok");
  const auto img = idx_images(kIdxImageMagic, 3, 2, 2, 12);
  const auto lab = idx_labels(kIdxLabelMagic, {7, 0, 9});
  for (bool gz : {false, true}) {
    write_file(dir / "img", img, gz);
    write_file(dir / "lab", lab, gz);
    const Dataset ds = load_idx(dir / "img", dir / "lab", 10);
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.input_dim(), 4u);
    EXPECT_EQ(ds.labels, (std::vector<int>{7, 0, 9}));
    EXPECT_DOUBLE_EQ(ds.features(1, 1), (5 * 37 % 256) / 255.0);
  }
}

TEST(Idx, RejectsBadMagicTruncationMismatchAndLabels) {
  const auto dir = testing::scratch_dir("idx_bad");
  write_file(dir / "lab", idx_labels(kIdxLabelMagic, {1, 2}), false);
  write_file(dir / "img_magic", idx_images(0x00000804, 2, 2, 2, 8), false);
  EXPECT_EQ(load_error(dir / "img_magic", dir / "lab"), IdxError::Kind::kBadMagic);
  write_file(dir / "img_short", idx_images(kIdxImageMagic, 2, 2, 2, 7), false);
  EXPECT_EQ(load_error(dir / "img_short", dir / "lab"), IdxError::Kind::kTruncated);
  write_file(dir / "img_three", idx_images(kIdxImageMagic, 3, 2, 2, 12), false);
  EXPECT_EQ(load_error(dir / "img_three", dir / "lab"), IdxError::Kind::kCountMismatch);
  write_file(dir / "img_two", idx_images(kIdxImageMagic, 2, 2, 2, 8), false);
  write_file(dir / "lab_big", idx_labels(kIdxLabelMagic, {1, 10}), false);
  EXPECT_EQ(load_error(dir / "img_two", dir / "lab_big"), IdxError::Kind::kBadLabel);
  write_file(dir / "lab_magic", idx_labels(kIdxImageMagic, {1, 2}), false);
  EXPECT_EQ(load_error(dir / "img_two", dir / "lab_magic"), IdxError::Kind::kBadMagic);
  EXPECT_EQ(load_error(dir / "missing", dir / "lab"), IdxError::Kind::kIo);
}

TEST(Idx, BundledSubsetLoads) {
  const std::filesystem::path dir = std::filesystem::path(FEDSSL_SOURCE_DIR) / "data/mnist-subset";
  const Dataset train =
      load_idx(dir / "train-images-idx3-ubyte.gz", dir / "train-labels-idx1-ubyte.gz");
  EXPECT_EQ(train.size(), 9000u);
  EXPECT_EQ(train.input_dim(), 784u);
  EXPECT_LE(train.features.maxCoeff(), 1.0);
  EXPECT_GE(train.features.minCoeff(), 0.0);
}

TEST(Synthetic, BlobsAreDeterministicAndBalanced) {
  const Dataset a = synth_blobs(3, 10, 4, 0.1, 5);
  const Dataset b = synth_blobs(3, 10, 4, 0.1, 5);
  const Dataset c = synth_blobs(3, 10, 4, 0.1, 6);
  EXPECT_TRUE((a.features.array() == b.features.array()).all());
  EXPECT_FALSE((a.features.array() == c.features.array()).all());
  for (int k = 0; k < 3; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 10);
  EXPECT_THROW(synth_blobs(1, 10, 4, 0.1, 5), ConfigError);
}

Dataset labelled_pool(std::size_t classes, std::size_t per_class) {
  return synth_blobs(classes, per_class, 2, 0.1, 0);
}

void expect_disjoint(const FederatedSplit& split) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& c : split.clients) {
    seen.insert(c.labeled.begin(), c.labeled.end());
    seen.insert(c.unlabeled.begin(), c.unlabeled.end());
    total += c.labeled.size() + c.unlabeled.size();
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(Partition, IidBlocksHaveRequestedSizes) {
  const Dataset ds = labelled_pool(10, 100);
  const auto split = split_iid(ds, 10, 6, 90, 1);
  ASSERT_EQ(split.clients.size(), 10u);
  for (const auto& c : split.clients) {
    EXPECT_EQ(c.labeled.size(), 6u);
    EXPECT_EQ(c.unlabeled.size(), 84u);
  }
  expect_disjoint(split);
  EXPECT_THROW(split_iid(ds, 10, 6, 101, 1), DataError);
  EXPECT_THROW(split_iid(ds, 10, 91, 90, 1), DataError);
}

TEST(Partition, SplitsArePureFunctionsOfSeed) {
  const Dataset ds = labelled_pool(10, 50);
  EXPECT_EQ(to_json(split_iid(ds, 5, 4, 0, 3)), to_json(split_iid(ds, 5, 4, 0, 3)));
  EXPECT_NE(to_json(split_iid(ds, 5, 4, 0, 3)), to_json(split_iid(ds, 5, 4, 0, 4)));
  const LabeledSpec spec{2, 10};
  EXPECT_EQ(to_json(split_dirichlet_unlabeled(ds, 5, 0.1, spec, 0, 3)),
            to_json(split_dirichlet_unlabeled(ds, 5, 0.1, spec, 0, 3)));
}

TEST(Partition, DirichletLabeledShardsUseOnlySeenClasses) {
  const Dataset ds = labelled_pool(10, 60);
  const auto split = split_dirichlet_unlabeled(ds, 10, 0.1, {2, 20}, 0, 5);
  std::size_t unlabeled = 0;
  for (const auto& c : split.clients) {
    ASSERT_EQ(c.seen_classes.size(), 2u);
    EXPECT_EQ(c.labeled.size(), 20u);
    for (auto i : c.labeled) {
      EXPECT_TRUE(std::count(c.seen_classes.begin(), c.seen_classes.end(), ds.labels[i]) == 1);
    }
    unlabeled += c.unlabeled.size();
  }
  EXPECT_EQ(unlabeled, ds.size() - 200);
  expect_disjoint(split);
}

TEST(Partition, DirichletHonoursUnlabeledCap) {
  const Dataset ds = labelled_pool(10, 60);
  const auto split = split_dirichlet_unlabeled(ds, 4, 1.0, {2, 10}, 100, 5);
  std::size_t unlabeled = 0;
  for (const auto& c : split.clients) unlabeled += c.unlabeled.size();
  EXPECT_EQ(unlabeled, 100u);
  EXPECT_THROW(split_dirichlet_unlabeled(ds, 4, 1.0, {2, 10}, 10000, 5), DataError);
}

TEST(Partition, MismatchRatioIsExactPerClient) {
  const Dataset ds = labelled_pool(10, 200);
  const MismatchSpec spec{2, 10, 40, 0.25, 0.0};
  const auto split = split_mismatch_ratio(ds, 5, spec, 7);
  for (const auto& c : split.clients) {
    ASSERT_EQ(c.unlabeled.size(), 40u);
    std::size_t unseen = 0;
    for (auto i : c.unlabeled) {
      if (std::count(c.seen_classes.begin(), c.seen_classes.end(), ds.labels[i]) == 0) ++unseen;
    }
    EXPECT_EQ(unseen, 10u);
  }
  expect_disjoint(split);
}

TEST(Partition, MismatchWithDirichletSizingKeepsTotal) {
  const Dataset ds = labelled_pool(10, 200);
  const MismatchSpec spec{2, 10, 40, 0.5, 0.5};
  const auto split = split_mismatch_ratio(ds, 5, spec, 8);
  std::size_t total = 0;
  for (const auto& c : split.clients) total += c.unlabeled.size();
  EXPECT_EQ(total, 200u);
  expect_disjoint(split);
}

TEST(Partition, MaterializeHidesUnlabeledTruth) {
  const Dataset ds = labelled_pool(3, 20);
  const auto split = split_iid(ds, 2, 5, 30, 9);
  const auto data = materialize(ds, split);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].labeled.size(), 5u);
  EXPECT_EQ(data[0].unlabeled.size(), 25u);
  EXPECT_EQ(data[1].labeled.labels[0], ds.labels[split.clients[1].labeled[0]]);
  EXPECT_EQ(data[1].unlabeled.features.row(3), ds.features.row(
                                                   static_cast<Eigen::Index>(split.clients[1].unlabeled[3])));
}

}  // namespace
}  // namespace fedssl
