//
// Copyright 2026 The DPFair Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpfair/dataio.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace dpfair {
namespace {

using testing::TempDir;
using testing::write_file;

const Schema kSmallSchema = {{"age", ColumnKind::kNumeric},
                             {"hours", ColumnKind::kNumeric},
                             {"sex", ColumnKind::kCategorical}};

TEST(LoadCensusCsv, ParsesDeclaredColumns) {
  TempDir dir("csv");
  write_file(dir / "t.csv", "age,hours,sex\n30, 40, Male\n50,20,Female\n40,30, Male\n");
  const auto t = load_census_csv(dir / "t.csv", kSmallSchema, true);
  EXPECT_EQ(t.row_count, 3u);
  EXPECT_EQ(std::get<NumericColumn>(t.columns[0]), (NumericColumn{30, 50, 40}));
  EXPECT_EQ(std::get<CategoricalColumn>(t.columns[2]),
            (CategoricalColumn{"Male", "Female", "Male"}));
}

TEST(LoadCensusCsv, WithoutHeader) {
  TempDir dir("csv");
  write_file(dir / "t.csv", "30,40,Male\n");
  EXPECT_EQ(load_census_csv(dir / "t.csv", kSmallSchema, false).row_count, 1u);
}

TEST(LoadCensusCsv, RaggedRowNamesTheRow) {
  TempDir dir("csv");
  write_file(dir / "t.csv", "age,hours,sex\n30,40,Male\n50,20\n");
  try {
    load_census_csv(dir / "t.csv", kSmallSchema, true);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(LoadCensusCsv, UnparseableNumberNamesRowAndColumn) {
  TempDir dir("csv");
  write_file(dir / "t.csv", "30,forty,Male\n");
  try {
    load_census_csv(dir / "t.csv", kSmallSchema, false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("hours"), std::string::npos) << msg;
  }
}

TEST(LoadCensusCsv, RejectsMissingValuesAndMissingFile) {
  TempDir dir("csv");
  write_file(dir / "t.csv", "30,?,Male\n");
  EXPECT_THROW(load_census_csv(dir / "t.csv", kSmallSchema, false), DataError);
  EXPECT_THROW(load_census_csv(dir / "absent.csv", kSmallSchema, false), DataError);
}

RawTable census_table() {
  RawTable t;
  t.column_names = {"age", "work", "const", "sex", "income"};
  t.columns = {NumericColumn{20, 40, 60, 30},
               CategoricalColumn{"priv", "gov", "priv", "self"},
               NumericColumn{7, 7, 7, 7},
               CategoricalColumn{"Male", "Female", "Male", "Male"},
               CategoricalColumn{"<=50K", ">50K", ">50K", "<=50K"}};
  t.row_count = 4;
  return t;
}

TEST(PreprocessCensus, OneHotAndMinMax) {
  const auto data = preprocess_census(census_table(), {"sex", "income", "Male", ""});
  // age (1) + work one-hot (3) + const (1); sex and income are excluded.
  ASSERT_EQ(data.d(), 5u);
  EXPECT_DOUBLE_EQ(data.features(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(data.features(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(data.features(2, 0), 1.0);
  // Categories in sorted order: gov, priv, self.
  EXPECT_EQ(std::vector<double>(data.features.row(1).begin() + 1,
                                data.features.row(1).begin() + 4),
            (std::vector<double>{1, 0, 0}));
  // Constant column maps to zeros.
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(data.features(i, 4), 0.0);
  EXPECT_EQ(data.groups, (std::vector<std::uint32_t>{0, 1, 0, 0}));
  EXPECT_EQ(data.labels, (std::vector<std::uint32_t>{0, 1, 1, 0}));
  EXPECT_EQ(data.group_names, (std::vector<std::string>{"Male", "Female"}));
  for (double v : data.features.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(PreprocessCensus, BinaryCategoricalOnlyGivesZeroOneFeatures) {
  RawTable t;
  t.column_names = {"a", "b", "s", "y"};
  t.columns = {CategoricalColumn{"x", "y", "x"}, CategoricalColumn{"u", "u", "v"},
               CategoricalColumn{"M", "F", "F"}, CategoricalColumn{"0", "1", "1"}};
  t.row_count = 3;
  const auto data = preprocess_census(t, {"s", "y", "F", "1"});
  for (double v : data.features.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(PreprocessCensus, RejectsNonBinaryProtected) {
  auto t = census_table();
  t.columns[3] = CategoricalColumn{"Male", "Female", "Other", "Male"};
  EXPECT_THROW(preprocess_census(t, {"sex", "income", "Male", ""}), DataError);
  EXPECT_THROW(preprocess_census(census_table(), {"sex", "income", "Nobody", ""}), DataError);
  EXPECT_THROW(preprocess_census(census_table(), {"age", "income", "20", ""}), DataError);
}

TEST(LoadIdx, ReadsImagesAndScalesPixels) {
  TempDir dir("idx");
  testing::write_idx(dir / "img", dir / "lbl", 2, 2, {{0, 255, 51, 0}, {255, 255, 0, 0}},
                     {3, 7});
  const auto data = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(data.n(), 2u);
  EXPECT_EQ(data.d(), 4u);
  EXPECT_EQ(data.num_classes, 10u);
  EXPECT_EQ(data.num_groups(), 10u);
  EXPECT_DOUBLE_EQ(data.features(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(data.features(0, 2), 0.2);
  EXPECT_EQ(data.labels, (std::vector<std::uint32_t>{3, 7}));
  EXPECT_EQ(data.groups, data.labels);
}

TEST(LoadIdx, Errors) {
  TempDir dir("idx");
  testing::write_idx(dir / "img", dir / "lbl", 2, 2, {{0, 1, 2, 3}, {4, 5, 6, 7}}, {1, 2});
  // Labels file used as images: wrong magic.
  EXPECT_THROW(load_idx(dir / "lbl", dir / "lbl"), DataError);
  // Count mismatch.
  testing::write_idx(dir / "img1", dir / "lbl1", 2, 2, {{0, 1, 2, 3}}, {1, 2});
  EXPECT_THROW(load_idx(dir / "img1", dir / "lbl1"), DataError);
  // Truncated pixel data.
  std::vector<unsigned char> img;
  testing::put_be32(img, 0x00000803);
  testing::put_be32(img, 2);
  testing::put_be32(img, 2);
  testing::put_be32(img, 2);
  img.insert(img.end(), {1, 2, 3, 4, 5});
  testing::write_bytes(dir / "img2", img);
  EXPECT_THROW(load_idx(dir / "img2", dir / "lbl"), DataError);
}

TEST(SubsampleGroup, ReducesTargetGroupExactly) {
  const auto data = testing::random_dataset(200, 3, 2, 2, 1);
  const auto sizes = data.group_sizes();
  const auto out = subsample_group(data, {1, 17, 9});
  EXPECT_EQ(out.group_sizes(), (std::vector<std::size_t>{sizes[0], 17}));
  // Other rows keep their relative order.
  std::vector<double> before, after;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.groups[i] == 0) before.push_back(data.features(i, 0));
  }
  for (std::size_t i = 0; i < out.n(); ++i) {
    if (out.groups[i] == 0) after.push_back(out.features(i, 0));
  }
  EXPECT_EQ(before, after);
}

TEST(SubsampleGroup, FullSizeIsIdentityAndOversizeFails) {
  const auto data = testing::random_dataset(50, 2, 2, 2, 3);
  const auto sizes = data.group_sizes();
  const auto same = subsample_group(data, {0, sizes[0], 1});
  EXPECT_EQ(same.features, data.features);
  EXPECT_EQ(same.labels, data.labels);
  EXPECT_THROW(subsample_group(data, {0, sizes[0] + 1, 1}), DataError);
}

TEST(Split, SizesAndDeterminism) {
  const auto data = testing::random_dataset(10, 2, 2, 2, 5);
  auto [tr, te] = split(data, 0.8, 11);
  EXPECT_EQ(tr.n(), 8u);
  EXPECT_EQ(te.n(), 2u);
  auto [tr2, te2] = split(data, 0.8, 11);
  EXPECT_EQ(tr.features, tr2.features);
  EXPECT_EQ(te.labels, te2.labels);
  EXPECT_EQ(std::llround(0.8 * 45222), 36178);
}

TEST(Split, IsAPartition) {
  const auto data = testing::random_dataset(97, 3, 2, 3, 8);
  auto [tr, te] = split(data, 0.7, 2);
  std::multiset<std::vector<double>> all, parts;
  for (std::size_t i = 0; i < data.n(); ++i) {
    auto r = data.features.row(i);
    all.insert({r.begin(), r.end()});
  }
  for (const auto* part : {&tr, &te}) {
    for (std::size_t i = 0; i < part->n(); ++i) {
      auto r = part->features.row(i);
      parts.insert({r.begin(), r.end()});
    }
  }
  EXPECT_EQ(all, parts);
  EXPECT_THROW(split(testing::random_dataset(1, 2, 1, 1, 0), 0.5, 0), DataError);
}

TEST(SynthTwoGroup, ShapeAndDeterminism) {
  const auto a = synth_two_group(950, 50, 20, 3.0, 1.0, 4);
  EXPECT_EQ(a.n(), 1000u);
  EXPECT_EQ(a.d(), 20u);
  EXPECT_EQ(a.group_sizes(), (std::vector<std::size_t>{950, 50}));
  const auto b = synth_two_group(950, 50, 20, 3.0, 1.0, 4);
  EXPECT_EQ(a.features, b.features);
  EXPECT_NO_THROW(a.validate());
}

TEST(SynthTwoGroup, ZeroSeparationIsUninformative) {
  // With no separation the class is independent of the features, so the
  // best single-axis threshold rule stays near chance.
  const auto data = synth_two_group(10, 4000, 5, 3.0, 0.0, 7);
  std::size_t agree = 0, count = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.groups[i] != 1) continue;
    ++count;
    agree += (data.features(i, 1) > 0) == (data.labels[i] == 1);
  }
  EXPECT_NEAR(static_cast<double>(agree) / count, 0.5, 0.03);
}

TEST(DatasetCache, RoundTripAndFingerprint) {
  TempDir dir("cache");
  auto data = testing::random_dataset(13, 4, 3, 2, 21);
  save_dataset(dir / "d.bin", data);
  const auto back = load_dataset(dir / "d.bin");
  EXPECT_EQ(back.features, data.features);
  EXPECT_EQ(back.labels, data.labels);
  EXPECT_EQ(back.groups, data.groups);
  EXPECT_EQ(back.group_names, data.group_names);
  EXPECT_EQ(back.num_classes, data.num_classes);
  EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(data));
  data.features(0, 0) += 1.0;
  EXPECT_NE(dataset_fingerprint(back), dataset_fingerprint(data));

  // Header is four little-endian u64 values.
  const auto bytes = serialize_dataset(back);
  std::uint64_t header[4];
  std::memcpy(header, bytes.data(), sizeof(header));
  EXPECT_EQ(header[0], 13u);
  EXPECT_EQ(header[1], 4u);
  EXPECT_EQ(header[2], 2u);
  EXPECT_EQ(header[3], 3u);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_dataset(truncated), DataError);
}

}  // namespace
}  // namespace dpfair
