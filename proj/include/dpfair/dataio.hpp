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

#ifndef DPFAIR_DATAIO_HPP_
#define DPFAIR_DATAIO_HPP_

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "dpfair/common.hpp"

namespace dpfair {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

enum class ColumnKind { kCategorical, kNumeric };

struct ColumnDecl {
  std::string name;
  ColumnKind kind;
};

using Schema = std::vector<ColumnDecl>;
using CategoricalColumn = std::vector<std::string>;
using NumericColumn = std::vector<double>;
using Column = std::variant<CategoricalColumn, NumericColumn>;

struct RawTable {
  std::vector<std::string> column_names;
  std::vector<Column> columns;
  std::size_t row_count = 0;

  std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < column_names.size(); ++i) {
      if (column_names[i] == name) return i;
    }
    throw DataError("no column named '" + std::string(name) + "'");
  }
};

// Feature matrix plus class and group labels. `slice` marks datasets that are
// allowed to miss some groups (batches, test splits of tiny data).
struct Dataset {
  Matrix features;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint32_t> groups;
  std::vector<std::string> group_names;
  std::uint32_t num_classes = 0;
  bool slice = false;

  std::size_t n() const { return labels.size(); }
  std::size_t d() const { return features.cols(); }
  std::size_t num_groups() const { return group_names.size(); }

  std::vector<std::size_t> group_sizes() const {
    std::vector<std::size_t> sizes(num_groups(), 0);
    for (auto g : groups) ++sizes[g];
    return sizes;
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = Matrix(rows.size(), d());
    out.labels.reserve(rows.size());
    out.groups.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = features.row(rows[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[rows[i]]);
      out.groups.push_back(groups[rows[i]]);
    }
    out.group_names = group_names;
    out.num_classes = num_classes;
    out.slice = true;
    return out;
  }

  // Throws DataError on any violated invariant.
  void validate() const {
    if (features.rows() != labels.size() || labels.size() != groups.size()) {
      throw DataError("dataset row counts disagree");
    }
    if (num_classes == 0) throw DataError("dataset has no classes");
    for (auto y : labels) {
      if (y >= num_classes) throw DataError("label out of range");
    }
    for (auto g : groups) {
      if (g >= num_groups()) throw DataError("group index out of range");
    }
    if (!slice) {
      auto sizes = group_sizes();
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (sizes[k] == 0) {
          throw DataError("group '" + group_names[k] + "' has no rows");
        }
      }
    }
  }
};

struct ImbalanceSpec {
  std::uint32_t target_group = 0;
  std::size_t target_size = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const unsigned char> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

// Knuth's selection sampling: k of n indices, uniform, ascending.
inline std::vector<std::size_t> select_sorted(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(k);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n && out.size() < k; ++i) {
    const double remaining_needed = static_cast<double>(k - out.size());
    const double remaining_pool = static_cast<double>(n - i);
    if (unif(rng) * remaining_pool < remaining_needed) out.push_back(i);
  }
  return out;
}

}  // namespace detail

// Parses a comma-separated census file. Cells are trimmed; empty cells and
// "?" are rejected as missing values.
inline RawTable load_census_csv(const std::filesystem::path& path,
                                const Schema& schema, bool has_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  if (schema.empty()) throw DataError("empty schema");

  RawTable table;
  for (const auto& c : schema) {
    table.column_names.push_back(c.name);
    if (c.kind == ColumnKind::kNumeric) {
      table.columns.emplace_back(NumericColumn{});
    } else {
      table.columns.emplace_back(CategoricalColumn{});
    }
  }

  std::string line;
  std::size_t line_no = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_commas(line);
    if (has_header && line_no == 1) {
      if (cells.size() != schema.size()) {
        throw DataError("header has " + std::to_string(cells.size()) +
                        " columns, schema declares " +
                        std::to_string(schema.size()));
      }
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c] != schema[c].name) {
          throw DataError("header column " + std::to_string(c) + " is '" +
                          std::string(cells[c]) + "', schema expects '" +
                          schema[c].name + "'");
        }
      }
      continue;
    }
    const std::string where =
        "row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    if (cells.size() != schema.size()) {
      throw DataError(where + ": expected " + std::to_string(schema.size()) +
                      " fields, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].empty() || cells[c] == "?") {
        throw DataError(where + ", column '" + schema[c].name + "': missing value");
      }
      if (auto* num = std::get_if<NumericColumn>(&table.columns[c])) {
        auto v = detail::parse_double(cells[c]);
        if (!v) {
          throw DataError(where + ", column '" + schema[c].name +
                          "': cannot parse '" + std::string(cells[c]) +
                          "' as a number");
        }
        num->push_back(*v);
      } else {
        std::get<CategoricalColumn>(table.columns[c]).emplace_back(cells[c]);
      }
    }
    ++row;
  }
  table.row_count = row;
  return table;
}

struct CensusColumns {
  std::string protected_column;
  std::string label_column;
  // Protected value mapped to group 0; the other value becomes group 1.
  std::string protected_positive;
  // Label value mapped to class 1. Empty: class order is lexicographic.
  std::string label_positive;
};

// One-hot encodes categorical columns (every category kept, sorted order) and
// min-max scales numeric columns; the protected and label columns are taken
// out of the features.
inline Dataset preprocess_census(const RawTable& table, const CensusColumns& cols) {
  const std::size_t prot = table.column_index(cols.protected_column);
  const std::size_t lab = table.column_index(cols.label_column);
  if (prot == lab) throw DataError("protected and label columns must differ");

  auto categorical = [&](std::size_t c) -> const CategoricalColumn& {
    const auto* col = std::get_if<CategoricalColumn>(&table.columns[c]);
    if (!col) {
      throw DataError("column '" + table.column_names[c] + "' must be categorical");
    }
    return *col;
  };

  const auto& prot_col = categorical(prot);
  const std::set<std::string> prot_values(prot_col.begin(), prot_col.end());
  if (prot_values.size() != 2) {
    throw DataError("protected column '" + cols.protected_column + "' has " +
                    std::to_string(prot_values.size()) +
                    " distinct values; exactly 2 are supported");
  }
  if (!prot_values.contains(cols.protected_positive)) {
    throw DataError("protected value '" + cols.protected_positive +
                    "' does not occur in column '" + cols.protected_column + "'");
  }
  std::string other_group;
  for (const auto& v : prot_values) {
    if (v != cols.protected_positive) other_group = v;
  }

  const auto& label_col = categorical(lab);
  const std::set<std::string> label_values(label_col.begin(), label_col.end());
  if (label_values.size() != 2) {
    throw DataError("label column '" + cols.label_column + "' has " +
                    std::to_string(label_values.size()) +
                    " distinct values; a binary label is required");
  }
  std::string positive_label = *label_values.rbegin();
  if (!cols.label_positive.empty()) {
    if (!label_values.contains(cols.label_positive)) {
      throw DataError("label value '" + cols.label_positive + "' does not occur");
    }
    positive_label = cols.label_positive;
  }

  const std::size_t n = table.row_count;
  // Each feature column is produced as a block of dense columns.
  std::vector<std::vector<double>> feature_cols;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c == prot || c == lab) continue;
    if (const auto* num = std::get_if<NumericColumn>(&table.columns[c])) {
      const auto [lo, hi] = std::minmax_element(num->begin(), num->end());
      std::vector<double> out(n, 0.0);
      if (n > 0 && *hi > *lo) {
        const double range = *hi - *lo;
        for (std::size_t i = 0; i < n; ++i) out[i] = ((*num)[i] - *lo) / range;
      }
      feature_cols.push_back(std::move(out));
    } else {
      const auto& cat = std::get<CategoricalColumn>(table.columns[c]);
      const std::set<std::string> values(cat.begin(), cat.end());
      for (const auto& v : values) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) out[i] = cat[i] == v ? 1.0 : 0.0;
        feature_cols.push_back(std::move(out));
      }
    }
  }

  Dataset data;
  data.features = Matrix(n, feature_cols.size());
  for (std::size_t j = 0; j < feature_cols.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) data.features(i, j) = feature_cols[j][i];
  }
  data.labels.resize(n);
  data.groups.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = label_col[i] == positive_label ? 1 : 0;
    data.groups[i] = prot_col[i] == cols.protected_positive ? 0 : 1;
  }
  data.group_names = {cols.protected_positive, other_group};
  data.num_classes = 2;
  data.validate();
  return data;
}

// Reads an IDX image/label pair. Pixels are scaled to [0, 1] and the class
// label doubles as the group label.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  constexpr std::uint32_t kImagesMagic = 0x00000803;
  constexpr std::uint32_t kLabelsMagic = 0x00000801;
  constexpr std::uint32_t kClasses = 10;

  const auto img = detail::read_file(images_path);
  const auto lbl = detail::read_file(labels_path);
  if (img.size() < 16) throw DataError(images_path.string() + ": truncated header");
  if (lbl.size() < 8) throw DataError(labels_path.string() + ": truncated header");
  if (detail::read_be32(img, 0) != kImagesMagic) {
    throw DataError(images_path.string() + ": bad magic number");
  }
  if (detail::read_be32(lbl, 0) != kLabelsMagic) {
    throw DataError(labels_path.string() + ": bad magic number");
  }
  const std::size_t count = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t label_count = detail::read_be32(lbl, 4);
  if (count != label_count) {
    throw DataError("image count " + std::to_string(count) +
                    " does not match label count " + std::to_string(label_count));
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) {
    throw DataError(images_path.string() + ": truncated pixel data");
  }
  if (lbl.size() < 8 + count) throw DataError(labels_path.string() + ": truncated labels");

  Dataset data;
  data.features = Matrix(count, pixels);
  data.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto row = data.features.row(i);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = img[16 + i * pixels + p] / 255.0;
    const std::uint32_t y = lbl[8 + i];
    if (y >= kClasses) {
      throw DataError(labels_path.string() + ": label " + std::to_string(y) +
                      " at index " + std::to_string(i) + " out of range");
    }
    data.labels[i] = y;
  }
  data.groups = data.labels;
  for (std::uint32_t k = 0; k < kClasses; ++k) data.group_names.push_back(std::to_string(k));
  data.num_classes = kClasses;
  // A small IDX file need not contain every digit.
  data.slice = true;
  data.validate();
  return data;
}

// Shrinks one group to exactly spec.target_size rows by seeded sampling
// without replacement; all rows keep their original relative order.
inline Dataset subsample_group(const Dataset& data, const ImbalanceSpec& spec) {
  if (spec.target_group >= data.num_groups()) {
    throw DataError("imbalance target group out of range");
  }
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.groups[i] == spec.target_group) members.push_back(i);
  }
  if (spec.target_size > members.size()) {
    throw DataError("cannot reduce group '" + data.group_names[spec.target_group] +
                    "' of size " + std::to_string(members.size()) + " to " +
                    std::to_string(spec.target_size));
  }
  auto rng = make_stream(spec.seed, Stream::kData);
  const auto chosen = detail::select_sorted(members.size(), spec.target_size, rng);
  std::vector<bool> keep(data.n(), true);
  for (auto i : members) keep[i] = false;
  for (auto c : chosen) keep[members[c]] = true;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (keep[i]) rows.push_back(i);
  }
  Dataset out = data.subset(rows);
  out.slice = data.slice;
  return out;
}

// Seeded shuffle then a (train, test) cut with |train| = round(fraction * n).
inline std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction,
                                         std::uint64_t seed) {
  if (data.n() < 2) throw DataError("split needs at least 2 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(data.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = make_stream(seed, Stream::kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(data.n())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.n() - 1);
  std::span<const std::size_t> all(perm);
  return {data.subset(all.first(n_train)), data.subset(all.subspan(n_train))};
}

// Two groups, each a balanced-in-expectation two-class Gaussian mixture. Class
// means sit at +/- separation along a group-specific axis (group 0 uses axis 0,
// group 1 uses axis 1), with unit isotropic noise. Group 0 rows come first.
inline Dataset synth_two_group(std::size_t n_major, std::size_t n_minor, std::size_t d,
                               double separation_major, double separation_minor,
                               std::uint64_t seed) {
  if (n_major == 0 || n_minor == 0) throw DataError("group sizes must be positive");
  if (d < 2) throw DataError("synthetic data needs at least 2 dimensions");
  auto rng = make_stream(seed, Stream::kData);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  Dataset data;
  const std::size_t n = n_major + n_minor;
  data.features = Matrix(n, d);
  data.labels.resize(n);
  data.groups.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t g = i < n_major ? 0 : 1;
    const std::uint32_t y = coin(rng) ? 1 : 0;
    const double sep = g == 0 ? separation_major : separation_minor;
    auto row = data.features.row(i);
    for (auto& x : row) x = noise(rng);
    row[g] += (y == 1 ? 1.0 : -1.0) * sep;
    data.labels[i] = y;
    data.groups[i] = g;
  }
  data.group_names = {"major", "minor"};
  data.num_classes = 2;
  return data;
}

// Cache format (little-endian): u64 n, u64 d, u64 K, u64 num_classes; n*d f64
// features row-major; n u32 labels; n u32 groups; then K group names, each a
// u32 byte length followed by the UTF-8 bytes.
inline std::vector<unsigned char> serialize_dataset(const Dataset& data) {
  std::vector<unsigned char> out;
  auto put = [&out](const void* p, std::size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + bytes);
  };
  const std::uint64_t header[4] = {data.n(), data.d(), data.num_groups(),
                                   data.num_classes};
  put(header, sizeof(header));
  put(data.features.data().data(), data.features.data().size() * sizeof(double));
  put(data.labels.data(), data.labels.size() * sizeof(std::uint32_t));
  put(data.groups.data(), data.groups.size() * sizeof(std::uint32_t));
  for (const auto& name : data.group_names) {
    const auto len = static_cast<std::uint32_t>(name.size());
    put(&len, sizeof(len));
    put(name.data(), name.size());
  }
  return out;
}

inline Dataset deserialize_dataset(std::span<const unsigned char> bytes) {
  std::size_t off = 0;
  auto take = [&](void* p, std::size_t n) {
    if (off + n > bytes.size()) throw DataError("dataset cache truncated");
    std::memcpy(p, bytes.data() + off, n);
    off += n;
  };
  std::uint64_t header[4];
  take(header, sizeof(header));
  const auto [n, d, k, c] = std::tuple{header[0], header[1], header[2], header[3]};
  if (d != 0 && n > bytes.size() / (d * sizeof(double))) {
    throw DataError("dataset cache truncated");
  }
  Dataset data;
  data.features = Matrix(n, d);
  take(data.features.data().data(), n * d * sizeof(double));
  data.labels.resize(n);
  take(data.labels.data(), n * sizeof(std::uint32_t));
  data.groups.resize(n);
  take(data.groups.data(), n * sizeof(std::uint32_t));
  for (std::uint64_t g = 0; g < k; ++g) {
    std::uint32_t len = 0;
    take(&len, sizeof(len));
    std::string name(len, '\0');
    take(name.data(), len);
    data.group_names.push_back(std::move(name));
  }
  if (off != bytes.size()) throw DataError("dataset cache has trailing bytes");
  data.num_classes = static_cast<std::uint32_t>(c);
  data.slice = true;
  data.validate();
  return data;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  const auto bytes = serialize_dataset(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(detail::read_file(path));
}

inline std::uint64_t dataset_fingerprint(const Dataset& data) {
  return fnv1a(serialize_dataset(data));
}

}  // namespace dpfair

#endif  // DPFAIR_DATAIO_HPP_
