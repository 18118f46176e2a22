#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tabsynth/common.hpp"

namespace tabsynth {

enum class ColumnKind : std::uint8_t { Categorical, Continuous };

enum class Task : std::uint8_t {
  None,
  BinaryClassification,
  MulticlassClassification,
  Regression,
};

inline const char* to_string(ColumnKind k) {
  return k == ColumnKind::Categorical ? "categorical" : "continuous";
}

inline const char* to_string(Task t) {
  switch (t) {
    case Task::None: return "none";
    case Task::BinaryClassification: return "binary";
    case Task::MulticlassClassification: return "multiclass";
    case Task::Regression: return "regression";
  }
  return "?";
}

inline Task task_from_string(const std::string& s) {
  if (s == "none") return Task::None;
  if (s == "binary") return Task::BinaryClassification;
  if (s == "multiclass") return Task::MulticlassClassification;
  if (s == "regression") return Task::Regression;
  throw UsageError("unknown task '" + s + "' (expected none, binary, multiclass or regression)");
}

// Marker stored in categorical cells that were empty in the source file.
inline constexpr std::string_view kMissingMarker = "⟨missing⟩";

// Strict decimal grammar: optional leading '-', digits with at most one '.',
// at least one digit. No exponents, no leading '+'.
inline bool is_numeric_text(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && s[i] == '-') ++i;
  bool digit_seen = false;
  bool dot_seen = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c >= '0' && c <= '9') {
      digit_seen = true;
    } else if (c == '.') {
      if (dot_seen) return false;
      dot_seen = true;
    } else {
      return false;
    }
  }
  return digit_seen;
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Categorical;
};

struct TableSchema {
  std::vector<ColumnSpec> columns;
  std::optional<std::size_t> target_column;
  Task task = Task::None;

  std::size_t n_columns() const { return columns.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i].name == name) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i].name.empty()) {
        throw Error("schema: column " + std::to_string(i) + " has an empty name");
      }
      for (std::size_t j = i + 1; j < columns.size(); ++j) {
        if (columns[i].name == columns[j].name) {
          throw Error("schema: duplicate column name '" + columns[i].name + "'");
        }
      }
    }
    if (target_column) {
      if (*target_column >= columns.size()) {
        throw Error("schema: target column index out of range");
      }
      ColumnKind k = columns[*target_column].kind;
      if (task == Task::Regression && k != ColumnKind::Continuous) {
        throw Error("schema: regression target '" + columns[*target_column].name +
                    "' must be continuous");
      }
      if ((task == Task::BinaryClassification || task == Task::MulticlassClassification) &&
          k != ColumnKind::Categorical) {
        throw Error("schema: classification target '" + columns[*target_column].name +
                    "' must be categorical");
      }
    } else if (task != Task::None) {
      throw Error("schema: task set but no target column");
    }
  }

  bool operator==(const TableSchema& other) const {
    if (columns.size() != other.columns.size()) return false;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i].name != other.columns[i].name) return false;
      if (columns[i].kind != other.columns[i].kind) return false;
    }
    return target_column == other.target_column && task == other.task;
  }
};

// A cell keeps the source text verbatim; `value` is meaningful only for
// cells of continuous columns. Re-serialization emits `text`, so numeric
// formatting survives a load/save round trip exactly.
struct Cell {
  std::string text;
  double value = 0.0;
};

using Row = std::vector<Cell>;

inline Cell make_cell(ColumnKind kind, std::string text) {
  Cell c{std::move(text), 0.0};
  if (kind == ColumnKind::Continuous) {
    if (!is_numeric_text(c.text)) {
      throw Error("cell '" + c.text + "' is not a valid decimal number");
    }
    c.value = std::strtod(c.text.c_str(), nullptr);
  }
  return c;
}

struct DataTable {
  TableSchema schema;
  std::vector<Row> rows;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_columns() const { return schema.n_columns(); }

  const Cell& cell(std::size_t row, std::size_t col) const { return rows[row][col]; }

  void check_shape() const {
    schema.validate();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != schema.n_columns()) {
        throw Error("row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                    " cells, expected " + std::to_string(schema.n_columns()));
      }
    }
  }
};

struct ColumnStats {
  ColumnKind kind = ColumnKind::Categorical;
  std::size_t count = 0;  // non-missing observations

  // categorical: distinct value -> occurrences (sorted by value)
  std::map<std::string, std::size_t> categories;

  // continuous (population variance)
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  double variance = std::numeric_limits<double>::quiet_NaN();
  std::string min_text, max_text;

  bool empty() const { return count == 0; }
};

inline ColumnStats column_stats(const DataTable& table, std::size_t column) {
  if (column >= table.n_columns()) {
    throw Error("column_stats: column index " + std::to_string(column) + " out of range");
  }
  ColumnStats s;
  s.kind = table.schema.columns[column].kind;
  if (s.kind == ColumnKind::Categorical) {
    for (const Row& row : table.rows) {
      ++s.categories[row[column].text];
      ++s.count;
    }
    return s;
  }
  double sum = 0.0, sumsq = 0.0;
  for (const Row& row : table.rows) {
    double v = row[column].value;
    if (s.count == 0 || v < s.min) {
      s.min = v;
      s.min_text = row[column].text;
    }
    if (s.count == 0 || v > s.max) {
      s.max = v;
      s.max_text = row[column].text;
    }
    sum += v;
    sumsq += v * v;
    ++s.count;
  }
  if (s.count > 0) {
    s.mean = sum / double(s.count);
    s.variance = std::max(0.0, sumsq / double(s.count) - s.mean * s.mean);
  }
  return s;
}

// Stratified train/test split. Classification tasks stratify on the target
// column (each class's test count is round(fraction * class size), capped so
// at least one row of the class stays in train); other tasks split plainly.
// Deterministic for a fixed seed.
inline std::pair<DataTable, DataTable> split_stratified(const DataTable& table,
                                                        double test_fraction,
                                                        std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error("split: test fraction must lie in (0,1)");
  }
  const bool stratify = (table.schema.task == Task::BinaryClassification ||
                         table.schema.task == Task::MulticlassClassification);
  if (stratify && !table.schema.target_column) {
    throw Error("split: classification task requires a target column");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> test_idx;

  if (stratify) {
    std::map<std::string, std::vector<std::size_t>> by_class;
    std::size_t target = *table.schema.target_column;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      by_class[table.cell(r, target).text].push_back(r);
    }
    for (auto& [label, members] : by_class) {
      if (members.size() < 2) {
        throw Error("split: class '" + label + "' has only " +
                    std::to_string(members.size()) + " row(s), need at least 2");
      }
      std::shuffle(members.begin(), members.end(), rng);
      auto want = static_cast<std::size_t>(
          std::llround(test_fraction * double(members.size())));
      want = std::min(want, members.size() - 1);
      test_idx.insert(test_idx.end(), members.begin(), members.begin() + want);
    }
  } else {
    std::vector<std::size_t> order(table.n_rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    auto want = static_cast<std::size_t>(
        std::llround(test_fraction * double(order.size())));
    want = std::min(want, order.size());
    test_idx.assign(order.begin(), order.begin() + want);
  }

  std::vector<bool> in_test(table.n_rows(), false);
  for (std::size_t i : test_idx) in_test[i] = true;

  DataTable train{table.schema, {}}, test{table.schema, {}};
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    (in_test[r] ? test : train).rows.push_back(table.rows[r]);
  }
  return {std::move(train), std::move(test)};
}

// Schema adjustments applied after load.

inline DataTable with_target(DataTable table, const std::string& column_name, Task task) {
  auto idx = table.schema.index_of(column_name);
  if (!idx) throw UsageError("target column '" + column_name + "' not found");
  table.schema.target_column = *idx;
  table.schema.task = task;
  table.schema.validate();
  return table;
}

inline DataTable rename_columns(DataTable table,
                                const std::vector<std::pair<std::string, std::string>>& renames) {
  for (const auto& [from, to] : renames) {
    auto idx = table.schema.index_of(from);
    if (!idx) throw UsageError("rename: column '" + from + "' not found");
    table.schema.columns[*idx].name = to;
  }
  table.schema.validate();
  return table;
}

}  // namespace tabsynth
