#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tabsynth/table.hpp"

namespace tabsynth {

struct CsvOptions {
  char delimiter = ',';
  bool header = true;
};

namespace detail {

// RFC-4180 parse: quoted fields may contain the delimiter, doubled quotes
// and line breaks. Returns one vector of fields per record.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, char delimiter) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool any = false;  // current record has content (field chars or a delimiter)

  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(fields));
    fields.clear();
    any = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      any = true;
    } else if (c == delimiter) {
      end_field();
      any = true;
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) end_record();
    } else if (c == '\n') {
      if (any || !field.empty()) end_record();
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw Error("csv: unterminated quoted field");
  if (any || !field.empty()) end_record();
  return records;
}

inline bool needs_quoting(std::string_view s, char delimiter) {
  for (char c : s) {
    if (c == delimiter || c == '"' || c == '\n' || c == '\r') return true;
  }
  return false;
}

inline void write_field(std::string& out, std::string_view s, char delimiter) {
  if (!needs_quoting(s, delimiter)) {
    out.append(s);
    return;
  }
  out.push_back('"');
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

}  // namespace detail

// A column is continuous iff it has at least one non-empty cell and every
// non-empty cell parses under the strict decimal grammar. Empty cells in a
// continuous column are an error (reported by load); in a categorical column
// they become kMissingMarker.
inline TableSchema infer_schema(const std::vector<std::string>& names,
                                const std::vector<std::vector<std::string>>& rows) {
  TableSchema schema;
  for (std::size_t c = 0; c < names.size(); ++c) {
    bool evidence = false;
    bool all_numeric = true;
    for (const auto& row : rows) {
      const std::string& cell = row[c];
      if (cell.empty()) continue;
      evidence = true;
      if (!is_numeric_text(cell)) {
        all_numeric = false;
        break;
      }
    }
    ColumnKind kind = (evidence && all_numeric) ? ColumnKind::Continuous
                                                : ColumnKind::Categorical;
    schema.columns.push_back({names[c], kind});
  }
  return schema;
}

inline DataTable table_from_records(const std::vector<std::string>& names,
                                    const std::vector<std::vector<std::string>>& records) {
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].size() != names.size()) {
      throw Error("csv: row " + std::to_string(r + 2) + " has " +
                  std::to_string(records[r].size()) + " fields, expected " +
                  std::to_string(names.size()));
    }
  }
  DataTable table;
  table.schema = infer_schema(names, records);
  table.schema.validate();
  table.rows.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    Row row;
    row.reserve(names.size());
    for (std::size_t c = 0; c < names.size(); ++c) {
      const std::string& text = records[r][c];
      ColumnKind kind = table.schema.columns[c].kind;
      if (text.empty()) {
        if (kind == ColumnKind::Continuous) {
          throw Error("csv: empty cell in continuous column '" + names[c] + "' at row " +
                      std::to_string(r + 2));
        }
        row.push_back({std::string(kMissingMarker), 0.0});
      } else {
        row.push_back(make_cell(kind, text));
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline DataTable load_csv_from_string(std::string_view text, const CsvOptions& options = {}) {
  auto records = detail::parse_csv(text, options.delimiter);
  if (records.empty()) throw Error("csv: input is empty");
  std::vector<std::string> names;
  if (options.header) {
    names = records.front();
    records.erase(records.begin());
  } else {
    for (std::size_t c = 0; c < records.front().size(); ++c) {
      names.push_back("col" + std::to_string(c));
    }
  }
  return table_from_records(names, records);
}

inline DataTable load_csv(const std::string& path, const CsvOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return load_csv_from_string(buf.str(), options);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

inline std::string to_csv_string(const DataTable& table, const CsvOptions& options = {}) {
  std::string out;
  if (options.header) {
    for (std::size_t c = 0; c < table.n_columns(); ++c) {
      if (c) out.push_back(options.delimiter);
      detail::write_field(out, table.schema.columns[c].name, options.delimiter);
    }
    out.push_back('\n');
  }
  for (const Row& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(options.delimiter);
      detail::write_field(out, row[c].text, options.delimiter);
    }
    out.push_back('\n');
  }
  return out;
}

inline void write_csv(const DataTable& table, const std::string& path,
                      const CsvOptions& options = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << to_csv_string(table, options);
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace tabsynth
