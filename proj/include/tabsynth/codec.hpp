#pragma once

#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tabsynth/tokenizer.hpp"

namespace tabsynth {

struct TokenSequence {
  std::vector<TokenId> ids;
  SerializationFormat provenance = SerializationFormat::NameValue;
};

// Dataset-wide fixed token budget per column for middle padding. Column 0's
// width covers its name, the space and the value; later columns cover the
// bare value. BOS/EOS framing is not part of the layout arithmetic.
struct PaddingLayout {
  std::vector<std::size_t> widths;
  std::vector<std::size_t> offsets;  // prefix sums of widths
  std::size_t total_length = 0;

  static PaddingLayout from_widths(std::vector<std::size_t> widths) {
    PaddingLayout layout;
    layout.widths = std::move(widths);
    layout.offsets.resize(layout.widths.size());
    std::size_t acc = 0;
    for (std::size_t i = 0; i < layout.widths.size(); ++i) {
      layout.offsets[i] = acc;
      acc += layout.widths[i];
    }
    layout.total_length = acc;
    return layout;
  }

  bool operator==(const PaddingLayout&) const = default;
};

inline std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

namespace detail {

inline void check_order(const std::vector<std::size_t>& order, std::size_t n) {
  if (order.size() != n) throw Error("column order has wrong size");
  std::vector<bool> seen(n, false);
  for (std::size_t i : order) {
    if (i >= n || seen[i]) throw Error("column order is not a permutation");
    seen[i] = true;
  }
}

inline bool is_identity(const std::vector<std::size_t>& order) {
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] != i) return false;
  }
  return true;
}

}  // namespace detail

// Per-column text fragments in the given order. For the name-carrying
// formats each fragment is a complete "name [is] value" clause (joined with
// ", " by serialize_row); for Compact only fragment 0 carries the name and
// fragments are joined with nothing at all.
inline std::vector<std::string> serialize_fragments(const Row& row, const TableSchema& schema,
                                                    SerializationFormat format,
                                                    const std::vector<std::size_t>& order) {
  detail::check_order(order, schema.n_columns());
  if (format == SerializationFormat::Compact && !detail::is_identity(order)) {
    throw Error("compact format requires identity column order");
  }
  std::vector<std::string> fragments;
  fragments.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::size_t c = order[k];
    const std::string& name = schema.columns[c].name;
    const std::string& value = row[c].text;
    switch (format) {
      case SerializationFormat::NameIsValue:
        fragments.push_back(name + " is " + value);
        break;
      case SerializationFormat::NameValue:
        fragments.push_back(name + " " + value);
        break;
      case SerializationFormat::Compact:
        fragments.push_back(k == 0 ? name + " " + value : value);
        break;
    }
  }
  return fragments;
}

inline std::string join_fragments(const std::vector<std::string>& fragments,
                                  SerializationFormat format) {
  std::string out;
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    if (i && format != SerializationFormat::Compact) out += ", ";
    out += fragments[i];
  }
  return out;
}

inline std::string serialize_row(const Row& row, const TableSchema& schema,
                                 SerializationFormat format,
                                 const std::vector<std::size_t>& order) {
  return join_fragments(serialize_fragments(row, schema, format, order), format);
}

inline std::string serialize_row(const Row& row, const TableSchema& schema,
                                 SerializationFormat format) {
  return serialize_row(row, schema, format, identity_order(schema.n_columns()));
}

// Tokens of each fragment, encoded column-wise (the Compact/Middle regime
// requires per-column tokenization so slot widths are well defined).
inline std::vector<std::vector<TokenId>> encode_fragments(const Row& row,
                                                          const TableSchema& schema,
                                                          SerializationFormat format,
                                                          const TokenRegistry& registry,
                                                          const std::vector<std::size_t>& order) {
  std::vector<std::string> fragments = serialize_fragments(row, schema, format, order);
  std::vector<std::vector<TokenId>> out;
  out.reserve(fragments.size());
  for (const std::string& f : fragments) out.push_back(registry.encode(f));
  return out;
}

// Token start/length of every fragment inside the unframed concatenated
// sequence, including the ", " separators of the name-carrying formats.
inline std::vector<std::pair<std::size_t, std::size_t>> fragment_token_spans(
    const Row& row, const TableSchema& schema, SerializationFormat format,
    const TokenRegistry& registry, const std::vector<std::size_t>& order) {
  auto fragments = encode_fragments(row, schema, format, registry, order);
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    if (i && format != SerializationFormat::Compact) ++pos;  // SEP token
    spans.emplace_back(pos, fragments[i].size());
    pos += fragments[i].size();
  }
  return spans;
}

// widths[i] = max token count of column i's compact fragment over the table.
inline PaddingLayout compute_padding_layout(const DataTable& table,
                                            const TokenRegistry& registry) {
  if (table.n_rows() == 0) throw Error("cannot compute a padding layout from an empty table");
  std::vector<std::size_t> widths(table.n_columns(), 0);
  auto order = identity_order(table.n_columns());
  for (const Row& row : table.rows) {
    auto fragments = encode_fragments(row, table.schema, SerializationFormat::Compact,
                                      registry, order);
    for (std::size_t c = 0; c < fragments.size(); ++c) {
      widths[c] = std::max(widths[c], fragments[c].size());
    }
  }
  return PaddingLayout::from_widths(std::move(widths));
}

// Middle padding: each fragment sits at the start of its fixed slot, PADs
// fill the remainder, slots are concatenated. Output length is exactly
// layout.total_length.
inline std::vector<TokenId> pad_middle(const std::vector<std::vector<TokenId>>& fragments,
                                       const PaddingLayout& layout) {
  if (fragments.size() != layout.widths.size()) {
    throw Error("pad: fragment count does not match layout");
  }
  std::vector<TokenId> out;
  out.reserve(layout.total_length);
  for (std::size_t c = 0; c < fragments.size(); ++c) {
    if (fragments[c].size() > layout.widths[c]) {
      throw Error("pad: column " + std::to_string(c) + " fragment has " +
                  std::to_string(fragments[c].size()) + " tokens but the layout allows " +
                  std::to_string(layout.widths[c]) + " (layout/dataset mismatch)");
    }
    out.insert(out.end(), fragments[c].begin(), fragments[c].end());
    out.insert(out.end(), layout.widths[c] - fragments[c].size(), TokenRegistry::kPad);
  }
  return out;
}

// Left/right padding to a batch-wide length.
inline std::vector<TokenId> pad_to_length(const std::vector<TokenId>& ids, std::size_t length,
                                          PaddingStrategy strategy) {
  if (strategy == PaddingStrategy::Middle) {
    throw Error("pad_to_length does not apply to middle padding");
  }
  if (ids.size() > length) throw Error("sequence longer than padding target");
  std::vector<TokenId> out;
  out.reserve(length);
  std::size_t pad = length - ids.size();
  if (strategy == PaddingStrategy::Left) out.insert(out.end(), pad, TokenRegistry::kPad);
  out.insert(out.end(), ids.begin(), ids.end());
  if (strategy == PaddingStrategy::Right) out.insert(out.end(), pad, TokenRegistry::kPad);
  return out;
}

// ---------------------------------------------------------------------------
// Row parsing (the reverse direction)

enum class RowParseError : std::uint8_t {
  None,
  UnknownColumn,
  DuplicateColumn,
  MissingColumn,
  BadContinuousValue,
  WrongLength,
  BadFragment,
  ConditionMismatch,
};

inline const char* to_string(RowParseError e) {
  switch (e) {
    case RowParseError::None: return "none";
    case RowParseError::UnknownColumn: return "unknown-column";
    case RowParseError::DuplicateColumn: return "duplicate-column";
    case RowParseError::MissingColumn: return "missing-column";
    case RowParseError::BadContinuousValue: return "bad-continuous-value";
    case RowParseError::WrongLength: return "wrong-length";
    case RowParseError::BadFragment: return "bad-fragment";
    case RowParseError::ConditionMismatch: return "condition-mismatch";
  }
  return "?";
}

struct RowParseResult {
  std::optional<Row> row;
  RowParseError error = RowParseError::None;
  std::string message;

  bool ok() const { return row.has_value(); }

  static RowParseResult failure(RowParseError e, std::string message) {
    RowParseResult r;
    r.error = e;
    r.message = std::move(message);
    return r;
  }
};

namespace detail {

// Fills `row[col]`; reports duplicate/typing problems.
inline RowParseError assign_cell(Row& row, std::vector<bool>& filled, const TableSchema& schema,
                                 std::size_t col, const std::string& value, std::string& msg) {
  if (filled[col]) {
    msg = "column '" + schema.columns[col].name + "' appears twice";
    return RowParseError::DuplicateColumn;
  }
  if (schema.columns[col].kind == ColumnKind::Continuous) {
    if (!is_numeric_text(value)) {
      msg = "column '" + schema.columns[col].name + "': '" + value + "' is not numeric";
      return RowParseError::BadContinuousValue;
    }
    row[col] = Cell{value, std::strtod(value.c_str(), nullptr)};
  } else {
    row[col] = Cell{value, 0.0};
  }
  filled[col] = true;
  return RowParseError::None;
}

// Matches the longest schema column name that prefixes `fragment` and is
// followed by the expected glue (" is " or " ").
inline std::optional<std::size_t> match_name_prefix(const TableSchema& schema,
                                                    const std::string& fragment,
                                                    const std::string& glue) {
  std::optional<std::size_t> best;
  std::size_t best_len = 0;
  for (std::size_t c = 0; c < schema.n_columns(); ++c) {
    const std::string& name = schema.columns[c].name;
    if (name.size() + glue.size() > fragment.size()) continue;
    if (fragment.compare(0, name.size(), name) != 0) continue;
    if (fragment.compare(name.size(), glue.size(), glue) != 0) continue;
    if (name.size() >= best_len) {
      best = c;
      best_len = name.size();
    }
  }
  return best;
}

}  // namespace detail

// Parses a name-carrying serialization back into a row. Fragments may appear
// in any column order (feature permutation during training).
inline RowParseResult parse_text_row(const std::vector<TokenId>& ids, const TableSchema& schema,
                                     SerializationFormat format, const TokenRegistry& registry) {
  if (format == SerializationFormat::Compact) {
    throw Error("compact sequences are decoded positionally; use parse_middle_row");
  }
  const std::string glue = format == SerializationFormat::NameIsValue ? " is " : " ";

  std::vector<std::string> fragments;
  std::string current;
  bool any = false;
  for (TokenId id : ids) {
    if (registry.is_structural(id)) continue;
    if (id == TokenRegistry::kSep) {
      fragments.push_back(std::move(current));
      current.clear();
      continue;
    }
    current += registry.string_of(id);
    any = true;
  }
  if (any || !current.empty()) fragments.push_back(std::move(current));

  Row row(schema.n_columns());
  std::vector<bool> filled(schema.n_columns(), false);
  for (const std::string& fragment : fragments) {
    auto col = detail::match_name_prefix(schema, fragment, glue);
    if (!col) {
      return RowParseResult::failure(RowParseError::UnknownColumn,
                                     "no schema column starts the fragment '" + fragment + "'");
    }
    std::string value = fragment.substr(schema.columns[*col].name.size() + glue.size());
    std::string msg;
    RowParseError e = detail::assign_cell(row, filled, schema, *col, value, msg);
    if (e != RowParseError::None) return RowParseResult::failure(e, msg);
  }
  for (std::size_t c = 0; c < schema.n_columns(); ++c) {
    if (!filled[c]) {
      return RowParseResult::failure(RowParseError::MissingColumn,
                                     "column '" + schema.columns[c].name + "' missing");
    }
  }
  RowParseResult result;
  result.row = std::move(row);
  return result;
}

// Positional decode of a middle-padded sequence (layout region only, no
// BOS/EOS). Slot i spans [offsets[i], offsets[i]+widths[i]).
inline RowParseResult parse_middle_row(const std::vector<TokenId>& ids,
                                       const TableSchema& schema, const PaddingLayout& layout,
                                       const TokenRegistry& registry) {
  if (ids.size() != layout.total_length) {
    return RowParseResult::failure(
        RowParseError::WrongLength, "sequence has " + std::to_string(ids.size()) +
                                        " tokens, layout expects " +
                                        std::to_string(layout.total_length));
  }
  if (layout.widths.size() != schema.n_columns()) {
    throw Error("layout does not match schema");
  }
  Row row(schema.n_columns());
  std::vector<bool> filled(schema.n_columns(), false);
  for (std::size_t c = 0; c < schema.n_columns(); ++c) {
    std::vector<TokenId> slot(ids.begin() + long(layout.offsets[c]),
                              ids.begin() + long(layout.offsets[c] + layout.widths[c]));
    std::string text = registry.decode(slot);  // PADs stripped
    if (c == 0) {
      const std::string& name = schema.columns[0].name;
      if (text.compare(0, name.size() + 1, name + " ") != 0) {
        return RowParseResult::failure(RowParseError::BadFragment,
                                       "leading slot '" + text +
                                           "' does not start with the first column name");
      }
      text = text.substr(name.size() + 1);
    }
    std::string msg;
    RowParseError e = detail::assign_cell(row, filled, schema, c, text, msg);
    if (e != RowParseError::None) return RowParseResult::failure(e, msg);
  }
  RowParseResult result;
  result.row = std::move(row);
  return result;
}

// Text-level convenience for the name-carrying formats.
inline RowParseResult parse_text_row(const std::string& text, const TableSchema& schema,
                                     SerializationFormat format, const TokenRegistry& registry) {
  if (!registry.encodable(text)) {
    return RowParseResult::failure(RowParseError::BadFragment, "text is not encodable");
  }
  return parse_text_row(registry.encode(text), schema, format, registry);
}

// ---------------------------------------------------------------------------
// Training sequences

// `ids` framed with BOS/EOS; Middle sequences carry the padded layout region
// between them. target_mask[i] says whether ids[i], as a next-token target,
// contributes to the loss (index 0 never does).
struct TrainingSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> target_mask;
};

enum class PadTargetPolicy : std::uint8_t { Auto, Train, Ignore };

struct CodecSettings {
  SerializationFormat format = SerializationFormat::NameValue;
  PaddingStrategy strategy = PaddingStrategy::Right;
  bool permute = false;
  PadTargetPolicy pad_targets = PadTargetPolicy::Auto;

  void validate() const {
    if (strategy == PaddingStrategy::Middle) {
      if (format != SerializationFormat::Compact) {
        throw UsageError("middle padding requires the compact format");
      }
      if (permute) {
        throw UsageError("middle padding requires a fixed feature order (permute off)");
      }
    }
    if (permute && format == SerializationFormat::Compact) {
      throw UsageError("the compact format requires a fixed feature order");
    }
  }

  // PADs are trainable targets under middle padding (they are structural
  // output the model must emit); batch filler under left/right is not.
  bool train_pad_targets() const {
    if (pad_targets == PadTargetPolicy::Train) return true;
    if (pad_targets == PadTargetPolicy::Ignore) return false;
    return strategy == PaddingStrategy::Middle;
  }
};

inline std::vector<TrainingSequence> make_training_sequences(
    const DataTable& table, const TokenRegistry& registry, const CodecSettings& settings,
    const PaddingLayout* layout, std::uint64_t seed) {
  settings.validate();
  if (settings.strategy == PaddingStrategy::Middle && layout == nullptr) {
    throw Error("middle padding requires a layout");
  }
  std::mt19937_64 rng(seed);
  const bool train_pads = settings.train_pad_targets();

  std::vector<TrainingSequence> out;
  out.reserve(table.n_rows());
  for (const Row& row : table.rows) {
    auto order = identity_order(table.n_columns());
    if (settings.permute) std::shuffle(order.begin(), order.end(), rng);

    TrainingSequence seq;
    seq.ids.push_back(TokenRegistry::kBos);
    if (settings.strategy == PaddingStrategy::Middle) {
      auto fragments = encode_fragments(row, table.schema, settings.format, registry, order);
      auto region = pad_middle(fragments, *layout);
      seq.ids.insert(seq.ids.end(), region.begin(), region.end());
    } else {
      std::string text = serialize_row(row, table.schema, settings.format, order);
      auto ids = registry.encode(text);
      seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
    }
    seq.ids.push_back(TokenRegistry::kEos);

    seq.target_mask.assign(seq.ids.size(), 1);
    seq.target_mask[0] = 0;
    if (!train_pads) {
      for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (seq.ids[i] == TokenRegistry::kPad) seq.target_mask[i] = 0;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace tabsynth
