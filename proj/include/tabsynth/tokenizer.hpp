#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tabsynth/table.hpp"

namespace tabsynth {

// Vocabulary with fixed structural specials, single-character fallbacks for
// ASCII text, and (when compression is on) one token per column name and per
// distinct categorical value. Append-only: extending a registry never
// re-assigns an existing id, so a model's embedding rows stay valid across
// fine-tuning chains. Treat as immutable once built.
class TokenRegistry {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;    // ", "
  static constexpr TokenId kSpace = 4;  // " "

  TokenRegistry() = default;

  std::size_t size() const { return strings_.size(); }
  bool compression_enabled() const { return compression_; }
  void set_compression(bool on) { compression_ = on; }

  const std::string& string_of(TokenId id) const {
    if (id >= strings_.size()) {
      throw Error("token id " + std::to_string(id) + " out of range (vocab " +
                  std::to_string(strings_.size()) + ")");
    }
    return strings_[id];
  }

  TokenId id_of(std::string_view s) const {
    auto it = ids_.find(std::string(s));
    if (it == ids_.end()) throw Error("string not in registry: '" + std::string(s) + "'");
    return it->second;
  }

  bool contains(std::string_view s) const { return ids_.count(std::string(s)) != 0; }

  bool is_structural(TokenId id) const { return id == kPad || id == kBos || id == kEos; }
  const std::set<TokenId>& registered_names() const { return names_; }
  const std::set<TokenId>& registered_categories() const { return categories_; }

  // Returns the id; a string already present keeps its original id.
  TokenId add(std::string s) {
    auto it = ids_.find(s);
    if (it != ids_.end()) return it->second;
    TokenId id = static_cast<TokenId>(strings_.size());
    strings_.push_back(std::move(s));
    ids_.emplace(strings_.back(), id);
    if (id != kPad && id != kBos && id != kEos) {
      auto& bucket = by_first_byte_[static_cast<unsigned char>(strings_.back()[0])];
      bucket.push_back(id);
      std::stable_sort(bucket.begin(), bucket.end(), [this](TokenId a, TokenId b) {
        return strings_[a].size() > strings_[b].size();
      });
    }
    return id;
  }

  TokenId register_name(std::string s) {
    TokenId id = add(std::move(s));
    names_.insert(id);
    return id;
  }

  TokenId register_category(std::string s) {
    TokenId id = add(std::move(s));
    categories_.insert(id);
    return id;
  }

  // True when every (id, string) pair of `base` is present unchanged here.
  bool extends(const TokenRegistry& base) const {
    if (base.size() > size()) return false;
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (strings_[i] != base.strings_[i]) return false;
    }
    return true;
  }

  // Greedy longest match, left to right. PAD/BOS/EOS never match text.
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
      TokenId best = match_at(text, pos);
      if (best == kNoMatch) {
        throw Error("unencodable character at byte " + std::to_string(pos) + " of \"" +
                    std::string(text) + "\"");
      }
      ids.push_back(best);
      pos += strings_[best].size();
    }
    return ids;
  }

  // Concatenates token strings; PAD/BOS/EOS contribute nothing.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id >= strings_.size()) {
        throw Error("decode: token id " + std::to_string(id) + " out of range");
      }
      if (is_structural(id)) continue;
      out += strings_[id];
    }
    return out;
  }

  bool encodable(std::string_view text) const {
    std::size_t pos = 0;
    while (pos < text.size()) {
      TokenId best = match_at(text, pos);
      if (best == kNoMatch) return false;
      pos += strings_[best].size();
    }
    return true;
  }

  // Plain-text dump, one "id<TAB>escaped-string" per line.
  std::string dump() const {
    std::string out;
    for (std::size_t i = 0; i < strings_.size(); ++i) {
      out += std::to_string(i);
      out.push_back('\t');
      for (char c : strings_[i]) {
        switch (c) {
          case '\t': out += "\\t"; break;
          case '\n': out += "\\n"; break;
          case '\r': out += "\\r"; break;
          case '\\': out += "\\\\"; break;
          default: out.push_back(c);
        }
      }
      out.push_back('\n');
    }
    return out;
  }

 private:
  static constexpr TokenId kNoMatch = ~TokenId{0};

  TokenId match_at(std::string_view text, std::size_t pos) const {
    auto bucket_it = by_first_byte_.find(static_cast<unsigned char>(text[pos]));
    if (bucket_it == by_first_byte_.end()) return kNoMatch;
    for (TokenId id : bucket_it->second) {
      const std::string& s = strings_[id];
      if (text.compare(pos, s.size(), s) == 0) return id;  // longest first
    }
    return kNoMatch;
  }

  std::vector<std::string> strings_;
  std::unordered_map<std::string, TokenId> ids_;
  // candidates per leading byte, longest string first (greedy longest match)
  std::unordered_map<unsigned char, std::vector<TokenId>> by_first_byte_;
  std::set<TokenId> names_;
  std::set<TokenId> categories_;
  bool compression_ = true;
};

namespace detail {

inline void seed_base_vocabulary(TokenRegistry& r) {
  r.add("⟦pad⟧");  // structural; excluded from text matching
  r.add("⟦bos⟧");
  r.add("⟦eos⟧");
  r.add(", ");
  r.add(" ");
  r.add(std::string(kMissingMarker));
  std::vector<char> chars;
  for (char c = '0'; c <= '9'; ++c) chars.push_back(c);
  chars.push_back('.');
  chars.push_back('-');
  for (char c = 'A'; c <= 'Z'; ++c) chars.push_back(c);
  for (char c = 'a'; c <= 'z'; ++c) chars.push_back(c);
  std::sort(chars.begin(), chars.end());
  for (char c : chars) r.add(std::string(1, c));
}

inline bool is_ascii_punct(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return u >= 0x21 && u <= 0x7e &&
         !((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'));
}

}  // namespace detail

// Builds (or extends) the vocabulary for one or more tables. Ordering is
// deterministic: specials, base characters sorted by byte value, then per
// table: extra punctuation sorted, column names in schema order, categorical
// values sorted per column. When `base` is given its ids are copied first and
// only genuinely new strings are appended.
inline TokenRegistry build_registry(const std::vector<const DataTable*>& tables,
                                    bool compression, const TokenRegistry* base = nullptr) {
  TokenRegistry r;
  if (base) {
    r = *base;
  } else {
    detail::seed_base_vocabulary(r);
  }
  r.set_compression(compression);

  for (const DataTable* table : tables) {
    // punctuation tokens needed by this table's names and cell texts
    std::set<char> punct;
    auto scan = [&](std::string_view s) {
      for (char c : s) {
        if (detail::is_ascii_punct(c) && !r.contains(std::string(1, c))) punct.insert(c);
      }
    };
    for (const ColumnSpec& col : table->schema.columns) scan(col.name);
    for (const Row& row : table->rows) {
      for (const Cell& cell : row) scan(cell.text);
    }
    for (char c : punct) r.add(std::string(1, c));

    if (compression) {
      for (const ColumnSpec& col : table->schema.columns) r.register_name(col.name);
      for (std::size_t c = 0; c < table->n_columns(); ++c) {
        if (table->schema.columns[c].kind != ColumnKind::Categorical) continue;
        std::set<std::string> values;
        for (const Row& row : table->rows) values.insert(row[c].text);
        for (const std::string& v : values) r.register_category(v);
      }
    }

    // Without whole-string registration every name and categorical value must
    // fall back to per-character tokens; reject anything that cannot encode.
    for (const ColumnSpec& col : table->schema.columns) {
      if (!r.encodable(col.name)) {
        throw Error("column name '" + col.name + "' is not encodable with this registry");
      }
    }
    for (std::size_t rr = 0; rr < table->n_rows(); ++rr) {
      for (std::size_t c = 0; c < table->n_columns(); ++c) {
        const std::string& text = table->rows[rr][c].text;
        if (!r.encodable(text)) {
          throw Error("cell at row " + std::to_string(rr) + ", column '" +
                      table->schema.columns[c].name + "' is not encodable: '" + text + "'");
        }
      }
    }
  }
  return r;
}

inline TokenRegistry build_registry(const DataTable& table, bool compression,
                                    const TokenRegistry* base = nullptr) {
  return build_registry(std::vector<const DataTable*>{&table}, compression, base);
}

// Bare registry (specials + base characters only); handy for tests.
inline TokenRegistry make_base_registry(bool compression = true) {
  return build_registry(std::vector<const DataTable*>{}, compression);
}

}  // namespace tabsynth
