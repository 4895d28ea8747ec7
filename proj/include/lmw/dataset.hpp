#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmw/error.hpp"

namespace lmw {

enum class ColumnKind { numeric, categorical };

/// One typed data column. Numeric columns hold finite reals; categorical
/// columns hold level codes into an ordered list of distinct labels.
class Column {
 public:
  static Column numeric(std::vector<double> values) {
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::parse, "numeric column contains a non-finite value");
      }
    }
    Column c;
    c.kind_ = ColumnKind::numeric;
    c.values_ = std::move(values);
    return c;
  }

  static Column categorical(std::vector<int> codes, std::vector<std::string> levels) {
    for (int code : codes) {
      if (code < 0 || static_cast<std::size_t>(code) >= levels.size()) {
        throw Error(ErrorCode::parse, "categorical code out of range");
      }
    }
    Column c;
    c.kind_ = ColumnKind::categorical;
    c.codes_ = std::move(codes);
    c.levels_ = std::move(levels);
    return c;
  }

  /// Builds a categorical column from raw labels. Levels are sorted
  /// lexicographically unless an explicit order is supplied.
  static Column from_labels(const std::vector<std::string>& labels,
                            const std::vector<std::string>& order = {}) {
    std::vector<std::string> levels = order;
    if (levels.empty()) {
      levels = labels;
      std::sort(levels.begin(), levels.end());
      levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    }
    std::unordered_map<std::string, int> index;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      index.emplace(levels[k], static_cast<int>(k));
    }
    std::vector<int> codes;
    codes.reserve(labels.size());
    for (const auto& label : labels) {
      auto it = index.find(label);
      if (it == index.end()) {
        throw Error(ErrorCode::parse, "value '" + label + "' is not a declared level");
      }
      codes.push_back(it->second);
    }
    return categorical(std::move(codes), std::move(levels));
  }

  ColumnKind kind() const noexcept { return kind_; }
  bool is_numeric() const noexcept { return kind_ == ColumnKind::numeric; }
  std::size_t size() const noexcept { return is_numeric() ? values_.size() : codes_.size(); }

  const std::vector<double>& values() const { return values_; }
  const std::vector<int>& codes() const { return codes_; }
  const std::vector<std::string>& levels() const { return levels_; }

  /// Textual form of row i (shortest round-trip representation for reals).
  std::string label(std::size_t i) const {
    if (!is_numeric()) return levels_[codes_[i]];
    return format_real(values_[i]);
  }

  /// Categorical view of this column; numeric values become their text labels.
  Column as_categorical(const std::vector<std::string>& order = {}) const {
    if (!is_numeric()) {
      if (order.empty() || order == levels_) return *this;
      std::vector<std::string> labels(size());
      for (std::size_t i = 0; i < size(); ++i) labels[i] = label(i);
      return from_labels(labels, order);
    }
    std::vector<std::string> labels(size());
    for (std::size_t i = 0; i < size(); ++i) labels[i] = label(i);
    return from_labels(labels, order);
  }

  static std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

  friend bool operator==(const Column&, const Column&) = default;

 private:
  ColumnKind kind_ = ColumnKind::numeric;
  std::vector<double> values_;
  std::vector<int> codes_;
  std::vector<std::string> levels_;
};

struct ColumnHint {
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> levels;  // optional explicit level order
};

using TypeHints = std::map<std::string, ColumnHint>;

/// Column-role bindings. An empty treatment name means "unbound".
struct Roles {
  std::string treatment;
  std::optional<std::string> outcome;
  std::optional<std::string> base_weights;
  std::optional<std::string> sampling_weights;
  std::optional<std::string> cluster;
  std::optional<std::string> instrument;
};

/// Immutable table of typed columns with role bindings.
class Dataset {
 public:
  Dataset(std::vector<std::pair<std::string, Column>> columns, Roles roles = {})
      : columns_(std::move(columns)), roles_(std::move(roles)) {
    if (columns_.empty()) throw Error(ErrorCode::empty_dataset, "empty dataset");
    n_rows_ = columns_.front().second.size();
    if (n_rows_ == 0) throw Error(ErrorCode::empty_dataset, "empty dataset");
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      const auto& [name, col] = columns_[k];
      if (col.size() != n_rows_) {
        throw Error(ErrorCode::parse, "column '" + name + "' has the wrong number of rows");
      }
      if (!index_.emplace(name, k).second) {
        throw Error(ErrorCode::parse, "duplicate column name '" + name + "'");
      }
    }
    validate_roles();
  }

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return columns_.size(); }
  bool has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  const Column& column(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw Error(ErrorCode::unknown_column, "column '" + std::string(name) + "' not found");
    }
    return columns_[it->second].second;
  }

  const std::vector<std::pair<std::string, Column>>& columns() const noexcept { return columns_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : columns_) out.push_back(c.first);
    return out;
  }

  const Roles& roles() const noexcept { return roles_; }

  const Column& treatment() const {
    if (roles_.treatment.empty()) throw Error(ErrorCode::invalid_role, "treatment is not bound");
    return column(roles_.treatment);
  }

  /// Copy with one column added or replaced.
  Dataset with_column(const std::string& name, Column col) const {
    auto cols = columns_;
    auto it = std::find_if(cols.begin(), cols.end(), [&](const auto& c) { return c.first == name; });
    if (it != cols.end()) {
      it->second = std::move(col);
    } else {
      cols.emplace_back(name, std::move(col));
    }
    return Dataset(std::move(cols), roles_);
  }

  Dataset with_roles(Roles roles) const { return Dataset(columns_, std::move(roles)); }

  /// Rows selected by index, in the given order.
  Dataset subset(const std::vector<std::size_t>& rows) const {
    std::vector<std::pair<std::string, Column>> cols;
    for (const auto& [name, col] : columns_) {
      if (col.is_numeric()) {
        std::vector<double> v;
        for (auto r : rows) v.push_back(col.values()[r]);
        cols.emplace_back(name, Column::numeric(std::move(v)));
      } else {
        std::vector<int> c;
        for (auto r : rows) c.push_back(col.codes()[r]);
        cols.emplace_back(name, Column::categorical(std::move(c), col.levels()));
      }
    }
    return Dataset(std::move(cols), roles_);
  }

 private:
  void validate_roles() {
    auto require = [&](const std::optional<std::string>& name, const char* role) {
      if (name && !has(*name)) {
        throw Error(ErrorCode::unknown_column,
                    std::string(role) + " column '" + *name + "' not found");
      }
    };
    if (!roles_.treatment.empty()) {
      if (!has(roles_.treatment)) {
        throw Error(ErrorCode::unknown_column,
                    "treatment column '" + roles_.treatment + "' not found");
      }
      auto& slot = columns_[index_.at(roles_.treatment)].second;
      if (slot.is_numeric()) slot = slot.as_categorical();
      if (slot.levels().size() < 2) {
        throw Error(ErrorCode::single_level, "treatment '" + roles_.treatment + "' has one level");
      }
      std::vector<std::size_t> counts(slot.levels().size(), 0);
      for (int c : slot.codes()) ++counts[c];
      for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) {
          throw Error(ErrorCode::single_level,
                      "treatment level '" + slot.levels()[k] + "' has no units");
        }
      }
    }
    require(roles_.outcome, "outcome");
    require(roles_.base_weights, "base-weights");
    require(roles_.sampling_weights, "sampling-weights");
    require(roles_.cluster, "cluster");
    require(roles_.instrument, "instrument");
    for (const auto* role : {&roles_.base_weights, &roles_.sampling_weights}) {
      if (!*role) continue;
      const auto& col = column(**role);
      if (!col.is_numeric()) {
        throw Error(ErrorCode::invalid_role, "weights column '" + **role + "' must be numeric");
      }
    }
    if (roles_.base_weights) {
      for (double v : column(*roles_.base_weights).values()) {
        if (v < 0) throw Error(ErrorCode::invalid_role, "base weights must be nonnegative");
      }
    }
    if (roles_.cluster) {
      auto& slot = columns_[index_.at(*roles_.cluster)].second;
      if (slot.is_numeric()) slot = slot.as_categorical();
    }
  }

  std::size_t n_rows_ = 0;
  std::vector<std::pair<std::string, Column>> columns_;
  std::unordered_map<std::string, std::size_t> index_;
  Roles roles_;
};

/// Level → unit count for the bound treatment, in level order.
inline std::vector<std::pair<std::string, std::size_t>> subgroup_counts(const Dataset& ds) {
  const auto& t = ds.treatment();
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& level : t.levels()) out.emplace_back(level, 0);
  for (int c : t.codes()) ++out[c].second;
  return out;
}

namespace csv {

/// RFC-4180 record splitter. Returns rows of raw fields.
inline std::vector<std::vector<std::string>> parse_records(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      if (!field.empty()) {
        throw Error(ErrorCode::parse, "stray quote on line " + std::to_string(line));
      }
      in_quotes = true;
      field_started = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (ch == '\r' || ch == '\n') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (field_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      field_started = false;
      ++line;
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::parse, "unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::optional<double> parse_real(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA"; }

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace csv

/// Parses CSV text into a typed dataset. Kinds are inferred (every cell
/// parses as a finite real → numeric) and then overridden by hints; the
/// treatment column is always categorical.
inline Dataset parse_csv(std::string_view text, const TypeHints& hints = {}, Roles roles = {}) {
  auto records = csv::parse_records(text);
  if (records.empty()) throw Error(ErrorCode::parse, "missing header row");
  const auto header = records.front();
  const std::size_t n = records.size() - 1;
  if (n == 0) throw Error(ErrorCode::empty_dataset, "empty dataset");
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != header.size()) {
      throw Error(ErrorCode::parse, "row " + std::to_string(r) + " has " +
                                        std::to_string(records[r].size()) + " fields, expected " +
                                        std::to_string(header.size()));
    }
  }
  std::vector<std::pair<std::string, Column>> columns;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    std::vector<std::string> cells(n);
    for (std::size_t r = 0; r < n; ++r) {
      cells[r] = records[r + 1][c];
      if (csv::is_missing(cells[r])) {
        throw Error(ErrorCode::missing_value, "missing value in column '" + name + "', row " +
                                                  std::to_string(r + 1));
      }
    }
    std::vector<double> values(n);
    bool all_numeric = true;
    for (std::size_t r = 0; r < n && all_numeric; ++r) {
      auto v = csv::parse_real(cells[r]);
      if (v) {
        values[r] = *v;
      } else {
        all_numeric = false;
      }
    }
    auto hint = hints.find(name);
    ColumnKind kind = all_numeric ? ColumnKind::numeric : ColumnKind::categorical;
    std::vector<std::string> order;
    if (hint != hints.end()) {
      kind = hint->second.kind;
      order = hint->second.levels;
    }
    if (name == roles.treatment) kind = ColumnKind::categorical;
    if (kind == ColumnKind::numeric) {
      if (!all_numeric) {
        for (std::size_t r = 0; r < n; ++r) {
          if (!csv::parse_real(cells[r])) {
            throw Error(ErrorCode::parse, "unparsable number '" + cells[r] + "' in column '" +
                                              name + "', row " + std::to_string(r + 1));
          }
        }
      }
      columns.emplace_back(name, Column::numeric(std::move(values)));
    } else if (all_numeric) {
      // Canonical labels for numerically coded categories ("1.0" and "1" agree).
      std::vector<std::string> labels(n);
      for (std::size_t r = 0; r < n; ++r) labels[r] = Column::format_real(values[r]);
      columns.emplace_back(name, Column::from_labels(labels, order));
    } else {
      columns.emplace_back(name, Column::from_labels(cells, order));
    }
  }
  return Dataset(std::move(columns), std::move(roles));
}

inline Dataset load_csv(const std::string& path, const TypeHints& hints = {}, Roles roles = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), hints, std::move(roles));
}

inline std::string to_csv(const Dataset& ds) {
  std::string out;
  const auto& cols = ds.columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out += ',';
    out += csv::quote(cols[c].first);
  }
  out += '\n';
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out += ',';
      out += csv::quote(cols[c].second.label(r));
    }
    out += '\n';
  }
  return out;
}

}  // namespace lmw
