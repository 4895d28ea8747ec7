#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lmw/dataset.hpp"
#include "lmw/error.hpp"

namespace lmw {

enum class Transform { none, log, sqrt, square };

struct Factor {
  Transform transform = Transform::none;
  std::string variable;

  std::string name() const {
    switch (transform) {
      case Transform::none: return variable;
      case Transform::log: return "log(" + variable + ")";
      case Transform::sqrt: return "sqrt(" + variable + ")";
      case Transform::square: return "square(" + variable + ")";
    }
    return variable;
  }

  friend bool operator==(const Factor&, const Factor&) = default;
  friend auto operator<=>(const Factor& a, const Factor& b) { return a.name() <=> b.name(); }
};

/// Product of distinct factors. Equality ignores factor order (a:b == b:a).
struct Term {
  std::vector<Factor> factors;

  std::string name() const {
    std::string out;
    for (std::size_t k = 0; k < factors.size(); ++k) {
      if (k) out += ':';
      out += factors[k].name();
    }
    return out;
  }

  std::size_t degree() const { return factors.size(); }

  bool contains(const std::string& variable) const {
    return std::any_of(factors.begin(), factors.end(),
                       [&](const Factor& f) { return f.variable == variable; });
  }

  friend bool operator==(const Term& a, const Term& b) {
    std::set<Factor> sa(a.factors.begin(), a.factors.end());
    std::set<Factor> sb(b.factors.begin(), b.factors.end());
    return sa == sb;
  }
};

/// Right-hand-side-only model formula with canonicalized, de-duplicated terms.
class Formula {
 public:
  Formula() = default;
  explicit Formula(std::vector<Term> terms) : terms_(std::move(terms)) {}

  const std::vector<Term>& terms() const noexcept { return terms_; }
  bool empty() const noexcept { return terms_.empty(); }

  std::vector<std::string> variables() const {
    std::vector<std::string> out;
    for (const auto& t : terms_) {
      for (const auto& f : t.factors) {
        if (std::find(out.begin(), out.end(), f.variable) == out.end()) out.push_back(f.variable);
      }
    }
    return out;
  }

  bool mentions(const std::string& variable) const {
    return std::any_of(terms_.begin(), terms_.end(),
                       [&](const Term& t) { return t.contains(variable); });
  }

  /// Copy without any term that involves `variable`.
  Formula without(const std::string& variable) const {
    std::vector<Term> kept;
    for (const auto& t : terms_) {
      if (!t.contains(variable)) kept.push_back(t);
    }
    return Formula(std::move(kept));
  }

  /// Canonical printed form, e.g. "~ a + b + a:b"; "~ 1" when there are no terms.
  std::string to_string() const {
    if (terms_.empty()) return "~ 1";
    std::string out = "~ ";
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      if (k) out += " + ";
      out += terms_[k].name();
    }
    return out;
  }

  friend bool operator==(const Formula&, const Formula&) = default;

 private:
  std::vector<Term> terms_;
};

namespace detail {

inline void append_unique(std::vector<Term>& dst, const Term& t) {
  if (std::find(dst.begin(), dst.end(), t) == dst.end()) dst.push_back(t);
}

inline Term merge_terms(const Term& a, const Term& b) {
  Term out = a;
  for (const auto& f : b.factors) {
    if (std::find(out.factors.begin(), out.factors.end(), f) == out.factors.end()) {
      out.factors.push_back(f);
    }
  }
  return out;
}

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : text_(text) {}

  Formula parse() {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != '~') {
      if (text_.find('~') != std::string_view::npos) {
        throw Error(ErrorCode::formula, "outcome must not appear in formula");
      }
      fail("expected '~'");
    }
    ++pos_;
    auto terms = parse_sum();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character");
    std::stable_sort(terms.begin(), terms.end(),
                     [](const Term& a, const Term& b) { return a.degree() < b.degree(); });
    return Formula(std::move(terms));
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::parse,
                "formula syntax error at position " + std::to_string(pos_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char ch) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == ch) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::vector<Term> parse_sum() {
    auto out = parse_product();
    while (accept('+')) {
      for (const auto& t : parse_product()) append_unique(out, t);
    }
    return out;
  }

  // a*b expands to a + b + a:b.
  std::vector<Term> parse_product() {
    auto out = parse_interaction();
    while (accept('*')) {
      auto rhs = parse_interaction();
      auto cross = interact(out, rhs);
      for (const auto& t : rhs) append_unique(out, t);
      for (const auto& t : cross) append_unique(out, t);
    }
    return out;
  }

  std::vector<Term> parse_interaction() {
    auto out = parse_primary();
    while (accept(':')) out = interact(out, parse_primary());
    return out;
  }

  static std::vector<Term> interact(const std::vector<Term>& a, const std::vector<Term>& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    std::vector<Term> out;
    for (const auto& ta : a) {
      for (const auto& tb : b) append_unique(out, merge_terms(ta, tb));
    }
    return out;
  }

  std::vector<Term> parse_primary() {
    skip_ws();
    if (accept('(')) {
      auto inner = parse_sum();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (pos_ < text_.size() && text_[pos_] == '1' &&
        (pos_ + 1 == text_.size() || !is_ident_char(text_[pos_ + 1]))) {
      ++pos_;
      return {};
    }
    const std::size_t start = pos_;
    std::string name = identifier();
    if (accept('(')) {
      Transform tr;
      if (name == "log") {
        tr = Transform::log;
      } else if (name == "sqrt") {
        tr = Transform::sqrt;
      } else if (name == "square") {
        tr = Transform::square;
      } else {
        pos_ = start;
        throw Error(ErrorCode::formula, "unknown transform '" + name + "' at position " +
                                            std::to_string(start));
      }
      skip_ws();
      std::string var = identifier();
      if (!accept(')')) fail("expected ')'");
      return {Term{{Factor{tr, var}}}};
    }
    return {Term{{Factor{Transform::none, name}}}};
  }

  static bool is_ident_char(char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.';
  }

  std::string identifier() {
    skip_ws();
    const std::size_t start = pos_;
    if (pos_ >= text_.size() || !(std::isalpha(static_cast<unsigned char>(text_[pos_])) ||
                                  text_[pos_] == '_' || text_[pos_] == '.')) {
      fail("expected a variable name");
    }
    while (pos_ < text_.size() && is_ident_char(text_[pos_])) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

/// One expanded design column before aliasing.
struct RawColumn {
  std::string name;
  Eigen::VectorXd values;
  std::size_t term = 0;
};

inline Eigen::VectorXd apply_transform(const Factor& f, const Column& col) {
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(col.values().data(),
                                                        static_cast<Eigen::Index>(col.size()));
  switch (f.transform) {
    case Transform::none: break;
    case Transform::log:
      if ((v.array() <= 0).any()) {
        throw Error(ErrorCode::formula, "log() of a nonpositive value in '" + f.variable + "'");
      }
      v = v.array().log();
      break;
    case Transform::sqrt:
      if ((v.array() < 0).any()) {
        throw Error(ErrorCode::formula, "sqrt() of a negative value in '" + f.variable + "'");
      }
      v = v.array().sqrt();
      break;
    case Transform::square: v = v.array().square(); break;
  }
  return v;
}

/// Expands one factor to named columns. Categorical variables give level
/// indicators, either dropping the first (reference) level or keeping all.
inline std::vector<RawColumn> expand_factor(const Factor& f, const Dataset& ds, bool all_levels) {
  const Column& col = ds.column(f.variable);
  std::vector<RawColumn> out;
  if (col.is_numeric()) {
    out.push_back({f.name(), apply_transform(f, col), 0});
    return out;
  }
  if (f.transform != Transform::none) {
    throw Error(ErrorCode::formula, "transform of categorical variable '" + f.variable + "'");
  }
  const auto n = static_cast<Eigen::Index>(col.size());
  for (std::size_t level = all_levels ? 0 : 1; level < col.levels().size(); ++level) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = col.codes()[i] == static_cast<int>(level) ? 1 : 0;
    out.push_back({f.variable + col.levels()[level], std::move(v), 0});
  }
  return out;
}

inline std::vector<RawColumn> expand_term(const Term& t, const Dataset& ds, bool all_levels) {
  std::vector<RawColumn> acc;
  for (const auto& f : t.factors) {
    auto cols = expand_factor(f, ds, all_levels);
    if (acc.empty()) {
      acc = std::move(cols);
      continue;
    }
    std::vector<RawColumn> next;
    for (const auto& a : acc) {
      for (const auto& b : cols) {
        next.push_back({a.name + ":" + b.name, a.values.cwiseProduct(b.values), 0});
      }
    }
    acc = std::move(next);
  }
  return acc;
}

}  // namespace detail

inline Formula parse_formula(std::string_view text) { return detail::FormulaParser(text).parse(); }

/// Numeric model matrix with term bookkeeping and a record of dropped columns.
struct DesignMatrix {
  Eigen::MatrixXd matrix;
  std::vector<std::string> names;
  bool has_intercept = false;
  std::vector<std::vector<Eigen::Index>> term_columns;  // kept column indices per formula term
  std::vector<std::string> dropped;                     // aliased column names
  std::vector<std::string> warnings;
  std::map<std::string, std::string> reference_levels;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
};

inline constexpr double kAliasTolerance = 1e-9;

/// Builds the model matrix. Categorical variables use levels−1 indicators
/// (first lexicographic level is the reference). Columns that are, to a
/// relative tolerance of 1e-9, linear combinations of earlier columns are
/// dropped and recorded; zero-variance columns also get a warning record.
inline DesignMatrix build_design(const Formula& f, const Dataset& ds, bool include_intercept) {
  for (const auto& v : f.variables()) ds.column(v);
  std::vector<detail::RawColumn> raw;
  const auto n = static_cast<Eigen::Index>(ds.n_rows());
  if (include_intercept) raw.push_back({"(Intercept)", Eigen::VectorXd::Ones(n), 0});
  DesignMatrix dm;
  for (std::size_t t = 0; t < f.terms().size(); ++t) {
    for (auto& c : detail::expand_term(f.terms()[t], ds, false)) {
      c.term = t + 1;
      raw.push_back(std::move(c));
    }
    for (const auto& factor : f.terms()[t].factors) {
      const auto& col = ds.column(factor.variable);
      if (!col.is_numeric()) dm.reference_levels[factor.variable] = col.levels().front();
    }
  }

  // Sequential Gram-Schmidt (two passes) in column order: later columns are
  // the ones dropped when a dependency exists.
  std::vector<Eigen::VectorXd> basis;
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const Eigen::VectorXd& x = raw[j].values;
    const double norm = x.norm();
    const bool is_intercept = include_intercept && j == 0;
    if (!is_intercept && n > 1 && (x.array() == x[0]).all()) {
      dm.warnings.push_back("zero-variance column '" + raw[j].name + "' dropped");
      dm.dropped.push_back(raw[j].name);
      continue;
    }
    Eigen::VectorXd r = x;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) r -= q.dot(r) * q;
    }
    const double rn = r.norm();
    if (norm == 0 || rn <= kAliasTolerance * norm) {
      dm.dropped.push_back(raw[j].name);
      continue;
    }
    basis.push_back(r / rn);
    kept.push_back(j);
  }

  dm.has_intercept = include_intercept;
  dm.matrix.resize(n, static_cast<Eigen::Index>(kept.size()));
  dm.term_columns.assign(f.terms().size(), {});
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto& c = raw[kept[k]];
    dm.matrix.col(static_cast<Eigen::Index>(k)) = c.values;
    dm.names.push_back(c.name);
    if (c.term > 0) dm.term_columns[c.term - 1].push_back(static_cast<Eigen::Index>(k));
  }
  return dm;
}

/// Columns on which balance is reported: every categorical level is kept
/// and no aliasing is applied.
struct BalanceColumns {
  Eigen::MatrixXd matrix;
  std::vector<std::string> names;
  std::vector<std::string> variables;  // source variable(s) per column, for display grouping
};

inline BalanceColumns expand_balance_columns(const Formula& f, const Dataset& ds,
                                             const Formula* addl = nullptr) {
  std::vector<detail::RawColumn> raw;
  std::vector<std::string> sources;
  auto add = [&](const Formula& g) {
    for (const auto& v : g.variables()) ds.column(v);
    for (const auto& t : g.terms()) {
      for (auto& c : detail::expand_term(t, ds, true)) {
        bool dup = std::any_of(raw.begin(), raw.end(),
                               [&](const detail::RawColumn& r) { return r.name == c.name; });
        if (dup) continue;
        raw.push_back(std::move(c));
        sources.push_back(t.name());
      }
    }
  };
  add(f);
  if (addl) add(*addl);
  BalanceColumns out;
  out.matrix.resize(static_cast<Eigen::Index>(ds.n_rows()), static_cast<Eigen::Index>(raw.size()));
  for (std::size_t k = 0; k < raw.size(); ++k) {
    out.matrix.col(static_cast<Eigen::Index>(k)) = raw[k].values;
    out.names.push_back(raw[k].name);
  }
  out.variables = std::move(sources);
  return out;
}

}  // namespace lmw
