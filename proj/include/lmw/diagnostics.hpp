#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "lmw/error.hpp"
#include "lmw/estimation.hpp"
#include "lmw/formula.hpp"
#include "lmw/weights.hpp"

namespace lmw {

/// A statistic that may rest on a zero standardizer.
struct Stat {
  double value = 0;
  bool degenerate = false;
};

namespace detail {

inline double weighted_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  const double total = w.sum();
  if (total == 0) return 0;
  return w.dot(x) / total;
}

/// True when the column takes exactly two distinct values.
inline bool is_two_valued(const Eigen::VectorXd& x) {
  if (x.size() == 0) return false;
  const double a = x[0];
  std::optional<double> b;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x[i] == a) continue;
    if (!b) {
      b = x[i];
    } else if (x[i] != *b) {
      return false;
    }
  }
  return b.has_value();
}

}  // namespace detail

/// Weighted standard deviation over units with nonzero weight. Two-valued
/// columns use sqrt(p(1 − p)) on the value range; others the Kish-corrected
/// form Σw̃(x − μ)²/(1 − Σw̃²). Signed weights can make either variance
/// negative, so the magnitude is taken.
inline double weighted_sd(const Eigen::VectorXd& x, const Eigen::VectorXd& w, bool two_valued) {
  const double total = w.sum();
  if (total == 0) return 0;
  const Eigen::VectorXd wn = w / total;
  const double mu = wn.dot(x);
  if (two_valued) {
    const double hi = x.maxCoeff();
    const double lo = x.minCoeff();
    if (hi == lo) return 0;
    const double p = (mu - lo) / (hi - lo);
    return (hi - lo) * std::sqrt(std::abs(p * (1.0 - p)));
  }
  const double sum_sq = wn.squaredNorm();
  if (1.0 - sum_sq <= 1e-14) return 0;
  const double v = wn.dot((x.array() - mu).square().matrix()) / (1.0 - sum_sq);
  return std::sqrt(std::abs(v));
}

/// Standardized mean difference between two weighted groups; weights are
/// full-length vectors that are zero outside their group.
inline Stat smd(const Eigen::VectorXd& x, const Eigen::VectorXd& wa, const Eigen::VectorXd& wb,
                double denom) {
  if (!(denom > 0)) return {0.0, true};
  return {(detail::weighted_mean(x, wa) - detail::weighted_mean(x, wb)) / denom, false};
}

inline Stat target_smd(const Eigen::VectorXd& x, const Eigen::VectorXd& wg, double target_mean,
                       double denom) {
  if (!(denom > 0)) return {0.0, true};
  return {(detail::weighted_mean(x, wg) - target_mean) / denom, false};
}

/// Largest gap between the weighted pseudo-ECDFs of two weighted samples,
/// evaluated at every observed value. Each side is normalized to sum to one.
inline double ks_stat(const Eigen::VectorXd& x, const Eigen::VectorXd& wa, const Eigen::VectorXd& wb) {
  const double sa = wa.sum();
  const double sb = wb.sum();
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (wa[i] != 0 || wb[i] != 0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return x[i] < x[j]; });
  double fa = 0;
  double fb = 0;
  double best = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto i = order[k];
    if (sa != 0) fa += wa[i] / sa;
    if (sb != 0) fb += wb[i] / sb;
    if (k + 1 < order.size() && x[order[k + 1]] == x[i]) continue;
    best = std::max(best, std::abs(fa - fb));
  }
  return best;
}

/// Kish effective sample size (Σw)²/Σw².
inline double ess(const Eigen::VectorXd& w) {
  const double sq = w.squaredNorm();
  if (sq == 0) return 0;
  const double s = w.sum();
  return s * s / sq;
}

struct BalanceRow {
  std::string name;
  std::optional<double> smd;  // pairwise displays only
  std::vector<double> tsmd;   // one per displayed group
  std::optional<double> ks;
  std::vector<double> tks;
  bool degenerate = false;
};

struct BalanceStratum {
  std::string name;  // "Unweighted", "Base weighted", "Weighted"
  std::vector<BalanceRow> rows;
};

struct EssRow {
  std::string name;  // "All", "Base weighted", "Weighted"
  std::vector<double> values;
};

struct BalanceTable {
  std::vector<std::string> groups;  // displayed groups in column order
  bool pairwise = false;
  std::vector<std::string> row_names;
  std::vector<BalanceStratum> strata;
  std::vector<std::string> ess_groups;
  std::vector<EssRow> ess;
};

struct DistributionRow {
  std::string name;
  double target_mean = 0;
  double target_sd = 0;
  std::vector<double> mean;
  std::vector<double> sd;
};

struct DistributionStratum {
  std::string name;
  std::string reference;  // "Overall" or "Target"
  std::vector<DistributionRow> rows;
};

struct DistributionSummary {
  std::vector<std::string> groups;
  std::vector<DistributionStratum> strata;
  std::vector<EssRow> ess;
};

namespace detail {

/// Balance columns and the per-unit weights behind every stratum.
struct BalanceInputs {
  BalanceColumns columns;
  std::vector<bool> two_valued;
  std::vector<int> group;
  std::vector<std::string> group_labels;
  Eigen::VectorXd target_weights;
  std::vector<std::pair<std::string, Eigen::VectorXd>> strata;  // unit weights, unsigned
};

inline BalanceInputs balance_inputs(const LmwFit& fit, const Formula* addl) {
  BalanceInputs in;
  in.columns = expand_balance_columns(fit.covariate_formula, *fit.data, addl);
  in.two_valued.resize(in.columns.names.size());
  for (std::size_t j = 0; j < in.columns.names.size(); ++j) {
    in.two_valued[j] = is_two_valued(in.columns.matrix.col(static_cast<Eigen::Index>(j)));
  }
  in.group = fit.weights.group;
  in.group_labels = fit.weights.group_labels;
  const auto n = static_cast<Eigen::Index>(fit.n());
  in.target_weights = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool member = fit.estimand == Estimand::ate || fit.level_of[i] == *fit.focal;
    if (member) in.target_weights[i] = fit.sampling_weights[i];
  }
  in.strata.emplace_back("Unweighted", fit.sampling_weights);
  if (fit.base_weights_name) in.strata.emplace_back("Base weighted", fit.fit_weights());
  in.strata.emplace_back("Weighted", fit.weights.weights);
  return in;
}

inline Eigen::VectorXd restrict_to(const Eigen::VectorXd& w, const std::vector<int>& group, int g) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (group[i] == g) out[i] = w[i];
  }
  return out;
}

/// Standardizers from the sampling-weighted, otherwise unweighted sample:
/// focal-group SD for ATT, root mean of the group variances for ATE.
inline std::vector<double> standardizers(const LmwFit& fit, const BalanceInputs& in) {
  const Eigen::MatrixXd& x = in.columns.matrix;
  std::vector<double> out(static_cast<std::size_t>(x.cols()), 0.0);
  const auto& sw = fit.sampling_weights;
  const int n_groups = static_cast<int>(in.group_labels.size());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::VectorXd col = x.col(j);
    const bool tv = in.two_valued[static_cast<std::size_t>(j)];
    if (fit.estimand == Estimand::att) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(col.size());
      for (Eigen::Index i = 0; i < col.size(); ++i) {
        if (fit.level_of[i] == *fit.focal) w[i] = sw[i];
      }
      out[j] = weighted_sd(col, w, tv);
    } else {
      double acc = 0;
      for (int g = 0; g < n_groups; ++g) {
        const double s = weighted_sd(col, restrict_to(sw, in.group, g), tv);
        acc += s * s;
      }
      out[j] = std::sqrt(acc / n_groups);
    }
  }
  return out;
}

inline std::vector<EssRow> ess_rows(const BalanceInputs& in, const std::vector<int>& groups) {
  std::vector<EssRow> rows;
  for (const auto& [name, w] : in.strata) {
    EssRow r;
    r.name = name == "Unweighted" ? "All" : name;
    for (int g : groups) r.values.push_back(ess(restrict_to(w, in.group, g)));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace detail

/// Balance tables per stratum. Two-group fits show pairwise SMD/KS with
/// target statistics per group; multi-valued MRI fits show target statistics
/// only, unless `pair` (level labels, active first) narrows the display.
inline BalanceTable balance_summary(const LmwFit& fit, const Formula* addl = nullptr,
                                    std::optional<std::pair<std::string, std::string>> pair = std::nullopt) {
  const auto in = detail::balance_inputs(fit, addl);
  const Eigen::MatrixXd& x = in.columns.matrix;
  const auto denom = detail::standardizers(fit, in);
  const int n_groups = static_cast<int>(in.group_labels.size());

  std::vector<int> shown;
  BalanceTable table;
  if (pair) {
    if (!fit.multi_valued() || fit.method != Method::mri) {
      throw Error(ErrorCode::invalid_argument, "a display pair applies to multi-valued MRI fits");
    }
    const int a = detail::level_index(fit.levels, pair->first, "contrast");
    const int b = detail::level_index(fit.levels, pair->second, "contrast");
    if (a == b) throw Error(ErrorCode::invalid_argument, "contrast levels must differ");
    shown = {b, a};
    table.pairwise = true;
  } else if (n_groups == 2) {
    shown = {0, 1};
    table.pairwise = true;
  } else {
    shown.resize(static_cast<std::size_t>(n_groups));
    std::iota(shown.begin(), shown.end(), 0);
  }
  for (int g : shown) table.groups.push_back(in.group_labels[g]);
  table.row_names = in.columns.names;

  for (const auto& [name, w] : in.strata) {
    BalanceStratum st;
    st.name = name;
    std::vector<Eigen::VectorXd> gw;
    for (int g : shown) gw.push_back(detail::restrict_to(w, in.group, g));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Eigen::VectorXd col = x.col(j);
      const double dn = denom[static_cast<std::size_t>(j)];
      BalanceRow row;
      row.name = in.columns.names[static_cast<std::size_t>(j)];
      row.degenerate = !(dn > 0);
      const double target_mean = detail::weighted_mean(col, in.target_weights);
      if (table.pairwise) {
        row.smd = smd(col, gw[1], gw[0], dn).value;
        row.ks = ks_stat(col, gw[1], gw[0]);
      }
      for (const auto& wg : gw) {
        row.tsmd.push_back(target_smd(col, wg, target_mean, dn).value);
        row.tks.push_back(ks_stat(col, wg, in.target_weights));
      }
      st.rows.push_back(std::move(row));
    }
    table.strata.push_back(std::move(st));
  }
  table.ess_groups = table.groups;
  table.ess = detail::ess_rows(in, shown);
  return table;
}

/// Means and SDs of each balance column: the overall sample and groups
/// before weighting, then the target population and weighted groups.
inline DistributionSummary distribution_summary(const LmwFit& fit, const Formula* addl = nullptr) {
  const auto in = detail::balance_inputs(fit, addl);
  const Eigen::MatrixXd& x = in.columns.matrix;
  const int n_groups = static_cast<int>(in.group_labels.size());
  std::vector<int> all(static_cast<std::size_t>(n_groups));
  std::iota(all.begin(), all.end(), 0);

  DistributionSummary out;
  out.groups = in.group_labels;
  for (const auto& [name, w] : in.strata) {
    DistributionStratum st;
    st.name = name;
    const bool unweighted = name == "Unweighted";
    st.reference = unweighted ? "Overall" : "Target";
    const Eigen::VectorXd ref = unweighted ? fit.sampling_weights : in.target_weights;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Eigen::VectorXd col = x.col(j);
      const bool tv = in.two_valued[static_cast<std::size_t>(j)];
      DistributionRow row;
      row.name = in.columns.names[static_cast<std::size_t>(j)];
      row.target_mean = detail::weighted_mean(col, ref);
      row.target_sd = weighted_sd(col, ref, tv);
      for (int g : all) {
        const Eigen::VectorXd wg = detail::restrict_to(w, in.group, g);
        row.mean.push_back(detail::weighted_mean(col, wg));
        row.sd.push_back(weighted_sd(col, wg, tv));
      }
      st.rows.push_back(std::move(row));
    }
    out.strata.push_back(std::move(st));
  }
  out.ess = detail::ess_rows(in, all);
  return out;
}

enum class PlotType { extrapolation, weights, influence };

inline PlotType parse_plot_type(const std::string& s) {
  if (s == "extrapolation") return PlotType::extrapolation;
  if (s == "weights") return PlotType::weights;
  if (s == "influence") return PlotType::influence;
  throw Error(ErrorCode::invalid_argument, "unknown plot type '" + s + "'");
}

inline std::string to_string(PlotType t) {
  switch (t) {
    case PlotType::extrapolation: return "extrapolation";
    case PlotType::weights: return "weights";
    case PlotType::influence: return "influence";
  }
  return "?";
}

struct ExtrapolationPanel {
  std::string variable;
  std::vector<double> value;
  std::vector<double> weight;
  std::vector<int> group;
  std::vector<bool> negative;
  std::vector<double> group_mean;  // weighted, per group
  double target = 0;
};

struct ExtrapolationPlot {
  std::vector<std::string> groups;
  std::vector<ExtrapolationPanel> panels;
};

struct WeightsPanel {
  std::string group;
  double bandwidth = 0;
  std::vector<double> grid;
  std::vector<double> density;
  std::vector<double> rug;
  double mean_line = 0;  // 1/n_g
  double negative_fraction = 0;
};

struct WeightsPlot {
  std::vector<WeightsPanel> panels;
};

struct InfluencePlot {
  std::string contrast;
  std::vector<std::size_t> id;  // 1-based row numbers
  std::vector<double> sic;
  std::vector<bool> top;
  std::size_t k = 0;
};

using PlotData = std::variant<ExtrapolationPlot, WeightsPlot, InfluencePlot>;

namespace detail {

/// Type-7 sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Silverman's rule of thumb 0.9·min(sd, IQR/1.34)·n^(−1/5).
inline double silverman_bandwidth(const std::vector<double>& x) {
  if (x.size() < 2) return 1.0;
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double ss = 0;
  for (double v : s) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  double lo = std::min(sd, iqr / 1.34);
  if (!(lo > 0)) lo = sd > 0 ? sd : (std::abs(s.front()) > 0 ? std::abs(s.front()) : 1.0);
  return 0.9 * lo * std::pow(n, -0.2);
}

}  // namespace detail

/// Gaussian kernel density on an evenly spaced grid over [min − 3h, max + 3h].
inline std::pair<std::vector<double>, std::vector<double>> kernel_density(
    const std::vector<double>& x, double h, std::size_t points = 512) {
  std::vector<double> grid(points);
  std::vector<double> dens(points, 0.0);
  if (x.empty()) return {grid, dens};
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn - 3 * h;
  const double hi = *mx + 3 * h;
  const double norm = 1.0 / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * M_PI));
  for (std::size_t k = 0; k < points; ++k) {
    grid[k] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
    double acc = 0;
    for (double v : x) {
      const double z = (grid[k] - v) / h;
      acc += std::exp(-0.5 * z * z);
    }
    dens[k] = acc * norm;
  }
  return {grid, dens};
}

inline ExtrapolationPlot extrapolation_plot(const LmwFit& fit, const Formula& vars) {
  const BalanceColumns cols = expand_balance_columns(vars, *fit.data, nullptr);
  const auto n = static_cast<Eigen::Index>(fit.n());
  Eigen::VectorXd target_w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fit.estimand == Estimand::ate || fit.level_of[i] == *fit.focal) {
      target_w[i] = fit.sampling_weights[i];
    }
  }
  ExtrapolationPlot plot;
  plot.groups = fit.weights.group_labels;
  const int n_groups = static_cast<int>(plot.groups.size());
  for (Eigen::Index j = 0; j < cols.matrix.cols(); ++j) {
    ExtrapolationPanel p;
    p.variable = cols.names[static_cast<std::size_t>(j)];
    const Eigen::VectorXd col = cols.matrix.col(j);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = fit.weights.weights[i];
      if (w == 0) continue;
      p.value.push_back(col[i]);
      p.weight.push_back(w);
      p.group.push_back(fit.weights.group[i]);
      p.negative.push_back(w < 0);
    }
    for (int g = 0; g < n_groups; ++g) {
      p.group_mean.push_back(
          detail::weighted_mean(col, detail::restrict_to(fit.weights.weights, fit.weights.group, g)));
    }
    p.target = detail::weighted_mean(col, target_w);
    plot.panels.push_back(std::move(p));
  }
  return plot;
}

inline WeightsPlot weights_plot(const LmwFit& fit) {
  WeightsPlot plot;
  const int n_groups = static_cast<int>(fit.weights.group_labels.size());
  for (int g = 0; g < n_groups; ++g) {
    WeightsPanel p;
    p.group = fit.weights.group_labels[g];
    for (Eigen::Index i = 0; i < fit.weights.weights.size(); ++i) {
      if (fit.weights.group[i] == g && fit.model.fit_weights[i] > 0) {
        p.rug.push_back(fit.weights.weights[i]);
      }
    }
    if (p.rug.empty()) continue;
    p.bandwidth = detail::silverman_bandwidth(p.rug);
    std::tie(p.grid, p.density) = kernel_density(p.rug, p.bandwidth);
    p.mean_line = 1.0 / static_cast<double>(p.rug.size());
    const auto neg = std::count_if(p.rug.begin(), p.rug.end(), [](double v) { return v < 0; });
    p.negative_fraction = static_cast<double>(neg) / static_cast<double>(p.rug.size());
    plot.panels.push_back(std::move(p));
  }
  return plot;
}

/// Flags the k units with the largest |SIC|; ties go to the lower row.
inline InfluencePlot influence_plot(const InfluenceSet& inf, std::size_t k = 3) {
  InfluencePlot plot;
  plot.contrast = inf.contrast;
  const auto n = static_cast<std::size_t>(inf.sic.size());
  plot.k = std::min(k, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(inf.sic[static_cast<Eigen::Index>(a)]) > std::abs(inf.sic[static_cast<Eigen::Index>(b)]);
  });
  plot.top.assign(n, false);
  for (std::size_t r = 0; r < plot.k; ++r) plot.top[order[r]] = true;
  for (std::size_t i = 0; i < n; ++i) {
    plot.id.push_back(i + 1);
    plot.sic.push_back(inf.sic[static_cast<Eigen::Index>(i)]);
  }
  return plot;
}

inline PlotData plot_data(const LmwFit& fit, PlotType type, const Formula* vars = nullptr,
                          const InfluenceSet* inf = nullptr, std::size_t top_k = 3) {
  switch (type) {
    case PlotType::extrapolation:
      if (!vars) throw Error(ErrorCode::invalid_argument, "extrapolation plot needs variables");
      return extrapolation_plot(fit, *vars);
    case PlotType::weights:
      return weights_plot(fit);
    case PlotType::influence:
      if (!inf) throw Error(ErrorCode::invalid_argument, "influence plot needs an outcome fit");
      return influence_plot(*inf, top_k);
  }
  throw Error(ErrorCode::invalid_argument, "unknown plot type");
}

}  // namespace lmw
