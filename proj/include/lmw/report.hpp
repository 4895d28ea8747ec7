#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "lmw/dataset.hpp"
#include "lmw/diagnostics.hpp"
#include "lmw/estimation.hpp"
#include "lmw/weights.hpp"

namespace lmw::report {

inline constexpr const char* kSchemaVersion = "1.0";

using json = nlohmann::ordered_json;

// ---- number formatting -------------------------------------------------

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  // Avoid "-0.000".
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

/// Up to `decimals` places with trailing zeros removed.
inline std::string trimmed(double v, int decimals) {
  std::string s = fixed(v, decimals);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s;
}

/// Rounded to `digits` significant digits, no exponent for magnitudes ≥ 1.
inline std::string signif(double v, int digits) {
  if (v == 0 || !std::isfinite(v)) return fixed(v, 0);
  const int mag = static_cast<int>(std::floor(std::log10(std::abs(v))));
  const double unit = std::pow(10.0, mag - digits + 1);
  const double r = std::round(v / unit) * unit;
  return fixed(r, std::max(0, digits - 1 - mag));
}

inline std::string pvalue(double p) {
  if (p < 2e-16) return "<2e-16";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", p);
  return buf;
}

inline std::string stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return ".";
  return "";
}

/// Plain text table: first column left-aligned, others right-aligned.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::vector<std::size_t> width(header_.size(), 0);
    auto measure = [&](const std::vector<std::string>& r) {
      for (std::size_t k = 0; k < r.size() && k < width.size(); ++k) width[k] = std::max(width[k], r[k].size());
    };
    measure(header_);
    for (const auto& r : rows_) measure(r);
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& r) {
      std::string line;
      for (std::size_t k = 0; k < r.size(); ++k) {
        const std::string pad(width[k] - r[k].size(), ' ');
        line += k == 0 ? r[k] + pad : " " + pad + r[k];
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      os << line << '\n';
    };
    emit(header_);
    for (const auto& r : rows_) emit(r);
    return os.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---- text ----------------------------------------------------------------

inline std::string method_long(Method m) {
  return m == Method::uri ? "URI (uni-regression imputation)" : "MRI (multi-regression imputation)";
}

inline std::string covariate_list(const LmwFit& fit) {
  std::string s;
  for (const auto& v : fit.covariate_formula.variables()) s += (s.empty() ? "" : ", ") + v;
  return s.empty() ? "none" : s;
}

inline std::string fit_text(const LmwFit& fit) {
  std::ostringstream os;
  os << (fit.instrument ? "An lmw_iv object\n" : "An lmw object\n");
  os << " - treatment: " << fit.treatment << " (" << fit.levels.size() << " levels)\n";
  if (fit.instrument) os << " - instrument: " << *fit.instrument << '\n';
  os << " - method: " << method_long(fit.method) << '\n';
  os << " - number of obs.: " << fit.n() << '\n';
  os << " - sampling weights: " << fit.sampling_weights_name.value_or("none") << '\n';
  os << " - base weights: " << fit.base_weights_name.value_or("none") << '\n';
  if (fit.base_weights_name) {
    os << " - doubly-robust method: "
       << (fit.dr_method == DrMethod::wls ? "weighted least squares (WLS)"
                                          : "augmented inverse probability weighting (AIPW)")
       << '\n';
  }
  os << " - target estimand: " << to_string(fit.estimand);
  if (fit.estimand == Estimand::att && fit.multi_valued()) os << " (focal = \"" << fit.levels[*fit.focal] << "\")";
  os << '\n';
  if (fit.contrast) {
    os << " - contrast: " << fit.levels[fit.contrast->first] << " vs " << fit.levels[fit.contrast->second] << '\n';
  }
  os << " - covariates: " << covariate_list(fit) << '\n';
  if (fit.instrument) os << " - first-stage |t| of instrument: " << fixed(fit.first_stage_t, 2) << '\n';
  for (const auto& w : fit.covariates.warnings) os << " - note: " << w << '\n';
  return os.str();
}

inline std::string ess_text(const std::vector<std::string>& groups, const std::vector<EssRow>& rows) {
  std::vector<std::string> header = {""};
  header.insert(header.end(), groups.begin(), groups.end());
  TextTable t(header);
  for (const auto& r : rows) {
    std::vector<std::string> line = {r.name};
    for (double v : r.values) line.push_back(trimmed(v, 2));
    t.add(line);
  }
  return "Effective Sample Sizes:\n" + t.str();
}

/// Three decimals; a column that rounds to zero throughout prints as "0".
inline std::vector<std::string> stat_column(const std::vector<double>& v) {
  const bool all_zero = std::all_of(v.begin(), v.end(), [](double x) { return std::abs(x) < 5e-4; });
  std::vector<std::string> out;
  for (double x : v) out.push_back(all_zero ? "0" : fixed(x, 3));
  return out;
}

inline std::string balance_text(const BalanceTable& table) {
  std::ostringstream os;
  for (const auto& st : table.strata) {
    os << "Summary of Balance for " << st.name << " Data:\n";
    std::vector<std::string> header = {""};
    std::vector<std::vector<std::string>> cols;
    auto add_col = [&](const std::string& name, const std::vector<double>& values) {
      header.push_back(name);
      cols.push_back(stat_column(values));
    };
    const std::size_t ng = table.groups.size();
    auto collect = [&](auto get) {
      std::vector<double> v;
      for (const auto& r : st.rows) v.push_back(get(r));
      return v;
    };
    if (table.pairwise) add_col("SMD", collect([](const BalanceRow& r) { return r.smd.value_or(0); }));
    for (std::size_t g = 0; g < ng; ++g) {
      add_col("TSMD " + table.groups[g], collect([g](const BalanceRow& r) { return r.tsmd[g]; }));
    }
    if (table.pairwise) add_col("KS", collect([](const BalanceRow& r) { return r.ks.value_or(0); }));
    for (std::size_t g = 0; g < ng; ++g) {
      add_col("TKS " + table.groups[g], collect([g](const BalanceRow& r) { return r.tks[g]; }));
    }
    TextTable t(header);
    for (std::size_t i = 0; i < st.rows.size(); ++i) {
      std::vector<std::string> line = {st.rows[i].name};
      for (const auto& c : cols) line.push_back(c[i]);
      t.add(line);
    }
    os << t.str() << '\n';
  }
  os << ess_text(table.ess_groups, table.ess);
  return os.str();
}

inline std::string distribution_text(const DistributionSummary& d) {
  std::ostringstream os;
  for (const auto& st : d.strata) {
    os << "Distribution Summary for " << st.name << " Data:\n";
    std::vector<std::string> header = {"", "Mean " + st.reference, "SD " + st.reference};
    for (const auto& g : d.groups) {
      header.push_back("Mean " + g);
      header.push_back("SD " + g);
    }
    TextTable t(header);
    for (const auto& r : st.rows) {
      std::vector<std::string> line = {r.name, fixed(r.target_mean, 3), "(" + fixed(r.target_sd, 3) + ")"};
      for (std::size_t g = 0; g < r.mean.size(); ++g) {
        line.push_back(fixed(r.mean[g], 3));
        line.push_back("(" + fixed(r.sd[g], 3) + ")");
      }
      t.add(line);
    }
    os << t.str() << '\n';
  }
  os << ess_text(d.groups, d.ess);
  return os.str();
}

inline std::string estimate_rows_text(const std::vector<EstimateRow>& rows) {
  TextTable t({"", "Estimate", "Std. Error", "95% CI L", "95% CI U", "t value", "Pr(>|t|)", ""});
  for (const auto& r : rows) {
    t.add({r.label, fixed(r.estimate, 1), fixed(r.se, 1), fixed(r.ci_low, 1), fixed(r.ci_high, 1),
           fixed(r.t, 3), pvalue(r.p), stars(r.p)});
  }
  return t.str();
}

inline std::string effects_text(const EffectReport& rep) {
  std::ostringstream os;
  os << (rep.iv ? "An lmw_est_iv object\n" : "An lmw_est object\n");
  os << " - outcome: " << rep.outcome << '\n';
  os << " - standard errors: " << rep.vcov_label << '\n';
  os << " - estimand: " << to_string(rep.estimand) << '\n';
  os << " - method: " << to_string(rep.method) << "\n\n";
  os << "Effect estimates:\n" << estimate_rows_text(rep.contrasts) << '\n';
  os << "Residual standard error: " << signif(rep.sigma, 4) << " on " << fixed(rep.df, 0)
     << " degrees of freedom\n";
  if (!rep.po_means.empty()) {
    os << "\nPotential outcome means:\n" << estimate_rows_text(rep.po_means);
  }
  os << "---\nSignif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n";
  return os.str();
}

inline std::string influence_text(const InfluenceSet& inf, std::size_t top_k) {
  const InfluencePlot plot = influence_plot(inf, top_k);
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < plot.top.size(); ++i) {
    if (plot.top[i]) top.push_back(i);
  }
  std::sort(top.begin(), top.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(plot.sic[a]) > std::abs(plot.sic[b]);
  });
  std::ostringstream os;
  os << "Influence measures for " << inf.contrast << "\n";
  TextTable t({"id", "hat", "residual", "SIC"});
  for (std::size_t i : top) {
    const auto e = static_cast<Eigen::Index>(i);
    t.add({std::to_string(i + 1), fixed(inf.hat_values[e], 4), fixed(inf.residuals[e], 1), fixed(inf.sic[e], 1)});
  }
  os << "Most influential units (top " << top.size() << " by |SIC|):\n" << t.str();
  return os.str();
}

// ---- JSON ----------------------------------------------------------------

inline json header(const char* kind) {
  return json{{"schema_version", kSchemaVersion}, {"kind", kind}};
}

inline json vec(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json fit_json(const LmwFit& fit) {
  json j;
  j["method"] = to_string(fit.method);
  j["estimand"] = to_string(fit.estimand);
  j["treatment"] = fit.treatment;
  j["levels"] = fit.levels;
  j["n"] = fit.n();
  j["focal"] = fit.focal ? json(fit.levels[*fit.focal]) : json(nullptr);
  j["contrast"] = fit.contrast ? json({fit.levels[fit.contrast->first], fit.levels[fit.contrast->second]})
                               : json(nullptr);
  j["base_weights"] = fit.base_weights_name ? json(*fit.base_weights_name) : json(nullptr);
  j["sampling_weights"] = fit.sampling_weights_name ? json(*fit.sampling_weights_name) : json(nullptr);
  j["dr_method"] = to_string(fit.dr_method);
  j["instrument"] = fit.instrument ? json(*fit.instrument) : json(nullptr);
  if (fit.instrument) j["first_stage_t"] = fit.first_stage_t;
  j["covariates"] = std::vector<std::string>(fit.covariates.names.begin() + (fit.covariates.has_intercept ? 1 : 0),
                                             fit.covariates.names.end());
  j["dropped"] = fit.covariates.dropped;
  j["warnings"] = fit.covariates.warnings;
  return j;
}

inline std::string source_name(ProfileSource s) {
  switch (s) {
    case ProfileSource::overall_mean: return "overall-mean";
    case ProfileSource::focal_mean: return "focal-group-mean";
    case ProfileSource::uri_implied: return "uri-implied";
  }
  return "?";
}

inline json weights_json(const LmwFit& fit) {
  json j = header("weights");
  j["fit"] = fit_json(fit);
  j["groups"] = fit.weights.group_labels;
  j["target"] = {{"source", source_name(fit.target.source)}, {"names", fit.target.names},
                 {"values", vec(fit.target.values)}};
  json units = json::array();
  for (std::size_t i = 0; i < fit.n(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    units.push_back({{"id", i + 1},
                     {"group", fit.weights.group_labels[fit.weights.group[i]]},
                     {"weight", fit.weights.weights[e]},
                     {"base_weight", fit.base_weights[e]}});
  }
  j["units"] = units;
  return j;
}

inline json ess_json(const std::vector<EssRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back({{"name", r.name}, {"values", r.values}});
  return out;
}

inline json balance_json(const BalanceTable& t) {
  json j = header("balance");
  j["groups"] = t.groups;
  j["pairwise"] = t.pairwise;
  json strata = json::array();
  for (const auto& st : t.strata) {
    json rows = json::array();
    for (const auto& r : st.rows) {
      rows.push_back({{"name", r.name},
                      {"smd", r.smd ? json(*r.smd) : json(nullptr)},
                      {"tsmd", r.tsmd},
                      {"ks", r.ks ? json(*r.ks) : json(nullptr)},
                      {"tks", r.tks},
                      {"degenerate", r.degenerate}});
    }
    strata.push_back({{"name", st.name}, {"rows", rows}});
  }
  j["strata"] = strata;
  j["ess_groups"] = t.ess_groups;
  j["ess"] = ess_json(t.ess);
  return j;
}

inline json distribution_json(const DistributionSummary& d) {
  json j = header("distribution");
  j["groups"] = d.groups;
  json strata = json::array();
  for (const auto& st : d.strata) {
    json rows = json::array();
    for (const auto& r : st.rows) {
      rows.push_back({{"name", r.name}, {"target_mean", r.target_mean}, {"target_sd", r.target_sd},
                      {"mean", r.mean}, {"sd", r.sd}});
    }
    strata.push_back({{"name", st.name}, {"reference", st.reference}, {"rows", rows}});
  }
  j["strata"] = strata;
  j["ess"] = ess_json(d.ess);
  return j;
}

inline json estimate_rows_json(const std::vector<EstimateRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"label", r.label}, {"estimate", r.estimate}, {"se", r.se}, {"ci_low", r.ci_low},
                   {"ci_high", r.ci_high}, {"t", r.t}, {"p", r.p}});
  }
  return out;
}

inline json effects_json(const EffectReport& rep) {
  json j = header("effects");
  j["outcome"] = rep.outcome;
  j["method"] = to_string(rep.method);
  j["estimand"] = to_string(rep.estimand);
  j["iv"] = rep.iv;
  j["vcov"] = rep.vcov_label;
  j["df"] = rep.df;
  j["sigma"] = rep.sigma;
  j["contrasts"] = estimate_rows_json(rep.contrasts);
  j["po_means"] = estimate_rows_json(rep.po_means);
  return j;
}

inline json influence_json(const InfluenceSet& inf) {
  json j = header("influence");
  j["contrast"] = inf.contrast;
  json units = json::array();
  for (Eigen::Index i = 0; i < inf.sic.size(); ++i) {
    units.push_back({{"id", i + 1}, {"hat", inf.hat_values[i]}, {"residual", inf.residuals[i]},
                     {"sic", inf.sic[i]}});
  }
  j["units"] = units;
  return j;
}

inline json plot_json(const PlotData& pd) {
  json j = header("plot");
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ExtrapolationPlot>) {
          j["type"] = "extrapolation";
          j["groups"] = p.groups;
          json panels = json::array();
          for (const auto& panel : p.panels) {
            panels.push_back({{"variable", panel.variable}, {"value", panel.value}, {"weight", panel.weight},
                              {"group", panel.group}, {"negative", panel.negative},
                              {"group_mean", panel.group_mean}, {"target", panel.target}});
          }
          j["panels"] = panels;
        } else if constexpr (std::is_same_v<T, WeightsPlot>) {
          j["type"] = "weights";
          json panels = json::array();
          for (const auto& panel : p.panels) {
            panels.push_back({{"group", panel.group}, {"bandwidth", panel.bandwidth}, {"grid", panel.grid},
                              {"density", panel.density}, {"rug", panel.rug}, {"mean_line", panel.mean_line},
                              {"negative_fraction", panel.negative_fraction}});
          }
          j["panels"] = panels;
        } else {
          j["type"] = "influence";
          j["contrast"] = p.contrast;
          j["k"] = p.k;
          j["id"] = p.id;
          j["sic"] = p.sic;
          j["top"] = p.top;
        }
      },
      pd);
  return j;
}

// ---- CSV -----------------------------------------------------------------

inline std::string num(double v) { return Column::format_real(v); }

inline std::string weights_csv(const LmwFit& fit) {
  std::ostringstream os;
  os << "id,group,weight,base_weight\n";
  for (std::size_t i = 0; i < fit.n(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    os << i + 1 << ',' << csv::quote(fit.weights.group_labels[fit.weights.group[i]]) << ','
       << num(fit.weights.weights[e]) << ',' << num(fit.base_weights[e]) << '\n';
  }
  return os.str();
}

inline std::string balance_csv(const BalanceTable& t) {
  std::ostringstream os;
  os << "stratum,variable,statistic,group,value\n";
  for (const auto& st : t.strata) {
    for (const auto& r : st.rows) {
      const std::string prefix = csv::quote(st.name) + ',' + csv::quote(r.name) + ',';
      if (r.smd) os << prefix << "SMD,," << num(*r.smd) << '\n';
      for (std::size_t g = 0; g < t.groups.size(); ++g) {
        os << prefix << "TSMD," << csv::quote(t.groups[g]) << ',' << num(r.tsmd[g]) << '\n';
      }
      if (r.ks) os << prefix << "KS,," << num(*r.ks) << '\n';
      for (std::size_t g = 0; g < t.groups.size(); ++g) {
        os << prefix << "TKS," << csv::quote(t.groups[g]) << ',' << num(r.tks[g]) << '\n';
      }
    }
  }
  for (const auto& r : t.ess) {
    for (std::size_t g = 0; g < t.ess_groups.size(); ++g) {
      os << csv::quote(r.name) << ",,ESS," << csv::quote(t.ess_groups[g]) << ',' << num(r.values[g]) << '\n';
    }
  }
  return os.str();
}

inline std::string distribution_csv(const DistributionSummary& d) {
  std::ostringstream os;
  os << "stratum,variable,group,mean,sd\n";
  for (const auto& st : d.strata) {
    for (const auto& r : st.rows) {
      const std::string prefix = csv::quote(st.name) + ',' + csv::quote(r.name) + ',';
      os << prefix << csv::quote(st.reference) << ',' << num(r.target_mean) << ',' << num(r.target_sd) << '\n';
      for (std::size_t g = 0; g < d.groups.size(); ++g) {
        os << prefix << csv::quote(d.groups[g]) << ',' << num(r.mean[g]) << ',' << num(r.sd[g]) << '\n';
      }
    }
  }
  return os.str();
}

inline std::string effects_csv(const EffectReport& rep) {
  std::ostringstream os;
  os << "kind,label,estimate,se,ci_low,ci_high,t,p,df\n";
  auto emit = [&](const char* kind, const std::vector<EstimateRow>& rows) {
    for (const auto& r : rows) {
      os << kind << ',' << csv::quote(r.label) << ',' << num(r.estimate) << ',' << num(r.se) << ','
         << num(r.ci_low) << ',' << num(r.ci_high) << ',' << num(r.t) << ',' << num(r.p) << ','
         << num(rep.df) << '\n';
    }
  };
  emit("contrast", rep.contrasts);
  emit("po_mean", rep.po_means);
  return os.str();
}

inline std::string influence_csv(const InfluenceSet& inf) {
  std::ostringstream os;
  os << "id,hat,residual,sic\n";
  for (Eigen::Index i = 0; i < inf.sic.size(); ++i) {
    os << i + 1 << ',' << num(inf.hat_values[i]) << ',' << num(inf.residuals[i]) << ',' << num(inf.sic[i]) << '\n';
  }
  return os.str();
}

}  // namespace lmw::report
