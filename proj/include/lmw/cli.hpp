#pragma once

#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lmw/companion.hpp"
#include "lmw/diagnostics.hpp"
#include "lmw/estimation.hpp"
#include "lmw/oracle.hpp"
#include "lmw/report.hpp"
#include "lmw/weights.hpp"

namespace lmw::cli {

enum class Format { text, json, csv };

struct RunConfig {
  std::string subcommand;
  std::string formula;
  std::string data;
  std::string estimand = "ATE";
  std::string method = "URI";
  std::string treat;
  std::string focal;
  std::vector<std::string> contrast;
  std::vector<std::string> display_contrast;
  std::string base_weights;
  std::string sampling_weights;
  std::string dr_method = "WLS";
  std::string iv;
  std::string outcome;
  std::string robust = "HC3";
  std::string cluster;
  std::string addl;
  std::string stat = "balance";
  std::string plot_type;
  std::string vars;
  std::size_t top_k = 3;
  std::string kind;
  std::string column;
  std::string format;
  std::string output;
  std::uint64_t seed = 1;
  bool verify = false;
};

/// Flag misuse detected before any data is read; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Format parse_format(const std::string& s) {
  if (s == "text") return Format::text;
  if (s == "json") return Format::json;
  if (s == "csv") return Format::csv;
  throw UsageError("unknown format '" + s + "' (text, json, csv)");
}

inline Format resolve_format(const RunConfig& cfg) {
  if (!cfg.format.empty()) return parse_format(cfg.format);
  if (const char* env = std::getenv("LMW_FORMAT"); env && *env) return parse_format(env);
  return Format::text;
}

inline void parse_cov_type_checked(const std::string& s) {
  try {
    parse_cov_type(s);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline void validate(const RunConfig& cfg) {
  const bool fits = cfg.subcommand != "datagen" && cfg.subcommand != "match";
  if (cfg.data.empty()) throw UsageError("--data is required");
  if (cfg.subcommand == "datagen") {
    if (cfg.kind != "multilevel" && cfg.kind != "instrument") {
      throw UsageError("--kind must be multilevel or instrument");
    }
    return;
  }
  if (cfg.formula.empty()) throw UsageError("--formula is required");
  if (!fits) return;
  if (cfg.estimand != "ATE" && cfg.estimand != "ATT") throw UsageError("--estimand must be ATE or ATT");
  if (cfg.method != "URI" && cfg.method != "MRI") throw UsageError("--method must be URI or MRI");
  if (cfg.dr_method != "WLS" && cfg.dr_method != "AIPW") throw UsageError("--dr-method must be WLS or AIPW");
  if (!cfg.focal.empty() && cfg.estimand != "ATT") throw UsageError("--focal requires --estimand ATT");
  if (!cfg.contrast.empty() && cfg.method != "URI") throw UsageError("--contrast requires --method URI");
  if (!cfg.contrast.empty() && cfg.contrast.size() != 2) throw UsageError("--contrast takes two levels");
  if (!cfg.display_contrast.empty() && cfg.display_contrast.size() != 2) {
    throw UsageError("--display-contrast takes two levels");
  }
  if (cfg.dr_method == "AIPW" && cfg.base_weights.empty()) throw UsageError("AIPW requires --base-weights");
  if (cfg.dr_method == "AIPW" && !cfg.iv.empty()) throw UsageError("AIPW is not available with --iv");
  const bool needs_outcome = cfg.subcommand == "estimate" || cfg.subcommand == "influence" ||
                             (cfg.subcommand == "plot-data" && cfg.plot_type == "influence");
  if (needs_outcome && cfg.outcome.empty()) throw UsageError("--outcome is required");
  if (!needs_outcome && !cfg.cluster.empty()) throw UsageError("--cluster applies to estimation only");
  if (cfg.subcommand == "plot-data") {
    if (cfg.plot_type.empty()) throw UsageError("--type is required");
    if (cfg.plot_type != "extrapolation" && cfg.plot_type != "weights" && cfg.plot_type != "influence") {
      throw UsageError("--type must be extrapolation, weights or influence");
    }
    if (cfg.plot_type == "extrapolation" && cfg.vars.empty()) throw UsageError("--vars is required");
  }
  if (cfg.subcommand == "summary" && cfg.stat != "balance" && cfg.stat != "distribution") {
    throw UsageError("--stat must be balance or distribution");
  }
  parse_cov_type_checked(cfg.robust);
}

inline std::optional<std::string> opt(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

inline std::shared_ptr<const Dataset> load(const RunConfig& cfg, const Formula* f) {
  Roles roles;
  roles.treatment = cfg.treat;
  if (roles.treatment.empty() && f && !f->variables().empty()) roles.treatment = f->variables().front();
  roles.outcome = opt(cfg.outcome);
  roles.base_weights = opt(cfg.base_weights);
  roles.sampling_weights = opt(cfg.sampling_weights);
  roles.cluster = opt(cfg.cluster);
  return std::make_shared<const Dataset>(load_csv(cfg.data, {}, roles));
}

inline LmwFit make_fit(const RunConfig& cfg, std::shared_ptr<const Dataset> ds, const Formula& f) {
  LmwOptions o;
  o.method = cfg.method == "MRI" ? Method::mri : Method::uri;
  o.estimand = cfg.estimand == "ATT" ? Estimand::att : Estimand::ate;
  o.treat = ds->roles().treatment;
  o.focal = opt(cfg.focal);
  if (!cfg.contrast.empty()) o.contrast = std::make_pair(cfg.contrast[0], cfg.contrast[1]);
  o.base_weights = opt(cfg.base_weights);
  o.sampling_weights = opt(cfg.sampling_weights);
  o.dr_method = cfg.dr_method == "AIPW" ? DrMethod::aipw : DrMethod::wls;
  if (!cfg.iv.empty()) return lmw_iv(f, std::move(ds), parse_formula(cfg.iv), o);
  return lmw(f, std::move(ds), o);
}

inline void write(const RunConfig& cfg, std::ostream& out, const std::string& text) {
  if (cfg.output.empty()) {
    out << text;
    return;
  }
  std::ofstream file(cfg.output, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "cannot write '" + cfg.output + "'");
  file << text;
}

inline std::string dump(const report::json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

/// Oracle cross-checks on a live fit; throws ErrorCode::verification on any
/// disagreement beyond 1e-8. Returns a short log.
inline std::string verify(const LmwFit& fit, const OutcomeFit* of = nullptr,
                          const EffectReport* rep = nullptr) {
  constexpr double tol = 1e-8;
  std::ostringstream log;
  auto fail = [](const std::string& what) { throw Error(ErrorCode::verification, "verification failed: " + what); };
  const auto n = static_cast<Eigen::Index>(fit.n());
  const int n_groups = static_cast<int>(fit.weights.n_groups());
  for (int g = 0; g < n_groups; ++g) {
    Eigen::Index size = 0;
    for (Eigen::Index i = 0; i < n; ++i) size += fit.weights.group[i] == g ? 1 : 0;
    if (std::abs(fit.weights.group_sum(g) - 1.0) > tol * std::max<double>(1, static_cast<double>(size))) {
      fail("weights in group " + fit.weights.group_labels[g] + " do not sum to one");
    }
  }
  log << "sum-to-one: ok\n";

  // Weighted covariate means against the target (MRI) or across groups.
  const Eigen::MatrixXd x = fit.covariate_block();
  std::vector<Eigen::VectorXd> means;
  for (int g = 0; g < n_groups; ++g) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fit.weights.group[i] == g) m += fit.weights.weights[i] * x.row(i).transpose();
    }
    means.push_back(m);
  }
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double scale = std::max(1.0, x.col(j).cwiseAbs().maxCoeff());
    for (int g = 0; g < n_groups; ++g) {
      const double ref = fit.method == Method::mri && !fit.instrument ? fit.target.values[j] : means[0][j];
      if (fit.dr_method == DrMethod::aipw) continue;
      if (std::abs(means[g][j] - ref) > tol * scale) fail("mean balance on " + fit.covariates.names[j + 1]);
    }
  }
  log << "mean balance: ok\n";

  const bool unit_weights = !fit.base_weights_name && !fit.sampling_weights_name;
  if (unit_weights && !fit.multi_valued() && !fit.instrument) {
    std::vector<bool> treated(fit.n());
    for (std::size_t i = 0; i < fit.n(); ++i) treated[i] = fit.weights.group[i] == 1;
    const WeightVector closed = fit.method == Method::uri ? uri_weights_closed_form(x, treated)
                                                          : mri_weights_closed_form(x, treated, fit.estimand);
    if ((closed.weights - fit.weights.weights).cwiseAbs().maxCoeff() > tol) fail("closed-form weights");
    log << "closed form: ok\n";
    for (int g = 0; g < 2; ++g) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (treated[static_cast<std::size_t>(i)] == (g == 1)) rows.push_back(i);
      }
      Eigen::MatrixXd xg(static_cast<Eigen::Index>(rows.size()), x.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) xg.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      const auto kkt = oracle::min_variance_weights(xg, fit.target.values);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (std::abs(kkt.weights[static_cast<Eigen::Index>(r)] - fit.weights.weights[rows[r]]) > tol) {
          fail("KKT minimum-variance weights");
        }
      }
    }
    log << "KKT oracle: ok\n";
  }

  if (of && rep) {
    for (std::size_t k = 0; k < fit.contrasts.size(); ++k) {
      const double direct = fit.contrasts[k].functional.dot(of->y);
      const double est = rep->contrasts[k].estimate;
      if (std::abs(direct - est) > tol * std::max(1.0, std::abs(est))) fail("weighted contrast identity");
    }
    log << "weighted contrast identity: ok\n";
  }
  return log.str();
}

namespace detail {

inline int execute(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Format fmt = resolve_format(cfg);
  if (cfg.subcommand == "datagen") {
    Roles roles;
    roles.treatment = cfg.treat;
    const Dataset ds = load_csv(cfg.data, {}, roles);
    if (cfg.treat.empty()) throw UsageError("--treat is required");
    const std::string name = cfg.column.empty() ? (cfg.kind == "multilevel" ? "treat_multi" : "Ins") : cfg.column;
    Column col = cfg.kind == "multilevel" ? generate_multilevel(ds, cfg.seed) : generate_instrument(ds, cfg.seed);
    write(cfg, out, to_csv(ds.with_column(name, std::move(col))));
    return 0;
  }

  const Formula f = parse_formula(cfg.formula);
  const auto ds = load(cfg, &f);

  if (cfg.subcommand == "match") {
    const LmwFit spec = lmw(f, ds, LmwOptions{});
    if (spec.multi_valued()) throw Error(ErrorCode::invalid_argument, "matching needs a binary treatment");
    std::vector<bool> treated(spec.n());
    for (std::size_t i = 0; i < spec.n(); ++i) treated[i] = spec.level_of[i] == spec.treated_level;
    const auto ps = fit_propensity(spec.covariates.matrix, treated);
    const auto m = nn_match(ps.scores, treated);
    std::vector<double> sub(m.subclass.begin(), m.subclass.end());
    const std::string wname = cfg.column.empty() ? "weights" : cfg.column;
    Dataset outds = ds->with_column(wname, Column::numeric(std::vector<double>(
                                               m.base_weights.data(), m.base_weights.data() + m.base_weights.size())));
    outds = outds.with_column("subclass", Column::numeric(sub));
    outds = outds.with_column("distance", Column::numeric(std::vector<double>(
                                              ps.scores.data(), ps.scores.data() + ps.scores.size())));
    write(cfg, out, to_csv(outds));
    err << "matched " << m.matched() << " of " << spec.n() << " units\n";
    return 0;
  }

  const LmwFit fit = make_fit(cfg, ds, f);
  std::optional<OutcomeFit> of;
  std::optional<EffectReport> rep;
  if (!cfg.outcome.empty()) {
    of = lmw_est(fit, cfg.outcome, parse_cov_type(cfg.robust), opt(cfg.cluster));
    rep = effect_summary(*of, fit);
  }
  if (cfg.verify) err << verify(fit, of ? &*of : nullptr, rep ? &*rep : nullptr);

  std::string text;
  const std::optional<Formula> addl = cfg.addl.empty() ? std::nullopt : std::optional<Formula>(parse_formula(cfg.addl));
  const Formula* addl_ptr = addl ? &*addl : nullptr;
  if (cfg.subcommand == "weights") {
    if (fmt == Format::json) {
      text = dump(report::weights_json(fit));
    } else if (fmt == Format::csv) {
      text = report::weights_csv(fit);
    } else {
      const auto d = distribution_summary(fit);
      text = report::fit_text(fit) + "\n" + report::ess_text(d.groups, d.ess);
    }
  } else if (cfg.subcommand == "summary") {
    if (cfg.stat == "distribution") {
      const auto d = distribution_summary(fit, addl_ptr);
      text = fmt == Format::json ? dump(report::distribution_json(d))
             : fmt == Format::csv ? report::distribution_csv(d)
                                  : report::fit_text(fit) + "\n" + report::distribution_text(d);
    } else {
      std::optional<std::pair<std::string, std::string>> pair;
      if (!cfg.display_contrast.empty()) pair = std::make_pair(cfg.display_contrast[0], cfg.display_contrast[1]);
      const auto b = balance_summary(fit, addl_ptr, pair);
      text = fmt == Format::json ? dump(report::balance_json(b))
             : fmt == Format::csv ? report::balance_csv(b)
                                  : report::fit_text(fit) + "\n" + report::balance_text(b);
    }
  } else if (cfg.subcommand == "estimate") {
    text = fmt == Format::json ? dump(report::effects_json(*rep))
           : fmt == Format::csv ? report::effects_csv(*rep)
                                : report::effects_text(*rep);
  } else if (cfg.subcommand == "influence") {
    const auto inf = influence(*of, fit);
    text = fmt == Format::json ? dump(report::influence_json(inf))
           : fmt == Format::csv ? report::influence_csv(inf)
                                : report::influence_text(inf, cfg.top_k);
  } else if (cfg.subcommand == "plot-data") {
    const PlotType type = parse_plot_type(cfg.plot_type);
    std::optional<Formula> vars;
    if (!cfg.vars.empty()) vars = parse_formula(cfg.vars);
    std::optional<InfluenceSet> inf;
    if (type == PlotType::influence) inf = influence(*of, fit);
    text = dump(report::plot_json(plot_data(fit, type, vars ? &*vars : nullptr, inf ? &*inf : nullptr, cfg.top_k)));
  }
  write(cfg, out, text);
  return 0;
}

inline void add_fit_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--formula,-f", cfg.formula, "Model formula, e.g. \"~ treat + age + race\"");
  sub->add_option("--treat", cfg.treat, "Treatment column (default: first formula variable)");
  sub->add_option("--estimand", cfg.estimand, "ATE or ATT");
  sub->add_option("--method", cfg.method, "URI or MRI");
  sub->add_option("--focal", cfg.focal, "Focal treatment level (ATT)");
  sub->add_option("--contrast", cfg.contrast, "Two levels to contrast (multi-valued URI)")->expected(2);
  sub->add_option("--base-weights", cfg.base_weights, "Base weights column");
  sub->add_option("--sampling-weights", cfg.sampling_weights, "Sampling weights column");
  sub->add_option("--dr-method", cfg.dr_method, "WLS or AIPW (with base weights)");
  sub->add_option("--iv", cfg.iv, "Instrument formula; fits two-stage least squares");
  sub->add_flag("--verify", cfg.verify, "Run oracle cross-checks and fail on disagreement");
}

inline void add_outcome_options(CLI::App* sub, RunConfig& cfg, bool required) {
  auto* o = sub->add_option("--outcome", cfg.outcome, "Outcome column");
  if (required) o->required();
  sub->add_option("--robust", cfg.robust, "const, HC0, HC1, HC2 or HC3");
  sub->add_option("--cluster", cfg.cluster, "Cluster column (cluster-robust HC1)");
}

}  // namespace detail

/// Runs the CLI; returns 0 on success, 2 on usage errors, 1 on computation errors.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Implied weights of linear regression estimators", "lmw"};
  app.set_help_all_flag("--help-all");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--data,-d", cfg.data, "Input CSV")->envname("LMW_DATA");
  app.add_option("--format", cfg.format, "text, json or csv (default: $LMW_FORMAT or text)");
  app.add_option("--output,-o", cfg.output, "Write output to a file instead of stdout");

  auto* weights = app.add_subcommand("weights", "Implied weights for a fit");
  detail::add_fit_options(weights, cfg);

  auto* summary = app.add_subcommand("summary", "Balance tables or distribution summary");
  detail::add_fit_options(summary, cfg);
  summary->add_option("--stat", cfg.stat, "balance or distribution");
  summary->add_option("--addl", cfg.addl, "Additional balance variables, e.g. \"~ married + re75\"");
  summary->add_option("--display-contrast", cfg.display_contrast, "Pair of levels to display (multi-valued MRI)")
      ->expected(2);

  auto* estimate = app.add_subcommand("estimate", "Effect estimates with robust inference");
  detail::add_fit_options(estimate, cfg);
  detail::add_outcome_options(estimate, cfg, true);

  auto* infl = app.add_subcommand("influence", "Hat values, residuals and SIC");
  detail::add_fit_options(infl, cfg);
  detail::add_outcome_options(infl, cfg, true);
  infl->add_option("--top-k", cfg.top_k, "Units listed in text output");

  auto* plot = app.add_subcommand("plot-data", "Plot data as JSON");
  detail::add_fit_options(plot, cfg);
  detail::add_outcome_options(plot, cfg, false);
  plot->add_option("--type", cfg.plot_type, "extrapolation, weights or influence");
  plot->add_option("--vars", cfg.vars, "Variables for the extrapolation plot");
  plot->add_option("--top-k", cfg.top_k, "Flagged units in the influence plot");

  auto* datagen = app.add_subcommand("datagen", "Append a synthetic treatment or instrument column");
  datagen->add_option("--kind", cfg.kind, "multilevel or instrument")->required();
  datagen->add_option("--treat", cfg.treat, "Binary treatment column")->required();
  datagen->add_option("--seed", cfg.seed, "Random seed");
  datagen->add_option("--name", cfg.column, "Name of the generated column");

  auto* match = app.add_subcommand("match", "1:1 nearest-neighbour propensity score matching");
  match->add_option("--formula,-f", cfg.formula, "Propensity model formula including the treatment")->required();
  match->add_option("--treat", cfg.treat, "Treatment column");
  match->add_option("--name", cfg.column, "Name of the base-weights column (default: weights)");

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }
  for (const auto* sub : app.get_subcommands()) cfg.subcommand = sub->get_name();
  try {
    detail::validate(cfg);
    return detail::execute(cfg, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error[" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv = {"lmw"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace lmw::cli
