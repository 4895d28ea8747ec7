#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmw/dataset.hpp"
#include "lmw/error.hpp"
#include "lmw/formula.hpp"
#include "lmw/linalg.hpp"

namespace lmw {

enum class Method { uri, mri };
enum class Estimand { ate, att };
enum class DrMethod { wls, aipw };

inline std::string to_string(Method m) { return m == Method::uri ? "URI" : "MRI"; }
inline std::string to_string(Estimand e) { return e == Estimand::ate ? "ATE" : "ATT"; }
inline std::string to_string(DrMethod d) { return d == DrMethod::wls ? "WLS" : "AIPW"; }

/// Group means and (denominator n_g) covariance matrices of a covariate block
/// split by a binary indicator.
struct MomentSet {
  Eigen::VectorXd mean_treated;
  Eigen::VectorXd mean_control;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov_treated;
  Eigen::MatrixXd cov_control;
  double n_treated = 0;
  double n_control = 0;

  static MomentSet compute(const Eigen::MatrixXd& x, const std::vector<bool>& treated) {
    const Eigen::Index k = x.cols();
    MomentSet m;
    m.mean_treated = Eigen::VectorXd::Zero(k);
    m.mean_control = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (treated[i]) {
        m.mean_treated += x.row(i).transpose();
        m.n_treated += 1;
      } else {
        m.mean_control += x.row(i).transpose();
        m.n_control += 1;
      }
    }
    if (m.n_treated == 0 || m.n_control == 0) {
      throw Error(ErrorCode::single_level, "both treatment groups must be non-empty");
    }
    m.mean = (m.mean_treated + m.mean_control) / (m.n_treated + m.n_control);
    m.mean_treated /= m.n_treated;
    m.mean_control /= m.n_control;
    m.cov_treated = Eigen::MatrixXd::Zero(k, k);
    m.cov_control = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (treated[i]) {
        Eigen::VectorXd d = x.row(i).transpose() - m.mean_treated;
        m.cov_treated.noalias() += d * d.transpose();
      } else {
        Eigen::VectorXd d = x.row(i).transpose() - m.mean_control;
        m.cov_control.noalias() += d * d.transpose();
      }
    }
    m.cov_treated /= m.n_treated;
    m.cov_control /= m.n_control;
    return m;
  }

  /// n_t V_t + n_c V_c, the pooled within-group scatter.
  Eigen::MatrixXd pooled_scatter() const {
    return n_treated * cov_treated + n_control * cov_control;
  }
};

enum class ProfileSource { overall_mean, focal_mean, uri_implied };

struct TargetProfile {
  Eigen::VectorXd values;
  std::vector<std::string> names;
  ProfileSource source = ProfileSource::overall_mean;
};

/// Per-unit implied weights, stored unsigned within groups; each group's
/// weights sum to one. Contrasts apply + to the active group and − to the
/// comparison group.
struct WeightVector {
  Eigen::VectorXd weights;
  std::vector<int> group;
  std::vector<std::string> group_labels;

  std::size_t n_groups() const { return group_labels.size(); }

  Eigen::VectorXd signed_weights(int active, int comparison) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(weights.size());
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (group[i] == active) out[i] = weights[i];
      if (group[i] == comparison) out[i] = -weights[i];
    }
    return out;
  }

  double group_sum(int g) const {
    double s = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (group[i] == g) s += weights[i];
    }
    return s;
  }
};

/// Closed-form URI weights for a binary treatment and unit base weights.
inline WeightVector uri_weights_closed_form(const Eigen::MatrixXd& x,
                                            const std::vector<bool>& treated) {
  const auto m = MomentSet::compute(x, treated);
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(x.cols());
  if (x.cols() > 0) {
    shift = linalg::solve_symmetric(m.pooled_scatter(), m.mean_control - m.mean_treated,
                                    "degenerate covariate scatter");
  }
  WeightVector w;
  w.weights.resize(x.rows());
  w.group.resize(x.rows());
  w.group_labels = {"Control", "Treated"};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (treated[i]) {
      w.weights[i] = 1.0 / m.n_treated + (x.row(i).transpose() - m.mean_treated).dot(shift);
      w.group[i] = 1;
    } else {
      w.weights[i] = 1.0 / m.n_control - (x.row(i).transpose() - m.mean_control).dot(shift);
      w.group[i] = 0;
    }
  }
  return w;
}

/// Closed-form MRI weights: each group reweighted toward the overall mean
/// (ATE) or the treated mean (ATT).
inline WeightVector mri_weights_closed_form(const Eigen::MatrixXd& x,
                                            const std::vector<bool>& treated, Estimand estimand) {
  const auto m = MomentSet::compute(x, treated);
  const Eigen::VectorXd target = estimand == Estimand::ate ? m.mean : m.mean_treated;
  auto direction = [&](const Eigen::MatrixXd& cov, const Eigen::VectorXd& mean) {
    if (x.cols() == 0) return Eigen::VectorXd(Eigen::VectorXd::Zero(0));
    return linalg::solve_symmetric(cov, target - mean, "singular group covariance matrix");
  };
  const Eigen::VectorXd dir_t = direction(m.cov_treated, m.mean_treated);
  const Eigen::VectorXd dir_c = direction(m.cov_control, m.mean_control);
  WeightVector w;
  w.weights.resize(x.rows());
  w.group.resize(x.rows());
  w.group_labels = {"Control", "Treated"};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (treated[i]) {
      w.weights[i] = (1.0 + (x.row(i).transpose() - m.mean_treated).dot(dir_t)) / m.n_treated;
      w.group[i] = 1;
    } else {
      w.weights[i] = (1.0 + (x.row(i).transpose() - m.mean_control).dot(dir_c)) / m.n_control;
      w.group[i] = 0;
    }
  }
  return w;
}

/// The covariate profile both groups' URI weights balance toward.
inline TargetProfile uri_target_profile(const MomentSet& m) {
  const Eigen::MatrixXd s = m.pooled_scatter();
  TargetProfile p;
  p.source = ProfileSource::uri_implied;
  if (s.cols() == 0) {
    p.values = Eigen::VectorXd::Zero(0);
    return p;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  qr.setThreshold(linalg::kSingularTolerance);
  qr.compute(s);
  if (qr.rank() < s.cols()) throw Error(ErrorCode::singular, "degenerate covariate scatter");
  // n_c V_c S^{-1} x̄_t + n_t V_t S^{-1} x̄_c
  p.values = m.n_control * m.cov_control * qr.solve(m.mean_treated) +
             m.n_treated * m.cov_treated * qr.solve(m.mean_control);
  return p;
}

/// Linear-functional extraction: the per-unit coefficients ℓ such that the
/// weighted least-squares estimate c'β̂ equals ℓ'y for every outcome y.
inline Eigen::VectorXd implied_weights_generic(const Eigen::MatrixXd& design,
                                               const Eigen::VectorXd& fit_weights,
                                               const Eigen::VectorXd& contrast) {
  return linalg::WeightedLeastSquares(design, fit_weights).functional(contrast);
}

/// Outcome-free description of the regression behind a fit, shared with
/// the estimation module.
struct ModelSpec {
  Eigen::MatrixXd design;         // regressors evaluated at observed treatment
  Eigen::MatrixXd fitted_design;  // regressors used in the normal equations (2SLS: first-stage fits)
  std::vector<std::string> names;
  Eigen::VectorXd fit_weights;
  Eigen::Index params_per_group = 0;  // MRI stacked blocks
};

/// One reported quantity (potential-outcome mean or contrast) as a
/// coefficient combination and as a per-unit linear functional.
struct Quantity {
  std::string label;
  Eigen::VectorXd coefficients;  // c with estimate c'β̂ (empty for AIPW)
  Eigen::VectorXd functional;    // ℓ with estimate ℓ'y
  int active = -1;               // contrasts: groups
  int comparison = -1;
};

struct LmwOptions {
  Method method = Method::uri;
  Estimand estimand = Estimand::ate;
  std::string treat;  // empty: dataset role or first formula variable
  std::optional<std::string> focal;
  std::optional<std::pair<std::string, std::string>> contrast;
  std::optional<std::string> base_weights;
  std::optional<std::string> sampling_weights;
  DrMethod dr_method = DrMethod::wls;
};

/// Implied-weights fit: weights, groups, target, and the outcome-free model.
struct LmwFit {
  Method method = Method::uri;
  Estimand estimand = Estimand::ate;
  DrMethod dr_method = DrMethod::wls;
  std::shared_ptr<const Dataset> data;
  Formula formula;
  Formula covariate_formula;
  std::string treatment;
  std::vector<std::string> levels;
  std::vector<int> level_of;
  std::optional<int> focal;
  std::optional<std::pair<int, int>> contrast;
  int treated_level = -1;  // binary designs
  std::optional<std::string> base_weights_name;
  std::optional<std::string> sampling_weights_name;
  Eigen::VectorXd base_weights;
  Eigen::VectorXd sampling_weights;
  DesignMatrix covariates;  // intercept + covariates, aliased
  WeightVector weights;
  TargetProfile target;
  std::vector<Quantity> contrasts;
  std::vector<Quantity> po_means;  // MRI only
  ModelSpec model;
  std::optional<std::string> instrument;
  std::optional<Formula> iv_formula;
  double first_stage_t = 0;  // |t| of the instrument in the first stage

  bool multi_valued() const { return levels.size() > 2; }
  std::size_t n() const { return level_of.size(); }

  Eigen::VectorXd fit_weights() const { return base_weights.cwiseProduct(sampling_weights); }

  /// Covariate block without the intercept column.
  Eigen::MatrixXd covariate_block() const {
    return covariates.matrix.rightCols(covariates.cols() - (covariates.has_intercept ? 1 : 0));
  }

  /// Units with positive fitting weight.
  std::size_t n_positive() const {
    const Eigen::VectorXd w = model.fit_weights;
    return static_cast<std::size_t>((w.array() > 0).count());
  }
};

namespace detail {

inline Eigen::VectorXd column_or_ones(const Dataset& ds, const std::optional<std::string>& name) {
  const auto n = static_cast<Eigen::Index>(ds.n_rows());
  if (!name) return Eigen::VectorXd::Ones(n);
  const Column& c = ds.column(*name);
  if (!c.is_numeric()) throw Error(ErrorCode::invalid_role, "weights column must be numeric");
  return Eigen::Map<const Eigen::VectorXd>(c.values().data(), n);
}

inline int level_index(const std::vector<std::string>& levels, const std::string& label,
                       const char* what) {
  auto it = std::find(levels.begin(), levels.end(), label);
  if (it == levels.end()) {
    throw Error(ErrorCode::invalid_argument,
                std::string(what) + " level '" + label + "' is not a treatment level");
  }
  return static_cast<int>(it - levels.begin());
}

/// Mean of the design rows over `members`, weighted by `w`.
inline Eigen::VectorXd weighted_row_mean(const Eigen::MatrixXd& d, const Eigen::VectorXd& w,
                                         const std::vector<bool>& members) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d.cols());
  double total = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (!members[i]) continue;
    acc += w[i] * d.row(i).transpose();
    total += w[i];
  }
  if (total <= 0) throw Error(ErrorCode::singular, "target population has zero total weight");
  return acc / total;
}

inline std::string po_label(const std::string& level, const std::optional<std::string>& focal) {
  std::string s = "E[Y" + level + "]";
  if (focal) s = "E[Y" + level + "|A=" + *focal + "]";
  return s;
}

inline std::string contrast_label(const std::string& a, const std::string& b,
                                  const std::optional<std::string>& focal) {
  std::string s = "E[Y" + a + "-Y" + b;
  return s + (focal ? "|A=" + *focal + "]" : "]");
}

/// Shared validation and setup for lmw() and lmw_iv().
inline LmwFit prepare_fit(const Formula& formula, std::shared_ptr<const Dataset> data,
                          const LmwOptions& opt) {
  LmwFit fit;
  fit.method = opt.method;
  fit.estimand = opt.estimand;
  fit.dr_method = opt.dr_method;
  fit.formula = formula;

  std::string treat = opt.treat;
  if (treat.empty()) treat = data->roles().treatment;
  if (treat.empty()) {
    auto vars = formula.variables();
    if (vars.empty()) throw Error(ErrorCode::invalid_argument, "no treatment variable given");
    treat = vars.front();
  }
  for (const auto& t : formula.terms()) {
    if (t.contains(treat) && (t.degree() > 1 || t.factors.front().transform != Transform::none)) {
      throw Error(ErrorCode::formula,
                  "treatment '" + treat + "' may only appear as a main effect");
    }
  }
  if (data->roles().treatment != treat || opt.base_weights || opt.sampling_weights) {
    Roles roles = data->roles();
    roles.treatment = treat;
    if (opt.base_weights) roles.base_weights = opt.base_weights;
    if (opt.sampling_weights) roles.sampling_weights = opt.sampling_weights;
    data = std::make_shared<const Dataset>(data->with_roles(roles));
  }
  fit.data = data;
  fit.treatment = treat;
  const Column& tc = data->treatment();
  fit.levels = tc.levels();
  fit.level_of = tc.codes();

  fit.base_weights_name = opt.base_weights ? opt.base_weights : data->roles().base_weights;
  fit.sampling_weights_name =
      opt.sampling_weights ? opt.sampling_weights : data->roles().sampling_weights;
  fit.base_weights = column_or_ones(*data, fit.base_weights_name);
  fit.sampling_weights = column_or_ones(*data, fit.sampling_weights_name);
  for (Eigen::Index i = 0; i < fit.sampling_weights.size(); ++i) {
    if (!std::isfinite(fit.sampling_weights[i]) || fit.sampling_weights[i] < 0) {
      throw Error(ErrorCode::invalid_role, "sampling weights must be finite and nonnegative");
    }
  }

  if (opt.focal && opt.estimand != Estimand::att) {
    throw Error(ErrorCode::invalid_argument, "focal requires estimand ATT");
  }
  if (opt.dr_method == DrMethod::aipw) {
    if (!fit.base_weights_name) {
      throw Error(ErrorCode::invalid_argument, "AIPW requires base weights");
    }
    if (opt.method != Method::mri) {
      throw Error(ErrorCode::invalid_argument, "AIPW is available with MRI only");
    }
  }
  const bool multi = fit.levels.size() > 2;
  if (opt.contrast) {
    if (!multi || opt.method != Method::uri) {
      throw Error(ErrorCode::invalid_argument,
                  "contrast applies to multi-valued treatments with URI only");
    }
    const int a = level_index(fit.levels, opt.contrast->first, "contrast");
    const int b = level_index(fit.levels, opt.contrast->second, "contrast");
    if (a == b) throw Error(ErrorCode::invalid_argument, "contrast levels must differ");
    fit.contrast = {a, b};
  } else if (multi && opt.method == Method::uri) {
    throw Error(ErrorCode::invalid_argument, "URI with a multi-valued treatment needs a contrast");
  }
  if (opt.focal) {
    fit.focal = level_index(fit.levels, *opt.focal, "focal");
  } else if (opt.estimand == Estimand::att) {
    if (multi) throw Error(ErrorCode::invalid_argument, "ATT with a multi-valued treatment needs focal");
  }
  if (!multi) {
    // The second level is treated ("1" for 0/1 coding) unless focal says otherwise.
    fit.treated_level = fit.focal ? *fit.focal : 1;
    if (opt.estimand == Estimand::att) fit.focal = fit.treated_level;
  }

  fit.covariate_formula = formula.without(treat);
  fit.covariates = build_design(fit.covariate_formula, *data, true);
  return fit;
}

/// Target covariate profile (with leading intercept entry) from sampling
/// weights over the estimand's target population.
inline Eigen::VectorXd estimand_target(const LmwFit& fit) {
  std::vector<bool> members(fit.n(), true);
  if (fit.estimand == Estimand::att) {
    for (std::size_t i = 0; i < fit.n(); ++i) members[i] = fit.level_of[i] == *fit.focal;
  }
  return weighted_row_mean(fit.covariates.matrix, fit.sampling_weights, members);
}

inline TargetProfile profile_from(const LmwFit& fit, const Eigen::VectorXd& with_intercept,
                                  ProfileSource source) {
  TargetProfile p;
  p.source = source;
  const Eigen::Index off = fit.covariates.has_intercept ? 1 : 0;
  p.values = with_intercept.tail(with_intercept.size() - off);
  p.names.assign(fit.covariates.names.begin() + off, fit.covariates.names.end());
  return p;
}

inline std::optional<std::string> focal_label(const LmwFit& fit) {
  if (fit.estimand != Estimand::att || !fit.focal) return std::nullopt;
  return fit.levels[*fit.focal];
}

/// Group assignment for binary designs and URI contrasts: group 1 is the
/// active (treated) side, group 0 the comparison side.
inline void two_group_layout(LmwFit& fit, int active_level, int comparison_level,
                             bool rest_is_comparison) {
  const auto n = fit.n();
  fit.weights.group.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int l = fit.level_of[i];
    if (l == active_level) {
      fit.weights.group[i] = 1;
    } else if (l == comparison_level || rest_is_comparison) {
      fit.weights.group[i] = 0;
    }
  }
  if (fit.multi_valued()) {
    fit.weights.group_labels = {fit.levels[comparison_level], fit.levels[active_level]};
  } else {
    fit.weights.group_labels = {"Control", "Treated"};
  }
}

inline void fit_uri(LmwFit& fit) {
  const auto n = static_cast<Eigen::Index>(fit.n());
  const Eigen::MatrixXd x = fit.covariate_block();
  const int n_levels = static_cast<int>(fit.levels.size());
  // Reference level: control for binary, first level otherwise.
  const int reference = fit.multi_valued() ? 0 : 1 - fit.treated_level;
  std::vector<int> dummy_levels;
  for (int l = 0; l < n_levels; ++l) {
    if (l != reference) dummy_levels.push_back(l);
  }
  const auto n_dummies = static_cast<Eigen::Index>(dummy_levels.size());
  Eigen::MatrixXd d(n, 1 + n_dummies + x.cols());
  d.col(0).setOnes();
  std::vector<std::string> names = {"(Intercept)"};
  for (Eigen::Index k = 0; k < n_dummies; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      d(i, 1 + k) = fit.level_of[i] == dummy_levels[k] ? 1.0 : 0.0;
    }
    names.push_back(fit.treatment + fit.levels[dummy_levels[k]]);
  }
  d.rightCols(x.cols()) = x;
  for (Eigen::Index j = 1; j < fit.covariates.cols(); ++j) names.push_back(fit.covariates.names[j]);

  int active = fit.treated_level;
  int comparison = reference;
  if (fit.contrast) std::tie(active, comparison) = *fit.contrast;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(d.cols());
  auto coef_of = [&](int level) -> Eigen::Index {
    auto it = std::find(dummy_levels.begin(), dummy_levels.end(), level);
    return it == dummy_levels.end() ? -1 : 1 + (it - dummy_levels.begin());
  };
  if (coef_of(active) >= 0) c[coef_of(active)] += 1;
  if (coef_of(comparison) >= 0) c[coef_of(comparison)] -= 1;

  fit.model.design = d;
  fit.model.fitted_design = d;
  fit.model.names = names;
  fit.model.fit_weights = fit.fit_weights();
  const linalg::WeightedLeastSquares wls(d, fit.model.fit_weights, "URI design");
  const Eigen::VectorXd ell = wls.functional(c);

  two_group_layout(fit, active, comparison, true);
  fit.weights.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.weights.weights[i] = fit.weights.group[i] == 1 ? ell[i] : -ell[i];
  }
  Quantity q;
  q.label = contrast_label(fit.levels[active], fit.levels[comparison], focal_label(fit));
  q.coefficients = c;
  q.functional = ell;
  q.active = 1;
  q.comparison = 0;
  fit.contrasts = {q};

  std::vector<bool> active_members(fit.n());
  for (std::size_t i = 0; i < fit.n(); ++i) active_members[i] = fit.weights.group[i] == 1;
  Eigen::VectorXd implied = Eigen::VectorXd::Zero(fit.covariates.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (active_members[i]) implied += fit.weights.weights[i] * fit.covariates.matrix.row(i).transpose();
  }
  fit.target = profile_from(fit, implied, ProfileSource::uri_implied);
}

inline void fit_mri(LmwFit& fit) {
  const auto n = static_cast<Eigen::Index>(fit.n());
  const Eigen::MatrixXd& x = fit.covariates.matrix;
  const Eigen::Index p = x.cols();
  const auto g_count = static_cast<Eigen::Index>(fit.levels.size());
  const Eigen::VectorXd target = estimand_target(fit);

  // Fully interacted design: unit i carries its covariates in its group's block.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, g_count * p);
  for (Eigen::Index i = 0; i < n; ++i) z.block(i, fit.level_of[i] * p, 1, p) = x.row(i);
  std::vector<std::string> names;
  for (Eigen::Index g = 0; g < g_count; ++g) {
    for (const auto& nm : fit.covariates.names) {
      names.push_back(fit.treatment + fit.levels[g] + ":" + nm);
    }
  }
  const bool aipw = fit.dr_method == DrMethod::aipw;
  fit.model.design = z;
  fit.model.fitted_design = z;
  fit.model.names = names;
  fit.model.params_per_group = p;
  fit.model.fit_weights = aipw ? fit.sampling_weights : fit.fit_weights();
  const linalg::WeightedLeastSquares wls(z, fit.model.fit_weights, "MRI group design");

  // Groups follow level order, except binary designs where group 1 is treated.
  std::vector<int> group_of_level(g_count);
  for (Eigen::Index g = 0; g < g_count; ++g) {
    group_of_level[g] = fit.multi_valued() ? static_cast<int>(g) : (g == fit.treated_level ? 1 : 0);
  }
  std::vector<int> level_of_group(g_count);
  for (Eigen::Index g = 0; g < g_count; ++g) level_of_group[group_of_level[g]] = static_cast<int>(g);
  fit.weights.weights = Eigen::VectorXd::Zero(n);
  fit.weights.group.resize(fit.n());
  for (std::size_t i = 0; i < fit.n(); ++i) fit.weights.group[i] = group_of_level[fit.level_of[i]];
  if (fit.multi_valued()) {
    fit.weights.group_labels = fit.levels;
  } else {
    fit.weights.group_labels = {"Control", "Treated"};
  }
  const auto focal = focal_label(fit);
  fit.po_means.clear();
  const Eigen::VectorXd bw = fit.fit_weights();
  for (Eigen::Index grp = 0; grp < g_count; ++grp) {
    const int g = level_of_group[grp];
    Quantity q;
    q.label = po_label(fit.levels[g], focal);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(g_count * p);
    c.segment(g * p, p) = target;
    q.coefficients = c;
    std::vector<bool> members(fit.n());
    for (std::size_t i = 0; i < fit.n(); ++i) members[i] = fit.level_of[i] == g;
    if (!aipw) {
      q.functional = wls.functional(c);
    } else {
      // Base-weight-normalized residual correction around the imputed mean.
      const Eigen::VectorXd base_mean = weighted_row_mean(x, bw, members);
      Eigen::VectorXd shift = Eigen::VectorXd::Zero(g_count * p);
      shift.segment(g * p, p) = target - base_mean;
      q.functional = wls.functional(shift);
      double total = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (members[i]) total += bw[i];
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        if (members[i]) q.functional[i] += bw[i] / total;
      }
      q.coefficients.resize(0);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (members[i]) fit.weights.weights[i] = q.functional[i];
    }
    q.active = static_cast<int>(grp);
    fit.po_means.push_back(std::move(q));
  }

  fit.contrasts.clear();
  auto add_contrast = [&](int a, int b) {
    Quantity q;
    q.label = contrast_label(fit.levels[level_of_group[a]], fit.levels[level_of_group[b]], focal);
    if (!aipw) q.coefficients = fit.po_means[a].coefficients - fit.po_means[b].coefficients;
    q.functional = fit.po_means[a].functional - fit.po_means[b].functional;
    q.active = a;
    q.comparison = b;
    fit.contrasts.push_back(std::move(q));
  };
  if (fit.multi_valued()) {
    for (int a = 0; a < g_count; ++a) {
      for (int b = a + 1; b < g_count; ++b) add_contrast(a, b);
    }
  } else {
    add_contrast(1, 0);
  }
  fit.target = profile_from(fit, target,
                            fit.estimand == Estimand::ate ? ProfileSource::overall_mean
                                                          : ProfileSource::focal_mean);
}

}  // namespace detail

/// Computes the implied weights of a URI or MRI regression estimator.
inline LmwFit lmw(const Formula& formula, std::shared_ptr<const Dataset> data,
                  const LmwOptions& opt = {}) {
  LmwFit fit = detail::prepare_fit(formula, std::move(data), opt);
  if (fit.method == Method::uri) {
    detail::fit_uri(fit);
  } else {
    detail::fit_mri(fit);
  }
  return fit;
}

/// Implied weights of two-stage least squares with a binary treatment. The
/// first stage regresses the treatment on covariates and instruments; with
/// MRI, treatment-by-covariate interactions are instrumented by
/// instrument-by-covariate interactions.
inline LmwFit lmw_iv(const Formula& formula, std::shared_ptr<const Dataset> data,
                     const Formula& iv, const LmwOptions& opt = {}) {
  LmwFit fit = detail::prepare_fit(formula, std::move(data), opt);
  if (fit.multi_valued()) {
    throw Error(ErrorCode::invalid_argument, "2SLS requires a binary treatment");
  }
  if (fit.dr_method == DrMethod::aipw) {
    throw Error(ErrorCode::invalid_argument, "AIPW is not available with 2SLS");
  }
  for (const auto& v : iv.variables()) {
    if (v == fit.treatment) throw Error(ErrorCode::formula, "the treatment cannot be an instrument");
  }
  fit.iv_formula = iv;
  fit.instrument = iv.to_string().substr(2);
  const DesignMatrix zd = build_design(iv, *fit.data, false);
  if (zd.cols() == 0) throw Error(ErrorCode::invalid_argument, "no usable instrument columns");

  const auto n = static_cast<Eigen::Index>(fit.n());
  const Eigen::MatrixXd x = fit.covariate_block();
  const Eigen::VectorXd w = fit.fit_weights();
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = fit.level_of[i] == fit.treated_level ? 1.0 : 0.0;

  const Eigen::VectorXd target = detail::estimand_target(fit);
  const Eigen::VectorXd centre = target.tail(x.cols());
  Eigen::MatrixXd endog;
  Eigen::MatrixXd instruments;
  std::vector<std::string> endog_names = {fit.treatment};
  if (fit.method == Method::uri) {
    endog = a;
    instruments = zd.matrix;
  } else {
    const Eigen::MatrixXd xc = x.rowwise() - centre.transpose();
    endog.resize(n, 1 + x.cols());
    endog.col(0) = a;
    endog.rightCols(x.cols()) = xc.array().colwise() * a.array();
    instruments.resize(n, zd.cols() * (1 + x.cols()));
    instruments.leftCols(zd.cols()) = zd.matrix;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index k = 0; k < zd.cols(); ++k) {
        instruments.col(zd.cols() + j * zd.cols() + k) = xc.col(j).cwiseProduct(zd.matrix.col(k));
      }
      endog_names.push_back(fit.treatment + ":" + fit.covariates.names[j + 1]);
    }
  }

  // First stage: [1, X, instruments].
  Eigen::MatrixXd first(n, 1 + x.cols() + instruments.cols());
  first.col(0).setOnes();
  first.middleCols(1, x.cols()) = x;
  first.rightCols(instruments.cols()) = instruments;
  const linalg::WeightedLeastSquares fs(first, w, "first-stage design");
  Eigen::MatrixXd fitted(n, endog.cols());
  for (Eigen::Index j = 0; j < endog.cols(); ++j) {
    fitted.col(j) = first * fs.coefficients(endog.col(j));
  }
  {
    const Eigen::VectorXd ahat = fitted.col(0);
    const double wsum = w.sum();
    const double mean = w.dot(ahat) / wsum;
    const double var = w.dot((ahat.array() - mean).square().matrix()) / wsum;
    if (!(var > 1e-12 * std::max(1.0, mean * mean))) {
      throw Error(ErrorCode::singular, "fitted treatment from the first stage is constant");
    }
    const Eigen::VectorXd coef = fs.coefficients(a);
    const Eigen::VectorXd resid = a - first * coef;
    const double df = static_cast<double>((w.array() > 0).count()) - static_cast<double>(first.cols());
    const double sigma2 = w.dot(resid.cwiseProduct(resid)) / std::max(df, 1.0);
    const Eigen::Index gi = 1 + x.cols();
    const double se = std::sqrt(sigma2 * fs.solve_normal(Eigen::VectorXd::Unit(first.cols(), gi))[gi]);
    fit.first_stage_t = se > 0 ? std::abs(coef[gi] / se) : 0.0;
  }

  // Second stage: [1, A, X, (A·(X − x*))].
  const Eigen::Index p2 = 1 + 1 + x.cols() + (endog.cols() - 1);
  Eigen::MatrixXd observed(n, p2);
  Eigen::MatrixXd predicted(n, p2);
  observed.col(0).setOnes();
  predicted.col(0).setOnes();
  observed.col(1) = endog.col(0);
  predicted.col(1) = fitted.col(0);
  observed.middleCols(2, x.cols()) = x;
  predicted.middleCols(2, x.cols()) = x;
  if (endog.cols() > 1) {
    observed.rightCols(endog.cols() - 1) = endog.rightCols(endog.cols() - 1);
    predicted.rightCols(endog.cols() - 1) = fitted.rightCols(endog.cols() - 1);
  }
  std::vector<std::string> names = {"(Intercept)", fit.treatment};
  for (Eigen::Index j = 1; j < fit.covariates.cols(); ++j) names.push_back(fit.covariates.names[j]);
  for (std::size_t k = 1; k < endog_names.size(); ++k) names.push_back(endog_names[k]);

  fit.model.design = observed;
  fit.model.fitted_design = predicted;
  fit.model.names = names;
  fit.model.fit_weights = w;
  const linalg::WeightedLeastSquares ss(predicted, w, "second-stage design");
  const Eigen::VectorXd c = Eigen::VectorXd::Unit(p2, 1);
  const Eigen::VectorXd ell = ss.functional(c);

  detail::two_group_layout(fit, fit.treated_level, 1 - fit.treated_level, true);
  fit.weights.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.weights.weights[i] = fit.weights.group[i] == 1 ? ell[i] : -ell[i];
  }
  Quantity q;
  q.label = detail::contrast_label(fit.levels[fit.treated_level], fit.levels[1 - fit.treated_level],
                                   detail::focal_label(fit));
  q.coefficients = c;
  q.functional = ell;
  q.active = 1;
  q.comparison = 0;
  fit.contrasts = {q};

  Eigen::VectorXd implied = Eigen::VectorXd::Zero(fit.covariates.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fit.weights.group[i] == 1) {
      implied += fit.weights.weights[i] * fit.covariates.matrix.row(i).transpose();
    }
  }
  fit.target = detail::profile_from(fit, implied, ProfileSource::uri_implied);
  return fit;
}

}  // namespace lmw
