#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "lmw/error.hpp"
#include "lmw/linalg.hpp"
#include "lmw/weights.hpp"

namespace lmw {

enum class CovType { classical, hc0, hc1, hc2, hc3, cluster };

inline std::string to_string(CovType t) {
  switch (t) {
    case CovType::classical: return "const";
    case CovType::hc0: return "HC0";
    case CovType::hc1: return "HC1";
    case CovType::hc2: return "HC2";
    case CovType::hc3: return "HC3";
    case CovType::cluster: return "cluster";
  }
  return "?";
}

inline CovType parse_cov_type(const std::string& s) {
  if (s == "const" || s == "classical") return CovType::classical;
  if (s == "HC0") return CovType::hc0;
  if (s == "HC1") return CovType::hc1;
  if (s == "HC2") return CovType::hc2;
  if (s == "HC3") return CovType::hc3;
  throw Error(ErrorCode::invalid_argument, "unknown robust type '" + s + "'");
}

/// Fitted outcome model behind an LmwFit.
struct OutcomeFit {
  std::string outcome;
  std::vector<std::string> names;
  Eigen::VectorXd y;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  Eigen::VectorXd hat_values;
  Eigen::VectorXd fit_weights;
  Eigen::MatrixXd bread;  // (D'WD)^{-1}
  Eigen::MatrixXd vcov;
  CovType type = CovType::hc3;
  std::optional<std::string> cluster;
  std::vector<int> cluster_codes;
  double df = 0;
  double sigma = 0;  // residual standard error
  std::size_t n_positive = 0;

  std::string vcov_label() const {
    switch (type) {
      case CovType::classical: return "standard";
      case CovType::cluster: return "cluster robust (HC1)";
      default: return "robust (" + to_string(type) + ")";
    }
  }
};

namespace detail {

inline double hc_factor(CovType type, double h) {
  switch (type) {
    case CovType::hc2: return 1.0 / (1.0 - h);
    case CovType::hc3: return 1.0 / ((1.0 - h) * (1.0 - h));
    default: return 1.0;
  }
}

inline void check_leverage(CovType type, const Eigen::VectorXd& h, const Eigen::VectorXd& w) {
  if (type != CovType::hc2 && type != CovType::hc3) return;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (w[i] > 0 && h[i] >= 1.0 - 1e-10) {
      throw Error(ErrorCode::leverage, "exact leverage point at unit " + std::to_string(i + 1));
    }
  }
}

inline int count_clusters(const std::vector<int>& clusters, const Eigen::VectorXd& w) {
  std::map<int, bool> seen;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (w[static_cast<Eigen::Index>(i)] > 0) seen[clusters[i]] = true;
  }
  return static_cast<int>(seen.size());
}

}  // namespace detail

/// Sandwich covariance of weighted least-squares coefficients. The design is
/// the one entering the normal equations; residuals may come from another
/// design (2SLS). Cluster type uses the HC1-style small-sample factor
/// (G/(G−1))·((N−1)/(N−K)).
inline Eigen::MatrixXd robust_vcov(const Eigen::MatrixXd& design, const Eigen::VectorXd& residuals,
                                   const Eigen::VectorXd& hat_values,
                                   const Eigen::VectorXd& weights, CovType type,
                                   const std::vector<int>* clusters = nullptr,
                                   const Eigen::MatrixXd* bread_in = nullptr) {
  const Eigen::Index p = design.cols();
  const Eigen::MatrixXd bread =
      bread_in ? *bread_in : linalg::WeightedLeastSquares(design, weights).bread();
  const double n_pos = static_cast<double>((weights.array() > 0).count());
  const double k = static_cast<double>(p);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  if (type == CovType::classical) {
    const double df = n_pos - k;
    if (df <= 0) throw Error(ErrorCode::singular, "no residual degrees of freedom");
    const double sigma2 = weights.dot(residuals.cwiseProduct(residuals)) / df;
    return sigma2 * bread;
  }
  if (type == CovType::cluster) {
    if (!clusters) throw Error(ErrorCode::clusters, "cluster type requires cluster labels");
    const int g = detail::count_clusters(*clusters, weights);
    if (g < 2) throw Error(ErrorCode::clusters, "fewer than two clusters");
    std::map<int, Eigen::VectorXd> scores;
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      if (weights[i] == 0) continue;
      auto [it, fresh] = scores.try_emplace((*clusters)[i], Eigen::VectorXd::Zero(p));
      it->second += weights[i] * residuals[i] * design.row(i).transpose();
    }
    for (const auto& [id, u] : scores) meat.noalias() += u * u.transpose();
    const double gd = static_cast<double>(g);
    meat *= (gd / (gd - 1.0)) * ((n_pos - 1.0) / (n_pos - k));
  } else {
    detail::check_leverage(type, hat_values, weights);
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      if (weights[i] == 0) continue;
      const double s = weights[i] * residuals[i];
      meat.noalias() += (s * s * detail::hc_factor(type, hat_values[i])) *
                        design.row(i).transpose() * design.row(i);
    }
    if (type == CovType::hc1) meat *= n_pos / (n_pos - k);
  }
  Eigen::MatrixXd v = bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

/// Variance of a linear estimator ℓ'y using the same residual-based
/// adjustments as robust_vcov (used for AIPW, whose estimate is not a
/// coefficient combination).
inline double functional_variance(const Eigen::VectorXd& ell, const OutcomeFit& of) {
  const Eigen::VectorXd& e = of.residuals;
  const Eigen::VectorXd& w = of.fit_weights;
  const double n_pos = static_cast<double>(of.n_positive);
  const double k = static_cast<double>(of.coefficients.size());
  double v = 0;
  if (of.type == CovType::classical) {
    for (Eigen::Index i = 0; i < ell.size(); ++i) {
      if (w[i] > 0) v += ell[i] * ell[i] / w[i];
    }
    return of.sigma * of.sigma * v;
  }
  if (of.type == CovType::cluster) {
    std::map<int, double> sums;
    for (Eigen::Index i = 0; i < ell.size(); ++i) sums[of.cluster_codes[i]] += ell[i] * e[i];
    for (const auto& [id, s] : sums) v += s * s;
    const double g = detail::count_clusters(of.cluster_codes, w);
    return v * (g / (g - 1.0)) * ((n_pos - 1.0) / (n_pos - k));
  }
  for (Eigen::Index i = 0; i < ell.size(); ++i) {
    v += ell[i] * ell[i] * e[i] * e[i] * detail::hc_factor(of.type, of.hat_values[i]);
  }
  if (of.type == CovType::hc1) v *= n_pos / (n_pos - k);
  return v;
}

/// Fits the outcome regression implied by the fit. Defaults to HC3, or
/// cluster-robust HC1 when a cluster column is given.
inline OutcomeFit lmw_est(const LmwFit& fit, const std::string& outcome,
                          std::optional<CovType> robust = std::nullopt,
                          std::optional<std::string> cluster = std::nullopt) {
  const Dataset& ds = *fit.data;
  const Column& yc = ds.column(outcome);
  if (!yc.is_numeric()) {
    throw Error(ErrorCode::invalid_argument, "outcome '" + outcome + "' must be numeric");
  }
  const auto n = static_cast<Eigen::Index>(ds.n_rows());
  OutcomeFit of;
  of.outcome = outcome;
  of.names = fit.model.names;
  of.y = Eigen::Map<const Eigen::VectorXd>(yc.values().data(), n);
  of.fit_weights = fit.model.fit_weights;
  of.cluster = cluster;
  of.type = cluster ? CovType::cluster : robust.value_or(CovType::hc3);
  if (of.type == CovType::cluster && !cluster) {
    throw Error(ErrorCode::clusters, "cluster covariance requires a cluster column");
  }
  if (cluster) {
    of.cluster_codes = ds.column(*cluster).as_categorical().codes();
    if (detail::count_clusters(of.cluster_codes, of.fit_weights) < 2) {
      throw Error(ErrorCode::clusters, "cluster variable has fewer than two levels");
    }
  }
  const linalg::WeightedLeastSquares wls(fit.model.fitted_design, of.fit_weights, "outcome design");
  of.coefficients = wls.coefficients(of.y);
  of.residuals = of.y - fit.model.design * of.coefficients;
  of.hat_values = wls.hat_values();
  of.bread = wls.bread();
  of.n_positive = static_cast<std::size_t>((of.fit_weights.array() > 0).count());
  of.df = static_cast<double>(of.n_positive) - static_cast<double>(of.coefficients.size());
  if (of.df <= 0) throw Error(ErrorCode::singular, "no residual degrees of freedom");
  of.sigma = std::sqrt(of.fit_weights.dot(of.residuals.cwiseProduct(of.residuals)) / of.df);
  of.vcov = robust_vcov(fit.model.fitted_design, of.residuals, of.hat_values, of.fit_weights,
                        of.type, cluster ? &of.cluster_codes : nullptr, &of.bread);
  return of;
}

struct EstimateRow {
  std::string label;
  double estimate = 0;
  double se = 0;
  double ci_low = 0;
  double ci_high = 0;
  double t = 0;
  double p = 0;
};

struct EffectReport {
  std::string outcome;
  Method method = Method::uri;
  Estimand estimand = Estimand::ate;
  bool iv = false;
  std::string vcov_label;
  std::vector<EstimateRow> contrasts;
  std::vector<EstimateRow> po_means;  // MRI only
  double sigma = 0;
  double df = 0;
};

/// Two-sided t inference for an estimate with standard error se on df
/// degrees of freedom; CI level 95%.
inline EstimateRow t_inference(std::string label, double estimate, double se, double df) {
  EstimateRow r;
  r.label = std::move(label);
  r.estimate = estimate;
  r.se = se;
  const boost::math::students_t dist(df);
  const double q = boost::math::quantile(dist, 0.975);
  r.ci_low = estimate - q * se;
  r.ci_high = estimate + q * se;
  if (se > 0) {
    r.t = estimate / se;
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  } else {
    r.t = estimate == 0 ? std::numeric_limits<double>::quiet_NaN()
                        : std::copysign(std::numeric_limits<double>::infinity(), estimate);
    r.p = estimate == 0 ? 1.0 : 0.0;
  }
  return r;
}

/// Effect estimates (and MRI potential-outcome means) with robust inference.
/// Potential-outcome means are evaluated at the fixed target profile.
inline EffectReport effect_summary(const OutcomeFit& of, const LmwFit& fit) {
  EffectReport rep;
  rep.outcome = of.outcome;
  rep.method = fit.method;
  rep.estimand = fit.estimand;
  rep.iv = fit.instrument.has_value();
  rep.vcov_label = of.vcov_label();
  rep.sigma = of.sigma;
  rep.df = of.df;
  auto row = [&](const Quantity& q) {
    double est = 0;
    double var = 0;
    if (q.coefficients.size() > 0) {
      est = q.coefficients.dot(of.coefficients);
      var = q.coefficients.dot(of.vcov * q.coefficients);
    } else {
      est = q.functional.dot(of.y);
      var = functional_variance(q.functional, of);
    }
    return t_inference(q.label, est, std::sqrt(std::max(var, 0.0)), of.df);
  };
  for (const auto& q : fit.contrasts) rep.contrasts.push_back(row(q));
  if (!rep.iv) {
    for (const auto& q : fit.po_means) rep.po_means.push_back(row(q));
  }
  return rep;
}

/// Per-unit influence measures for one contrast of the fit.
struct InfluenceSet {
  std::string contrast;
  Eigen::VectorXd hat_values;
  Eigen::VectorXd residuals;
  Eigen::VectorXd sic;
};

/// Sample influence curve SIC_i = (N − 1)·ℓ_i·e_i / (1 − h_ii), where ℓ_i is
/// the signed implied weight and N counts units with positive weight; for
/// least-squares fits this is (N − 1) times the leave-one-out change.
inline InfluenceSet influence(const OutcomeFit& of, const LmwFit& fit, std::size_t contrast = 0) {
  if (contrast >= fit.contrasts.size()) {
    throw Error(ErrorCode::invalid_argument, "contrast index out of range");
  }
  const Eigen::VectorXd& ell = fit.contrasts[contrast].functional;
  InfluenceSet inf;
  inf.contrast = fit.contrasts[contrast].label;
  inf.hat_values = of.hat_values;
  inf.residuals = of.residuals;
  inf.sic = Eigen::VectorXd::Zero(ell.size());
  const double n_eff = static_cast<double>(of.n_positive);
  for (Eigen::Index i = 0; i < ell.size(); ++i) {
    if (of.fit_weights[i] <= 0) continue;
    if (of.hat_values[i] >= 1.0 - 1e-10) {
      throw Error(ErrorCode::leverage, "exact leverage point at unit " + std::to_string(i + 1));
    }
    inf.sic[i] = (n_eff - 1.0) * ell[i] * of.residuals[i] / (1.0 - of.hat_values[i]);
  }
  return inf;
}

}  // namespace lmw
