#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmw/dataset.hpp"
#include "lmw/error.hpp"
#include "lmw/linalg.hpp"

namespace lmw {

struct PropensityFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd scores;
  int iterations = 0;
  bool converged = false;
};

/// Logistic regression by iteratively reweighted least squares. `x` should
/// carry its own intercept column.
inline PropensityFit fit_propensity(const Eigen::MatrixXd& x, const std::vector<bool>& treated,
                                    double tol = 1e-10, int max_iter = 50) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != treated.size()) {
    throw Error(ErrorCode::invalid_argument, "treatment length does not match design");
  }
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = treated[i] ? 1.0 : 0.0;
  if (a.sum() == 0 || a.sum() == static_cast<double>(n)) {
    throw Error(ErrorCode::single_level, "propensity model needs both treatment groups");
  }
  PropensityFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(x.cols());
  for (fit.iterations = 1; fit.iterations <= max_iter; ++fit.iterations) {
    const Eigen::VectorXd eta = x * fit.coefficients;
    Eigen::VectorXd mu(n);
    Eigen::VectorXd w(n);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = 1.0 / (1.0 + std::exp(-eta[i]));
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-300);
      z[i] = eta[i] + (a[i] - mu[i]) / w[i];
    }
    Eigen::VectorXd next;
    try {
      next = linalg::WeightedLeastSquares(x, w, "propensity design").coefficients(z);
    } catch (const Error& e) {
      // Fitted probabilities collapsing to 0/1 drive the IRLS weights to zero.
      if (e.code() != ErrorCode::singular || fit.iterations == 1) throw;
      throw Error(ErrorCode::separation, "propensity model diverged at iteration " +
                                             std::to_string(fit.iterations) +
                                             "; treatment is separated by the covariates");
    }
    const double change = (next - fit.coefficients).cwiseAbs().maxCoeff();
    fit.coefficients = next;
    if (!fit.coefficients.allFinite() || fit.coefficients.cwiseAbs().maxCoeff() > 1e3) {
      throw Error(ErrorCode::separation,
                  "propensity model diverged (|coefficient| > 1e3 at iteration " +
                      std::to_string(fit.iterations) + "); treatment is separated by the covariates");
    }
    if (change < tol) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = std::min(fit.iterations, max_iter);
  const Eigen::VectorXd eta = x * fit.coefficients;
  fit.scores = (1.0 + (-eta.array()).exp()).inverse().matrix();
  return fit;
}

struct MatchResult {
  Eigen::VectorXd base_weights;                           // 1 for matched units, else 0
  std::vector<int> subclass;                              // pair number from 1; 0 if unmatched
  std::vector<std::pair<std::size_t, std::size_t>> log;   // (treated row, control row), in match order

  std::size_t matched() const { return 2 * log.size(); }
};

/// Greedy 1:1 nearest-neighbour matching without replacement. Treated units
/// go in descending score order; ties in score or distance go to the lower row.
inline MatchResult nn_match(const Eigen::VectorXd& scores, const std::vector<bool>& treated) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (treated.size() != n) throw Error(ErrorCode::invalid_argument, "treatment length mismatch");
  std::vector<std::size_t> t_rows;
  std::vector<std::size_t> c_rows;
  for (std::size_t i = 0; i < n; ++i) (treated[i] ? t_rows : c_rows).push_back(i);
  if (c_rows.size() < t_rows.size()) {
    throw Error(ErrorCode::matching, "fewer controls (" + std::to_string(c_rows.size()) +
                                         ") than treated units (" + std::to_string(t_rows.size()) + ")");
  }
  std::stable_sort(t_rows.begin(), t_rows.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  MatchResult m;
  m.base_weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  m.subclass.assign(n, 0);
  std::vector<bool> used(c_rows.size(), false);
  int pair = 0;
  for (std::size_t t : t_rows) {
    const double st = scores[static_cast<Eigen::Index>(t)];
    std::size_t best = c_rows.size();
    double best_d = 0;
    for (std::size_t k = 0; k < c_rows.size(); ++k) {
      if (used[k]) continue;
      const double d = std::abs(scores[static_cast<Eigen::Index>(c_rows[k])] - st);
      if (best == c_rows.size() || d < best_d) {
        best = k;
        best_d = d;
      }
    }
    used[best] = true;
    ++pair;
    const std::size_t c = c_rows[best];
    m.base_weights[static_cast<Eigen::Index>(t)] = 1;
    m.base_weights[static_cast<Eigen::Index>(c)] = 1;
    m.subclass[t] = pair;
    m.subclass[c] = pair;
    m.log.emplace_back(t, c);
  }
  return m;
}

/// Uniform doubles in [0, 1) from a 64-bit Mersenne twister, built from the
/// top 53 bits so the stream is identical on every platform.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : gen_(seed) {}
  double next() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

/// Logit model on standardized covariates: intercept + Σ coef·z(var) +
/// treated_shift·1(treated). The shift applies to the raw indicator.
struct LogitModel {
  double intercept = 0;
  std::vector<std::pair<std::string, double>> terms;
  double treated_shift = 0;
};

inline LogitModel multilevel_model() {
  return {1.0, {{"age", -1.0}, {"education", 1.2}, {"black", -1.0}, {"re75", 1.2}}, 0.0};
}

inline LogitModel instrument_model() {
  return {1.0,
          {{"age", -1.0}, {"education", 0.5}, {"hispanic", -0.5}, {"black", 0.8}, {"re74", 0.8}},
          3.0};
}

namespace detail {

/// A numeric covariate, or the indicator of a level of some categorical
/// column (e.g. "black" from race).
inline std::vector<double> covariate_values(const Dataset& ds, const std::string& name) {
  if (ds.has(name)) {
    const Column& c = ds.column(name);
    if (c.is_numeric()) return c.values();
  }
  for (const auto& col_name : ds.names()) {
    const Column& c = ds.column(col_name);
    if (c.is_numeric() || col_name == ds.roles().treatment) continue;
    const auto& lv = c.levels();
    const auto it = std::find(lv.begin(), lv.end(), name);
    if (it == lv.end()) continue;
    const int code = static_cast<int>(it - lv.begin());
    std::vector<double> out(ds.n_rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.codes()[i] == code ? 1.0 : 0.0;
    return out;
  }
  throw Error(ErrorCode::unknown_column, "covariate '" + name + "' not found");
}

inline std::vector<bool> treated_flags(const Dataset& ds) {
  const Column& t = ds.treatment();
  if (t.levels().size() != 2) {
    throw Error(ErrorCode::invalid_argument, "generators need a binary treatment");
  }
  std::vector<bool> out(ds.n_rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.codes()[i] == 1;
  return out;
}

/// Linear predictor with covariates standardized over `members`.
inline std::vector<double> linear_predictor(const Dataset& ds, const LogitModel& model,
                                            const std::vector<bool>& members,
                                            const std::vector<bool>& treated) {
  const std::size_t n = ds.n_rows();
  std::vector<double> eta(n, model.intercept);
  for (const auto& [name, coef] : model.terms) {
    const auto x = covariate_values(ds, name);
    double m = 0;
    double cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (members[i]) {
        m += x[i];
        cnt += 1;
      }
    }
    m /= cnt;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (members[i]) ss += (x[i] - m) * (x[i] - m);
    }
    const double sd = cnt > 1 ? std::sqrt(ss / (cnt - 1)) : 0;
    if (coef == 0) continue;
    if (!(sd > 0)) throw Error(ErrorCode::invalid_argument, "covariate '" + name + "' is constant");
    for (std::size_t i = 0; i < n; ++i) eta[i] += coef * (x[i] - m) / sd;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (treated[i]) eta[i] += model.treated_shift;
  }
  return eta;
}

inline double logistic(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace detail

/// Three-level treatment: treated units become "1"; each control becomes "3"
/// with the model's probability and "2" otherwise, with covariates
/// standardized over the controls.
inline Column generate_multilevel(const Dataset& ds, std::uint64_t seed,
                                  const LogitModel& model = multilevel_model()) {
  const auto treated = detail::treated_flags(ds);
  std::vector<bool> controls(treated.size());
  for (std::size_t i = 0; i < treated.size(); ++i) controls[i] = !treated[i];
  const auto eta = detail::linear_predictor(ds, model, controls, treated);
  UniformStream rng(seed);
  std::vector<std::string> labels(ds.n_rows());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (treated[i]) {
      labels[i] = "1";
      continue;
    }
    labels[i] = rng.next() < detail::logistic(eta[i]) ? "3" : "2";
  }
  return Column::from_labels(labels, {"1", "2", "3"});
}

/// Probability of the binary instrument for every unit (covariates
/// standardized over the full sample).
inline std::vector<double> instrument_probabilities(const Dataset& ds,
                                                    const LogitModel& model = instrument_model()) {
  const auto treated = detail::treated_flags(ds);
  const auto eta = detail::linear_predictor(ds, model, std::vector<bool>(ds.n_rows(), true), treated);
  std::vector<double> p(eta.size());
  std::transform(eta.begin(), eta.end(), p.begin(), detail::logistic);
  return p;
}

inline Column generate_instrument(const Dataset& ds, std::uint64_t seed,
                                  const LogitModel& model = instrument_model()) {
  const auto p = instrument_probabilities(ds, model);
  UniformStream rng(seed);
  std::vector<double> z(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) z[i] = rng.next() < p[i] ? 1.0 : 0.0;
  return Column::numeric(std::move(z));
}

}  // namespace lmw
