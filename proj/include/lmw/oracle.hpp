#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmw/error.hpp"
#include "lmw/weights.hpp"

// Brute-force verifiers. Nothing here calls the production solvers.
namespace lmw::oracle {

struct KktSolution {
  Eigen::VectorXd weights;
  Eigen::VectorXd multipliers;  // sum-to-one first, then one per covariate
  double residual = 0;          // ‖K·sol − rhs‖∞ relative to the system scale
};

/// Minimum Σw² subject to Σw = 1 and Σ w_i x_i = target, solved through the
/// explicit KKT system [2I C'; C 0][w; λ] = [0; b].
inline KktSolution min_variance_weights(const Eigen::MatrixXd& x, const Eigen::VectorXd& target) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  if (target.size() != k) throw Error(ErrorCode::invalid_argument, "target length mismatch");
  if (n == 0) throw Error(ErrorCode::infeasible, "empty group");
  const Eigen::Index m = k + 1;
  // Row-equilibrated constraints; the solution set is unchanged.
  Eigen::MatrixXd c(m, n);
  Eigen::VectorXd b(m);
  c.row(0).setOnes();
  b[0] = 1.0;
  c.bottomRows(k) = x.transpose();
  b.tail(k) = target;
  Eigen::VectorXd row_scale(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double s = c.row(r).cwiseAbs().maxCoeff();
    row_scale[r] = s > 0 ? 1.0 / s : 1.0;
  }
  c = row_scale.asDiagonal() * c;
  b = row_scale.cwiseProduct(b);

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n).diagonal().setConstant(2.0);
  kkt.topRightCorner(n, m) = c.transpose();
  kkt.bottomLeftCorner(m, n) = c;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  rhs.tail(m) = b;

  Eigen::VectorXd sol;
  if (n + m <= 800) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + m) {
      throw Error(ErrorCode::infeasible, "constraint matrix is rank deficient");
    }
    sol = lu.solve(rhs);
    sol += lu.solve(rhs - kkt * sol);
  } else {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    sol = lu.solve(rhs);
    sol += lu.solve(rhs - kkt * sol);
  }
  KktSolution out;
  out.weights = sol.head(n);
  out.multipliers = row_scale.cwiseProduct(sol.tail(m));
  const double scale = std::max(1.0, kkt.cwiseAbs().maxCoeff() * sol.cwiseAbs().maxCoeff());
  out.residual = (kkt * sol - rhs).cwiseAbs().maxCoeff() / scale;
  if (!std::isfinite(out.residual) || out.residual > 1e-10) {
    throw Error(ErrorCode::infeasible, "balance constraints are infeasible for this group");
  }
  return out;
}

/// Weighted least squares through explicitly formed normal equations and a
/// fully pivoted LU.
inline Eigen::VectorXd naive_lstsq(const Eigen::MatrixXd& d, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& w) {
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d.cols(), d.cols());
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (w[i] == 0) continue;
    xtx.noalias() += w[i] * d.row(i).transpose() * d.row(i);
    xty.noalias() += w[i] * y[i] * d.row(i).transpose();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
  lu.setThreshold(1e-12);
  if (lu.rank() < d.cols()) throw Error(ErrorCode::singular, "normal equations are singular");
  Eigen::VectorXd beta = lu.solve(xty);
  beta += lu.solve(xty - xtx * beta);
  return beta;
}

inline Eigen::VectorXd naive_lstsq(const Eigen::MatrixXd& d, const Eigen::VectorXd& y) {
  return naive_lstsq(d, y, Eigen::VectorXd::Ones(d.rows()));
}

/// Everything needed to re-estimate one contrast from scratch.
struct FitSpec {
  Method method = Method::uri;
  Eigen::MatrixXd design;      // URI: [1, dummies, X]; MRI: covariates with intercept
  Eigen::VectorXd contrast;    // URI coefficient combination
  std::vector<int> level_of;   // MRI group membership by level
  int active_level = -1;       // MRI
  int comparison_level = -1;   // MRI
  Eigen::VectorXd target;      // MRI fixed target profile with intercept
  Eigen::VectorXd weights;
  Eigen::VectorXd y;
};

/// Builds a FitSpec for URI/MRI fits with the WLS estimator (not 2SLS or AIPW).
inline FitSpec make_fitspec(const LmwFit& fit, const Eigen::VectorXd& y, std::size_t contrast = 0) {
  if (fit.instrument || fit.dr_method == DrMethod::aipw) {
    throw Error(ErrorCode::invalid_argument, "refit oracle covers OLS/WLS fits only");
  }
  FitSpec s;
  s.method = fit.method;
  s.weights = fit.model.fit_weights;
  s.y = y;
  const Quantity& q = fit.contrasts.at(contrast);
  if (fit.method == Method::uri) {
    s.design = fit.model.design;
    s.contrast = q.coefficients;
    return s;
  }
  s.design = fit.covariates.matrix;
  s.level_of = fit.level_of;
  const auto p = fit.model.params_per_group;
  for (Eigen::Index g = 0; g < static_cast<Eigen::Index>(fit.levels.size()); ++g) {
    const Eigen::VectorXd seg = q.coefficients.segment(g * p, p);
    if (seg.cwiseAbs().maxCoeff() == 0) continue;
    // Positive block is the active level.
    if (seg[0] > 0) {
      s.active_level = static_cast<int>(g);
      s.target = seg;
    } else {
      s.comparison_level = static_cast<int>(g);
    }
  }
  return s;
}

/// Effect estimate after removing unit `drop` (if any), refitting every
/// regression from scratch with the target profile held fixed.
inline double loo_refit(const FitSpec& s, std::optional<std::size_t> drop = std::nullopt) {
  const Eigen::Index n = s.design.rows();
  auto keep = [&](Eigen::Index i) { return !drop || static_cast<Eigen::Index>(*drop) != i; };
  try {
    if (s.method == Method::uri) {
      Eigen::VectorXd w = s.weights;
      if (drop) w[static_cast<Eigen::Index>(*drop)] = 0;
      return s.contrast.dot(naive_lstsq(s.design, s.y, w));
    }
    double est = 0;
    for (int level : {s.active_level, s.comparison_level}) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (s.level_of[i] == level && keep(i)) rows.push_back(i);
      }
      Eigen::MatrixXd d(static_cast<Eigen::Index>(rows.size()), s.design.cols());
      Eigen::VectorXd y(d.rows());
      Eigen::VectorXd w(d.rows());
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        d.row(r) = s.design.row(rows[r]);
        y[r] = s.y[rows[r]];
        w[r] = s.weights[rows[r]];
      }
      const double mean = s.target.dot(naive_lstsq(d, y, w));
      est += level == s.active_level ? mean : -mean;
    }
    return est;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::singular) throw;
    throw Error(ErrorCode::singular,
                drop ? "rank collapse after dropping unit " + std::to_string(*drop + 1) : e.what());
  }
}

}  // namespace lmw::oracle
