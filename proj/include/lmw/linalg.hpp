#pragma once

#include <string>

#include <Eigen/Dense>

#include "lmw/error.hpp"

namespace lmw::linalg {

/// Relative pivot below which a least-squares system is declared singular.
inline constexpr double kSingularTolerance = 1e-9;

/// Weighted least squares through a column-pivoted QR factorization of
/// sqrt(W)·D with equilibrated columns; never forms an explicit inverse
/// except when a bread matrix is requested.
class WeightedLeastSquares {
 public:
  WeightedLeastSquares(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights,
                       const std::string& what = "design")
      : design_(design), weights_(weights) {
    if (weights.size() != design.rows()) {
      throw Error(ErrorCode::invalid_argument, "weight vector length does not match design");
    }
    if ((weights.array() < 0).any()) {
      throw Error(ErrorCode::invalid_argument, "least-squares weights must be nonnegative");
    }
    sqrt_w_ = weights.array().sqrt();
    Eigen::MatrixXd scaled = sqrt_w_.asDiagonal() * design;
    scale_ = Eigen::VectorXd::Ones(design.cols());
    for (Eigen::Index j = 0; j < design.cols(); ++j) {
      const double norm = scaled.col(j).norm();
      if (norm > 0) scale_[j] = 1.0 / norm;
    }
    scaled = scaled * scale_.asDiagonal();
    qr_.setThreshold(kSingularTolerance);
    qr_.compute(scaled);
    if (qr_.rank() < design.cols()) {
      throw Error(ErrorCode::singular, "singular " + what + " (rank " + std::to_string(qr_.rank()) +
                                           " < " + std::to_string(design.cols()) + ")");
    }
  }

  Eigen::Index rows() const { return design_.rows(); }
  Eigen::Index cols() const { return design_.cols(); }
  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  /// (D'WD)^{-1} c
  Eigen::VectorXd solve_normal(const Eigen::VectorXd& c) const {
    const Eigen::Index p = cols();
    // D'WD = S^{-1} P R'R P' S^{-1}, with S the column equilibration.
    Eigen::VectorXd v = qr_.colsPermutation().transpose() * scale_.cwiseProduct(c);
    const auto r = qr_.matrixQR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    v = r.transpose().solve(v);
    v = r.solve(v);
    return scale_.cwiseProduct(qr_.colsPermutation() * v);
  }

  Eigen::VectorXd coefficients(const Eigen::VectorXd& y) const {
    Eigen::VectorXd wy = sqrt_w_.cwiseProduct(y);
    return scale_.cwiseProduct(qr_.solve(wy));
  }

  /// Per-unit coefficients ℓ with c'β̂ = ℓ'y for every outcome vector y.
  Eigen::VectorXd functional(const Eigen::VectorXd& c) const {
    return weights_.cwiseProduct(design_ * solve_normal(c));
  }

  /// Leverages W_i d_i'(D'WD)^{-1} d_i.
  Eigen::VectorXd hat_values() const {
    const Eigen::Index n = rows();
    const Eigen::Index p = cols();
    Eigen::MatrixXd q = qr_.householderQ() * Eigen::MatrixXd::Identity(n, p);
    return q.rowwise().squaredNorm();
  }

  /// (D'WD)^{-1}
  Eigen::MatrixXd bread() const {
    const Eigen::Index p = cols();
    Eigen::MatrixXd out(p, p);
    for (Eigen::Index j = 0; j < p; ++j) out.col(j) = solve_normal(Eigen::VectorXd::Unit(p, j));
    return 0.5 * (out + out.transpose());
  }

 private:
  Eigen::MatrixXd design_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd sqrt_w_;
  Eigen::VectorXd scale_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

/// Solves a small symmetric system through column-pivoted QR, with the
/// same relative singularity threshold as the least-squares path. The
/// system is equilibrated by its diagonal first so that columns on very
/// different scales (dollars next to indicators) are not flagged singular.
inline Eigen::VectorXd solve_symmetric(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                       const std::string& what) {
  Eigen::VectorXd d(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (!(a(j, j) > 0)) throw Error(ErrorCode::singular, what);
    d[j] = 1.0 / std::sqrt(a(j, j));
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  qr.setThreshold(kSingularTolerance);
  qr.compute(d.asDiagonal() * a * d.asDiagonal());
  if (qr.rank() < a.cols()) throw Error(ErrorCode::singular, what);
  return d.asDiagonal() * qr.solve(d.asDiagonal() * b);
}

}  // namespace lmw::linalg
