#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmw/lmw.hpp"

namespace lmw::test {

inline std::string data_path(const std::string& file) { return std::string(LMW_DATA_DIR) + "/" + file; }

inline std::shared_ptr<const Dataset> lalonde() {
  static const auto ds = std::make_shared<const Dataset>(load_csv(data_path("lalonde.csv"), {}, Roles{"treat"}));
  return ds;
}

inline const char* kLalondeFormula = "~ treat + age + education + married + race + nodegree + re74 + re75";

/// Random numeric covariates x1..xk and a treatment with `levels` levels
/// ("0"/"1" when binary, "1".."L" otherwise). Every group gets at least
/// k + 3 units; group means are shifted so the design is unbalanced.
struct RandomDesign {
  std::shared_ptr<const Dataset> data;
  Formula formula;
  Eigen::MatrixXd x;
  std::vector<int> level;
};

inline RandomDesign random_design(std::uint64_t seed, int n, int k, int levels = 2) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const int min_group = k + 3;
  n = std::max(n, levels * min_group);
  RandomDesign d;
  d.level.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    d.level[static_cast<std::size_t>(i)] =
        i < levels * min_group ? i % levels : static_cast<int>(unif(gen) * levels) % levels;
  }
  d.x.resize(n, k);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      d.x(i, j) = normal(gen) + 0.7 * d.level[static_cast<std::size_t>(i)] * (j % 2 == 0 ? 1 : -1) + 3.0 * j;
    }
  }
  std::vector<std::pair<std::string, Column>> cols;
  std::vector<std::string> labels;
  for (int l : d.level) labels.push_back(levels == 2 ? std::to_string(l) : std::to_string(l + 1));
  cols.emplace_back("a", Column::from_labels(labels));
  std::string f = "~ a";
  for (int j = 0; j < k; ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    cols.emplace_back(name, Column::numeric(std::vector<double>(d.x.col(j).data(), d.x.col(j).data() + n)));
    f += " + " + name;
  }
  std::vector<double> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = normal(gen);
  cols.emplace_back("y", Column::numeric(y));
  d.data = std::make_shared<const Dataset>(Dataset(std::move(cols), Roles{"a"}));
  d.formula = parse_formula(f);
  return d;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& gen, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(gen);
  return v;
}

inline std::vector<bool> treated_of(const LmwFit& fit) {
  std::vector<bool> t(fit.n());
  for (std::size_t i = 0; i < fit.n(); ++i) t[i] = fit.weights.group[i] == 1;
  return t;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace lmw::test
