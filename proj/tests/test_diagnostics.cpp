#include <gtest/gtest.h>

#include "support.hpp"

using namespace lmw;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

LmwOptions opts(Method m, Estimand e) {
  LmwOptions o;
  o.method = m;
  o.estimand = e;
  return o;
}

}  // namespace

TEST(Diagnostics, WeightedSdUnitWeightsIsSampleSd) {
  EXPECT_NEAR(weighted_sd(vec({1, 2, 3, 4}), Eigen::VectorXd::Ones(4), false), std::sqrt(5.0 / 3.0), 1e-14);
  EXPECT_NEAR(weighted_sd(vec({0, 0, 1, 1}), Eigen::VectorXd::Ones(4), true), 0.5, 1e-14);
  EXPECT_NEAR(weighted_sd(vec({2, 2, 4}), Eigen::VectorXd::Ones(3), true), 2 * std::sqrt(2.0) / 3, 1e-14);
  EXPECT_EQ(weighted_sd(vec({5, 5}), Eigen::VectorXd::Ones(2), true), 0.0);
  EXPECT_EQ(weighted_sd(vec({1, 2}), Eigen::VectorXd::Zero(2), false), 0.0);
  EXPECT_EQ(weighted_sd(vec({1, 2}), vec({1, 0}), false), 0.0);
}

TEST(Diagnostics, WeightedSdIsScaleInvariantInWeights) {
  const Eigen::VectorXd x = vec({1, 4, 2, 8, 5});
  const Eigen::VectorXd w = vec({0.1, 0.3, 0.2, 0.25, 0.15});
  EXPECT_NEAR(weighted_sd(x, w, false), weighted_sd(x, 7 * w, false), 1e-13);
}

TEST(Diagnostics, SmdAndDegenerateStandardizer) {
  const Eigen::VectorXd x = vec({1, 3, 2, 6});
  const Eigen::VectorXd wa = vec({1, 1, 0, 0});
  const Eigen::VectorXd wb = vec({0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(smd(x, wa, wb, 2.0).value, -1.0);
  const Stat s = smd(x, wa, wb, 0.0);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.value, 0.0);
  EXPECT_DOUBLE_EQ(target_smd(x, wb, 3.0, 0.5).value, 2.0);
}

TEST(Diagnostics, KsStatistic) {
  EXPECT_DOUBLE_EQ(ks_stat(vec({1, 2, 3, 4}), vec({1, 1, 0, 0}), vec({0, 0, 1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(ks_stat(vec({1, 2, 1, 2}), vec({1, 1, 0, 0}), vec({0, 0, 1, 1})), 0.0);
  // Ties: the gap is only read after all units sharing a value are added.
  EXPECT_DOUBLE_EQ(ks_stat(vec({1, 1, 2, 2}), vec({1, 0, 1, 0}), vec({0, 1, 0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(ks_stat(vec({1, 2, 3}), vec({1, 0, 1}), vec({0, 2, 0})), 0.5);
  EXPECT_DOUBLE_EQ(ks_stat(vec({1, 2}), vec({0, 0}), vec({0, 0})), 0.0);
}

TEST(Diagnostics, EffectiveSampleSize) {
  EXPECT_DOUBLE_EQ(ess(Eigen::VectorXd::Constant(7, 0.3)), 7.0);
  EXPECT_DOUBLE_EQ(ess(vec({1, 0, 0})), 1.0);
  EXPECT_DOUBLE_EQ(ess(vec({1, 1, 2})), 16.0 / 6.0);
  EXPECT_EQ(ess(Eigen::VectorXd::Zero(3)), 0.0);
}

TEST(Diagnostics, UriWeightedSmdIsZeroForModeledRows) {
  const auto d = test::random_design(21, 80, 3);
  const auto fit = lmw::lmw(d.formula, d.data);
  const auto t = balance_summary(fit);
  ASSERT_EQ(t.strata.size(), 2u);
  EXPECT_EQ(t.strata[0].name, "Unweighted");
  EXPECT_EQ(t.strata[1].name, "Weighted");
  EXPECT_TRUE(t.pairwise);
  EXPECT_EQ(t.groups, (std::vector<std::string>{"Control", "Treated"}));
  for (const auto& row : t.strata[1].rows) EXPECT_NEAR(*row.smd, 0.0, 1e-8) << row.name;
  bool any_imbalance = false;
  for (const auto& row : t.strata[0].rows) any_imbalance |= std::abs(*row.smd) > 0.1;
  EXPECT_TRUE(any_imbalance);
  ASSERT_EQ(t.ess.size(), 2u);
  EXPECT_EQ(t.ess[0].name, "All");
  EXPECT_DOUBLE_EQ(t.ess[0].values[0] + t.ess[0].values[1], static_cast<double>(fit.n()));
}

TEST(Diagnostics, AttFocalTsmdIsZeroInEveryStratum) {
  const auto d = test::random_design(22, 80, 3);
  std::vector<double> bw(d.level.size(), 1.0);
  for (std::size_t i = 0; i < bw.size(); i += 3) bw[i] = 2.0;
  const auto ds = std::make_shared<const Dataset>(d.data->with_column("bw", Column::numeric(bw)));
  LmwOptions o = opts(Method::mri, Estimand::att);
  o.base_weights = "bw";
  const auto fit = lmw::lmw(d.formula, ds, o);
  const auto t = balance_summary(fit);
  ASSERT_EQ(t.strata.size(), 3u);
  EXPECT_EQ(t.strata[1].name, "Base weighted");
  EXPECT_EQ(t.ess[1].name, "Base weighted");
  // Unweighted and weighted strata: the treated group is its own target.
  for (std::size_t s : {0u, 2u}) {
    for (const auto& row : t.strata[s].rows) {
      EXPECT_NEAR(row.tsmd[1], 0.0, 1e-8) << row.name;
      EXPECT_NEAR(row.tsmd[0], *row.smd * -1 + row.tsmd[1], 1e-8);
    }
  }
  for (const auto& row : t.strata[2].rows) {
    EXPECT_NEAR(row.tsmd[0], 0.0, 1e-8);
  }
}

TEST(Diagnostics, MultiValuedShowsTargetColumnsOrPair) {
  const auto d = test::random_design(23, 150, 2, 3);
  LmwOptions o = opts(Method::mri, Estimand::att);
  o.focal = "1";
  const auto fit = lmw::lmw(d.formula, d.data, o);
  const auto all = balance_summary(fit);
  EXPECT_FALSE(all.pairwise);
  EXPECT_EQ(all.groups, (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_FALSE(all.strata[0].rows[0].smd.has_value());
  for (const auto& row : all.strata.back().rows) {
    for (double v : row.tsmd) EXPECT_NEAR(v, 0.0, 1e-8);
  }
  const auto pair = balance_summary(fit, nullptr, std::pair<std::string, std::string>{"3", "2"});
  EXPECT_TRUE(pair.pairwise);
  EXPECT_EQ(pair.groups, (std::vector<std::string>{"2", "3"}));
  for (std::size_t j = 0; j < pair.row_names.size(); ++j) {
    const auto& row = pair.strata[0].rows[j];
    EXPECT_NEAR(*row.smd, row.tsmd[1] - row.tsmd[0], 1e-12);
  }
  EXPECT_THROW(balance_summary(fit, nullptr, std::pair<std::string, std::string>{"3", "3"}), Error);
  const auto bin = test::random_design(23, 60, 2);
  const auto bfit = lmw::lmw(bin.formula, bin.data);
  EXPECT_THROW(balance_summary(bfit, nullptr, std::pair<std::string, std::string>{"1", "0"}), Error);
}

TEST(Diagnostics, AdditionalVariablesAppear) {
  const auto d = test::random_design(24, 60, 3);
  const auto fit = lmw::lmw(parse_formula("~ a + x1 + x2"), d.data);
  const Formula addl = parse_formula("~ x3");
  const auto t = balance_summary(fit, &addl);
  EXPECT_EQ(t.row_names.back(), "x3");
  EXPECT_GT(std::abs(*t.strata[1].rows.back().smd), 1e-6);
}

TEST(Diagnostics, MriDistributionMeansHitTarget) {
  const auto d = test::random_design(25, 90, 3);
  for (auto e : {Estimand::ate, Estimand::att}) {
    const auto fit = lmw::lmw(d.formula, d.data, opts(Method::mri, e));
    const auto ds = distribution_summary(fit);
    ASSERT_EQ(ds.strata.size(), 2u);
    EXPECT_EQ(ds.strata[0].reference, "Overall");
    EXPECT_EQ(ds.strata[1].reference, "Target");
    for (std::size_t j = 0; j < ds.strata[1].rows.size(); ++j) {
      const auto& row = ds.strata[1].rows[j];
      EXPECT_NEAR(row.target_mean, fit.target.values[static_cast<Eigen::Index>(j)], 1e-10);
      for (double m : row.mean) EXPECT_NEAR(m, row.target_mean, 1e-8 * std::max(1.0, row.target_sd));
    }
    const auto& first = ds.strata[0].rows[0];
    EXPECT_NEAR(first.target_mean, d.x.col(0).mean(), 1e-12);
  }
}

TEST(Diagnostics, SilvermanBandwidthAndDensity) {
  std::vector<double> x(10);
  std::iota(x.begin(), x.end(), 1.0);
  const double sd = std::sqrt(55.0 / 6.0);
  EXPECT_NEAR(detail::silverman_bandwidth(x), 0.9 * sd * std::pow(10.0, -0.2), 1e-12);
  const auto [grid, dens] = kernel_density(x, 1.0, 2001);
  double area = 0;
  for (std::size_t k = 1; k < grid.size(); ++k) area += 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]);
  EXPECT_NEAR(area, 1.0, 1e-2);
  EXPECT_NEAR(grid.front(), -2.0, 1e-12);
  EXPECT_NEAR(grid.back(), 13.0, 1e-12);
}

TEST(Diagnostics, WeightsPlotPanels) {
  const auto d = test::random_design(26, 80, 3);
  const auto fit = lmw::lmw(d.formula, d.data);
  const auto plot = weights_plot(fit);
  ASSERT_EQ(plot.panels.size(), 2u);
  for (const auto& p : plot.panels) {
    const double sum = std::accumulate(p.rug.begin(), p.rug.end(), 0.0);
    EXPECT_NEAR(sum, 1.0, 1e-10);
    EXPECT_DOUBLE_EQ(p.mean_line, 1.0 / static_cast<double>(p.rug.size()));
    EXPECT_GE(p.negative_fraction, 0.0);
    EXPECT_EQ(p.grid.size(), 512u);
  }
}

TEST(Diagnostics, ExtrapolationPlotMeansMatchTarget) {
  const auto d = test::random_design(27, 80, 2);
  const auto fit = lmw::lmw(d.formula, d.data, opts(Method::mri, Estimand::att));
  const Formula vars = parse_formula("~ x1 + x2");
  const auto plot = std::get<ExtrapolationPlot>(plot_data(fit, PlotType::extrapolation, &vars));
  ASSERT_EQ(plot.panels.size(), 2u);
  for (const auto& p : plot.panels) {
    for (double m : p.group_mean) EXPECT_NEAR(m, p.target, 1e-8);
    EXPECT_EQ(p.value.size(), fit.n());
  }
  EXPECT_THROW(plot_data(fit, PlotType::extrapolation), Error);
  EXPECT_THROW(plot_data(fit, PlotType::influence), Error);
}

TEST(Diagnostics, InfluencePlotFlagsTopK) {
  InfluenceSet inf;
  inf.contrast = "E[Y1-Y0]";
  inf.sic = vec({0.5, -3, 2, 3, 1});
  const auto p = influence_plot(inf, 2);
  EXPECT_EQ(p.top, (std::vector<bool>{false, true, false, true, false}));
  EXPECT_EQ(p.id.front(), 1u);
  const auto tie = influence_plot(inf, 1);
  EXPECT_TRUE(tie.top[1]);
  EXPECT_FALSE(tie.top[3]);
  EXPECT_EQ(influence_plot(inf, 10).k, 5u);
}

TEST(Diagnostics, PlotTypeParsing) {
  EXPECT_EQ(parse_plot_type("weights"), PlotType::weights);
  EXPECT_EQ(to_string(PlotType::influence), "influence");
  EXPECT_THROW(parse_plot_type("histogram"), Error);
}
