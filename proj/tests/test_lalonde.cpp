#include <gtest/gtest.h>

#include <array>

#include "support.hpp"

using namespace lmw;

namespace {

constexpr double kRound3 = 5e-4 + 1e-9;

LmwFit lalonde_fit(Method m, Estimand e) {
  LmwOptions o;
  o.method = m;
  o.estimand = e;
  return lmw::lmw(parse_formula(test::kLalondeFormula), test::lalonde(), o);
}

const std::vector<std::string> kRows = {"age",       "education", "married", "raceblack", "racehispanic",
                                        "racewhite", "nodegree",  "re74",    "re75"};

// SMD, TSMD Control, TSMD Treated, KS, TKS Control, TKS Treated
using PrintedRow = std::array<double, 6>;

void expect_stratum(const BalanceStratum& st, const std::vector<PrintedRow>& printed) {
  ASSERT_EQ(st.rows.size(), printed.size());
  for (std::size_t r = 0; r < printed.size(); ++r) {
    const auto& row = st.rows[r];
    const auto& p = printed[r];
    EXPECT_EQ(row.name, kRows[r]);
    EXPECT_NEAR(*row.smd, p[0], kRound3) << row.name;
    EXPECT_NEAR(row.tsmd[0], p[1], kRound3) << row.name;
    EXPECT_NEAR(row.tsmd[1], p[2], kRound3) << row.name;
    EXPECT_NEAR(*row.ks, p[3], kRound3) << row.name;
    EXPECT_NEAR(row.tks[0], p[4], kRound3) << row.name;
    EXPECT_NEAR(row.tks[1], p[5], kRound3) << row.name;
  }
}

}  // namespace

TEST(Lalonde, DataShape) {
  const auto ds = test::lalonde();
  EXPECT_EQ(ds->n_rows(), 2675u);
  const auto& t = ds->treatment();
  EXPECT_EQ(std::count(t.codes().begin(), t.codes().end(), 1), 185);
}

TEST(Lalonde, UriAteUnweightedBalance) {
  const auto table = balance_summary(lalonde_fit(Method::uri, Estimand::ate));
  ASSERT_EQ(table.strata.size(), 2u);
  EXPECT_EQ(table.groups, (std::vector<std::string>{"Control", "Treated"}));
  expect_stratum(table.strata[0], {{-1.009, 0.070, -0.940, 0.377, 0.026, 0.351},
                                   {-0.681, 0.047, -0.633, 0.403, 0.028, 0.375},
                                   {-1.845, 0.128, -1.718, 0.677, 0.047, 0.630},
                                   {1.482, -0.102, 1.379, 0.593, 0.041, 0.552},
                                   {0.129, -0.009, 0.120, 0.027, 0.002, 0.025},
                                   {-1.625, 0.112, -1.512, 0.620, 0.043, 0.577},
                                   {0.880, -0.061, 0.820, 0.403, 0.028, 0.375},
                                   {-1.718, 0.119, -1.599, 0.729, 0.050, 0.679},
                                   {-1.774, 0.123, -1.652, 0.774, 0.054, 0.720}});
}

TEST(Lalonde, UriAteWeightedBalance) {
  const auto table = balance_summary(lalonde_fit(Method::uri, Estimand::ate));
  expect_stratum(table.strata[1], {{0, -0.891, -0.891, 0.127, 0.350, 0.332},
                                   {0, -0.615, -0.615, 0.081, 0.352, 0.352},
                                   {0, -1.574, -1.574, 0.000, 0.578, 0.578},
                                   {0, 1.338, 1.338, 0.000, 0.535, 0.535},
                                   {0, 0.129, 0.129, 0.000, 0.027, 0.027},
                                   {0, -1.474, -1.474, 0.000, 0.562, 0.562},
                                   {0, 0.769, 0.769, 0.000, 0.352, 0.352},
                                   {0, -1.578, -1.578, 0.578, 0.528, 0.665},
                                   {0, -1.636, -1.636, 0.566, 0.523, 0.711}});
  ASSERT_EQ(table.ess.size(), 2u);
  EXPECT_EQ(table.ess[0].values, (std::vector<double>{2490, 185}));
  EXPECT_NEAR(table.ess[1].values[0], 367.3, 0.05);
  EXPECT_NEAR(table.ess[1].values[1], 180.6, 0.05);
}

TEST(Lalonde, UriAteDistribution) {
  const auto d = distribution_summary(lalonde_fit(Method::uri, Estimand::ate));
  ASSERT_EQ(d.strata.size(), 2u);
  // Unweighted: overall mean/SD, then control and treated.
  const std::vector<std::array<double, 6>> before = {
      {34.226, 10.500, 34.851, 10.441, 25.816, 7.155},
      {11.994, 3.054, 12.117, 3.082, 10.346, 2.011},
      {0.819, 0.385, 0.866, 0.340, 0.189, 0.392},
      {0.292, 0.454, 0.251, 0.433, 0.843, 0.364},
      {0.034, 0.182, 0.033, 0.177, 0.059, 0.236},
      {0.674, 0.469, 0.717, 0.451, 0.097, 0.296},
      {0.333, 0.471, 0.305, 0.461, 0.708, 0.455},
      {18230.003, 13722.252, 19428.746, 13406.877, 2095.574, 4886.620},
      {17850.894, 13877.777, 19063.338, 13596.955, 1532.055, 3219.251}};
  // Weighted: target mean/SD, then weighted control and treated.
  const std::vector<std::array<double, 6>> after = {
      {34.226, 10.500, 26.247, 6.071, 26.247, 7.283},
      {11.994, 3.054, 10.394, 2.821, 10.394, 2.053},
      {0.819, 0.385, 0.242, 0.428, 0.242, 0.428},
      {0.292, 0.454, 0.827, 0.378, 0.827, 0.378},
      {0.034, 0.182, 0.061, 0.240, 0.061, 0.240},
      {0.674, 0.469, 0.112, 0.315, 0.112, 0.315},
      {0.333, 0.471, 0.685, 0.465, 0.685, 0.465},
      {18230.003, 13722.252, 2310.339, 19516.079, 2310.339, 5243.971},
      {17850.894, 13877.777, 1690.432, 20103.272, 1690.432, 3525.011}};
  for (std::size_t r = 0; r < kRows.size(); ++r) {
    const auto& b = d.strata[0].rows[r];
    EXPECT_EQ(b.name, kRows[r]);
    // Earnings in the bundled file come from a source stored in thousands
    // with fewer digits, which moves unweighted dollar moments by up to 0.003.
    const double tol = r >= 7 ? 5e-3 : kRound3;
    EXPECT_NEAR(b.target_mean, before[r][0], tol) << b.name;
    EXPECT_NEAR(b.target_sd, before[r][1], tol) << b.name;
    EXPECT_NEAR(b.mean[0], before[r][2], tol) << b.name;
    EXPECT_NEAR(b.sd[0], before[r][3], tol) << b.name;
    EXPECT_NEAR(b.mean[1], before[r][4], tol) << b.name;
    EXPECT_NEAR(b.sd[1], before[r][5], tol) << b.name;
    const auto& a = d.strata[1].rows[r];
    EXPECT_NEAR(a.target_mean, after[r][0], tol) << a.name;
    EXPECT_NEAR(a.target_sd, after[r][1], tol) << a.name;
    EXPECT_NEAR(a.mean[0], after[r][2], kRound3) << a.name;
    EXPECT_NEAR(a.mean[1], after[r][4], kRound3) << a.name;
    EXPECT_LE(std::abs(a.sd[0] / after[r][3] - 1), 0.01) << a.name;
    EXPECT_LE(std::abs(a.sd[1] / after[r][5] - 1), 0.01) << a.name;
  }
}

TEST(Lalonde, MriAttBalance) {
  const auto table = balance_summary(lalonde_fit(Method::mri, Estimand::att));
  expect_stratum(table.strata[0], {{-1.263, 1.263, 0, 0.377, 0.377, 0},
                                   {-0.881, 0.881, 0, 0.403, 0.403, 0},
                                   {-1.729, 1.729, 0, 0.677, 0.677, 0},
                                   {1.630, -1.630, 0, 0.593, 0.593, 0},
                                   {0.114, -0.114, 0, 0.027, 0.027, 0},
                                   {-2.091, 2.091, 0, 0.620, 0.620, 0},
                                   {0.886, -0.886, 0, 0.403, 0.403, 0},
                                   {-3.547, 3.547, 0, 0.729, 0.729, 0},
                                   {-5.446, 5.446, 0, 0.774, 0.774, 0}});
  expect_stratum(table.strata[1], {{0, 0, 0, 0.144, 0.144, 0},
                                   {0, 0, 0, 0.085, 0.085, 0},
                                   {0, 0, 0, 0.000, 0.000, 0},
                                   {0, 0, 0, 0.000, 0.000, 0},
                                   {0, 0, 0, 0.000, 0.000, 0},
                                   {0, 0, 0, 0.000, 0.000, 0},
                                   {0, 0, 0, 0.000, 0.000, 0},
                                   {0, 0, 0, 0.593, 0.593, 0},
                                   {0, 0, 0, 0.579, 0.579, 0}});
  EXPECT_NEAR(table.ess[1].values[0], 333.61, 0.01);
  EXPECT_EQ(table.ess[1].values[1], 185.0);
}

TEST(Lalonde, MriAttEstimates) {
  const auto fit = lalonde_fit(Method::mri, Estimand::att);
  const auto of = lmw_est(fit, "re78");
  const auto rep = effect_summary(of, fit);
  EXPECT_EQ(of.df, 2657);
  EXPECT_EQ(report::signif(of.sigma, 4), "10060");
  ASSERT_EQ(rep.contrasts.size(), 1u);
  const auto& c = rep.contrasts[0];
  EXPECT_EQ(c.label, "E[Y1-Y0|A=1]");
  EXPECT_NEAR(c.estimate, 790.5, 0.05);
  EXPECT_NEAR(c.se, 793.7, 0.05);
  EXPECT_NEAR(c.ci_low, -765.7, 0.05);
  EXPECT_NEAR(c.ci_high, 2346.8, 0.05);
  EXPECT_NEAR(c.t, 0.996, 5e-4);
  EXPECT_NEAR(c.p, 0.319, 0.001);
  ASSERT_EQ(rep.po_means.size(), 2u);
  EXPECT_NEAR(rep.po_means[0].estimate, 5558.6, 0.05);
  EXPECT_NEAR(rep.po_means[0].se, 520.6, 0.05);
  EXPECT_NEAR(rep.po_means[0].ci_low, 4537.8, 0.05);
  EXPECT_NEAR(rep.po_means[0].ci_high, 6579.4, 0.05);
  EXPECT_NEAR(rep.po_means[1].estimate, 6349.1, 0.05);
  EXPECT_NEAR(rep.po_means[1].se, 599.1, 0.05);
  EXPECT_NEAR(rep.po_means[1].ci_low, 5174.5, 0.05);
  EXPECT_NEAR(rep.po_means[1].ci_high, 7523.8, 0.05);
  EXPECT_NEAR(rep.po_means[0].t, 10.68, 0.005);
  EXPECT_NEAR(rep.po_means[1].t, 10.60, 0.005);
}

TEST(Lalonde, IvUnweightedBalanceMatchesAtt) {
  // The unweighted stratum does not depend on the instrument.
  const auto ds = test::lalonde();
  const auto with_z = std::make_shared<const Dataset>(ds->with_column("Ins", generate_instrument(*ds, 1)));
  LmwOptions o;
  o.estimand = Estimand::att;
  const auto iv = lmw_iv(parse_formula("~ treat + age + education + race + re74"), with_z, parse_formula("~ Ins"), o);
  const Formula addl = parse_formula("~ married + nodegree + re75");
  const auto table = balance_summary(iv, &addl);
  const std::vector<std::string> names = {"age",       "education", "raceblack", "racehispanic", "racewhite",
                                          "re74",      "married",   "nodegree",  "re75"};
  const std::vector<std::pair<double, double>> smd_ks = {{-1.263, 0.377}, {-0.881, 0.403}, {1.630, 0.593},
                                                         {0.114, 0.027},  {-2.091, 0.620}, {-3.547, 0.729},
                                                         {-1.729, 0.677}, {0.886, 0.403},  {-5.446, 0.774}};
  ASSERT_EQ(table.strata[0].rows.size(), names.size());
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto& row = table.strata[0].rows[r];
    EXPECT_EQ(row.name, names[r]);
    EXPECT_NEAR(*row.smd, smd_ks[r].first, kRound3) << row.name;
    EXPECT_NEAR(*row.ks, smd_ks[r].second, kRound3) << row.name;
  }
  const auto of = lmw_est(iv, "re78");
  EXPECT_EQ(of.df, 2668);
}

TEST(Lalonde, MultiValuedMriProperties) {
  const auto ds = test::lalonde();
  const auto multi = std::make_shared<const Dataset>(ds->with_column("treat_multi", generate_multilevel(*ds, 11)));
  LmwOptions o;
  o.method = Method::mri;
  o.estimand = Estimand::att;
  o.treat = "treat_multi";
  o.focal = "1";
  const std::string f = "~ treat_multi + age + education + married + race + nodegree + re74 + re75";
  const auto fit = lmw::lmw(parse_formula(f), multi, o);
  for (int g = 0; g < 3; ++g) EXPECT_NEAR(fit.weights.group_sum(g), 1.0, 1e-10 * 2675);
  const auto of = lmw_est(fit, "re78");
  EXPECT_EQ(of.df, 2648);
  const auto rep = effect_summary(of, fit);
  ASSERT_EQ(rep.contrasts.size(), 3u);
  EXPECT_EQ(rep.contrasts[0].label, "E[Y1-Y2|A=1]");
  EXPECT_EQ(rep.contrasts[1].label, "E[Y1-Y3|A=1]");
  EXPECT_EQ(rep.contrasts[2].label, "E[Y2-Y3|A=1]");
  EXPECT_NEAR(rep.contrasts[2].estimate, rep.contrasts[1].estimate - rep.contrasts[0].estimate, 1e-10 * 1e4);
  // Treated units form level "1"; its PO mean is the observed treated mean.
  EXPECT_NEAR(rep.po_means[0].estimate, 6349.14, 0.01);
  const auto table = balance_summary(fit);
  EXPECT_EQ(table.groups, (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_FALSE(table.pairwise);
  for (const auto& row : table.strata[0].rows) {
    EXPECT_EQ(row.tsmd[0], 0.0) << row.name;
    EXPECT_EQ(row.tks[0], 0.0) << row.name;
  }
  EXPECT_EQ(table.ess[0].values[0], 185.0);
}

TEST(Lalonde, MatchedMriAtt) {
  const auto ds = test::lalonde();
  const auto spec = lmw::lmw(parse_formula(test::kLalondeFormula), ds);
  const auto treated = test::treated_of(spec);
  const auto m = nn_match(fit_propensity(spec.covariates.matrix, treated).scores, treated);
  ASSERT_EQ(m.matched(), 370u);
  const std::vector<double> sub(m.subclass.begin(), m.subclass.end());
  const auto matched = std::make_shared<const Dataset>(
      ds->with_column("weights", Column::numeric(std::vector<double>(m.base_weights.data(),
                                                                     m.base_weights.data() + m.base_weights.size())))
          .with_column("subclass", Column::numeric(sub)));
  LmwOptions o;
  o.method = Method::mri;
  o.estimand = Estimand::att;
  o.base_weights = "weights";
  const auto fit = lmw::lmw(parse_formula(test::kLalondeFormula), matched, o);

  const auto table = balance_summary(fit);
  ASSERT_EQ(table.strata.size(), 3u);
  EXPECT_EQ(table.strata[1].name, "Base weighted");
  expect_stratum(table.strata[1], {{-0.652, 0.652, 0, 0.178, 0.178, 0},
                                   {-0.016, 0.016, 0, 0.092, 0.092, 0},
                                   {-0.690, 0.690, 0, 0.270, 0.270, 0},
                                   {0.238, -0.238, 0, 0.086, 0.086, 0},
                                   {-0.023, 0.023, 0, 0.005, 0.005, 0},
                                   {-0.274, 0.274, 0, 0.081, 0.081, 0},
                                   {0.190, -0.190, 0, 0.086, 0.086, 0},
                                   {-0.492, 0.492, 0, 0.416, 0.416, 0},
                                   {-0.519, 0.519, 0, 0.297, 0.297, 0}});
  const std::vector<double> weighted_ks = {0.147, 0.058, 0, 0, 0, 0, 0, 0.382, 0.222};
  for (std::size_t r = 0; r < weighted_ks.size(); ++r) {
    EXPECT_NEAR(*table.strata[2].rows[r].ks, weighted_ks[r], kRound3) << kRows[r];
    EXPECT_LE(std::abs(*table.strata[2].rows[r].smd), 5e-4) << kRows[r];
  }
  ASSERT_EQ(table.ess.size(), 3u);
  EXPECT_EQ(table.ess[1].values, (std::vector<double>{185, 185}));
  EXPECT_NEAR(table.ess[2].values[0], 77.93, 0.005);

  const auto of = lmw_est(fit, "re78", CovType::cluster, std::string("subclass"));
  EXPECT_EQ(of.vcov_label(), "cluster robust (HC1)");
  EXPECT_EQ(of.df, 352);
  EXPECT_EQ(report::signif(of.sigma, 4), "6922");
  const auto rep = effect_summary(of, fit);
  const auto& c = rep.contrasts[0];
  EXPECT_NEAR(c.estimate, 1904.5, 0.05);
  EXPECT_NEAR(c.se, 872.3, 0.05);
  EXPECT_NEAR(c.ci_low, 189.0, 0.05);
  EXPECT_NEAR(c.ci_high, 3620.1, 0.05);
  EXPECT_NEAR(c.t, 2.183, 5e-4);
  EXPECT_NEAR(c.p, 0.0297, 5e-5);
  EXPECT_NEAR(rep.po_means[0].estimate, 4444.6, 0.05);
  EXPECT_NEAR(rep.po_means[0].se, 634.0, 0.05);
  EXPECT_NEAR(rep.po_means[1].estimate, 6349.1, 0.05);
  EXPECT_NEAR(rep.po_means[1].se, 577.2, 0.05);
}
