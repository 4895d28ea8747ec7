#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <functional>

#include "support.hpp"

using namespace lmw;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no lmw::Error thrown";
  return ErrorCode::verification;
}

}  // namespace

TEST(Dataset, LalondeGroupSizes) {
  const auto ds = test::lalonde();
  EXPECT_EQ(ds->n_rows(), 2675u);
  const auto counts = subgroup_counts(*ds);
  ASSERT_EQ(counts.size(), 2u);
  EXPECT_EQ(counts[0], (std::pair<std::string, std::size_t>{"0", 2490}));
  EXPECT_EQ(counts[1], (std::pair<std::string, std::size_t>{"1", 185}));
  EXPECT_FALSE(ds->column("race").is_numeric());
  EXPECT_EQ(ds->column("race").levels(), (std::vector<std::string>{"black", "hispanic", "white"}));
}

TEST(Dataset, InfersKindsAndLexicographicLevels) {
  const auto ds = parse_csv("g,x\nb,1\na,2.5\nb,3\n");
  EXPECT_TRUE(ds.column("x").is_numeric());
  const Column& g = ds.column("g");
  EXPECT_EQ(g.levels(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(g.codes(), (std::vector<int>{1, 0, 1}));
}

TEST(Dataset, HintsOverrideKindAndLevelOrder) {
  TypeHints hints;
  hints["g"] = {ColumnKind::categorical, {"b", "a"}};
  hints["z"] = {ColumnKind::categorical, {}};
  const auto ds = parse_csv("g,z\na,1\nb,2\n", hints);
  EXPECT_EQ(ds.column("g").levels(), (std::vector<std::string>{"b", "a"}));
  EXPECT_FALSE(ds.column("z").is_numeric());
  EXPECT_EQ(ds.column("z").levels(), (std::vector<std::string>{"1", "2"}));
}

TEST(Dataset, TreatmentIsCoercedToCategorical) {
  const auto ds = parse_csv("t,x\n1,0.5\n0,0.7\n1,0.1\n", {}, Roles{"t"});
  EXPECT_FALSE(ds.treatment().is_numeric());
  EXPECT_EQ(ds.treatment().levels(), (std::vector<std::string>{"0", "1"}));
}

TEST(Dataset, NumericLabelsAreCanonical) {
  const auto ds = parse_csv("t\n1.0\n0\n1\n", {}, Roles{"t"});
  EXPECT_EQ(ds.treatment().levels().size(), 2u);
}

TEST(Dataset, QuotedFieldsAndBom) {
  const auto ds = parse_csv("\xEF\xBB\xBFname,v\n\"a,b\",1\n\"say \"\"hi\"\"\",2\r\n");
  EXPECT_EQ(ds.column("name").levels(), (std::vector<std::string>{"a,b", "say \"hi\""}));
  EXPECT_EQ(ds.column("v").values(), (std::vector<double>{1, 2}));
}

TEST(Dataset, Errors) {
  EXPECT_EQ(code_of([] { parse_csv("x\n"); }), ErrorCode::empty_dataset);
  EXPECT_EQ(code_of([] { parse_csv(""); }), ErrorCode::parse);
  EXPECT_EQ(code_of([] { parse_csv("x,y\n1\n"); }), ErrorCode::parse);
  EXPECT_EQ(code_of([] { parse_csv("x,y\n1,\n"); }), ErrorCode::missing_value);
  EXPECT_EQ(code_of([] { parse_csv("x\nNA\n"); }), ErrorCode::missing_value);
  EXPECT_EQ(code_of([] { parse_csv("t,x\n1,2\n1,3\n", {}, Roles{"t"}); }), ErrorCode::single_level);
  EXPECT_EQ(code_of([] { parse_csv("t,x\n1,2\n0,3\n", {}, Roles{"w"}); }), ErrorCode::unknown_column);
  EXPECT_EQ(code_of([] {
              TypeHints h;
              h["x"] = {ColumnKind::numeric, {}};
              parse_csv("x\n1\nabc\n", h);
            }),
            ErrorCode::parse);
  EXPECT_EQ(code_of([] { load_csv("/nonexistent/file.csv"); }), ErrorCode::io);
  EXPECT_EQ(code_of([] { parse_csv("a,a\n1,2\n"); }), ErrorCode::parse);
  EXPECT_EQ(code_of([] { parse_csv("x,\"y\n1,2\n"); }), ErrorCode::parse);
}

TEST(Dataset, WeightRoles) {
  Roles r{"t"};
  r.base_weights = "w";
  EXPECT_EQ(code_of([&] { parse_csv("t,w\n1,-1\n0,1\n", {}, r); }), ErrorCode::invalid_role);
  EXPECT_EQ(code_of([&] { parse_csv("t,w\n1,a\n0,b\n", {}, r); }), ErrorCode::invalid_role);
  EXPECT_NO_THROW(parse_csv("t,w\n1,0\n0,2\n", {}, r));
  Roles c{"t"};
  c.cluster = "s";
  const auto ds = parse_csv("t,s\n1,3\n0,3\n1,4\n", {}, c);
  EXPECT_FALSE(ds.column("s").is_numeric());
}

TEST(Dataset, UnknownLevelInColumnFactory) {
  EXPECT_THROW(Column::from_labels({"a", "c"}, {"a", "b"}), Error);
  EXPECT_THROW(Column::categorical({0, 2}, {"a", "b"}), Error);
  EXPECT_THROW(Column::numeric({1.0, std::nan("")}), Error);
}

TEST(Dataset, RoundTripIsExact) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal;
  std::vector<double> reals(50);
  std::vector<double> ints(50);
  for (std::size_t i = 0; i < reals.size(); ++i) {
    reals[i] = normal(gen) * std::pow(10.0, static_cast<int>(i % 9) - 4);
    ints[i] = std::round(normal(gen) * 1000);
  }
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < 50; ++i) labels.push_back(i % 3 == 0 ? "x, y" : (i % 3 == 1 ? "q\"r" : "z"));
  Dataset ds({{"r", Column::numeric(reals)}, {"i", Column::numeric(ints)}, {"c", Column::from_labels(labels)}});
  const Dataset back = parse_csv(to_csv(ds));
  EXPECT_EQ(back.column("r"), ds.column("r"));
  EXPECT_EQ(back.column("i"), ds.column("i"));
  EXPECT_EQ(back.column("c"), ds.column("c"));
}

TEST(Dataset, SubsetAndWithColumn) {
  const auto ds = parse_csv("t,x\n1,1\n0,2\n1,3\n0,4\n", {}, Roles{"t"});
  const auto sub = ds.subset({3, 0});
  EXPECT_EQ(sub.column("x").values(), (std::vector<double>{4, 1}));
  EXPECT_EQ(sub.treatment().codes(), (std::vector<int>{0, 1}));
  const auto more = ds.with_column("z", Column::numeric({9, 9, 9, 9}));
  EXPECT_TRUE(more.has("z"));
  EXPECT_FALSE(ds.has("z"));
  EXPECT_THROW(ds.with_column("z", Column::numeric({1})), Error);
}

TEST(Dataset, CountsSumToRows) {
  const auto d = test::random_design(3, 40, 2, 3);
  std::size_t total = 0;
  for (const auto& [level, count] : subgroup_counts(*d.data)) {
    EXPECT_GE(count, 1u);
    total += count;
  }
  EXPECT_EQ(total, d.data->n_rows());
}
