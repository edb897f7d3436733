#include "embproc/diagnostics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "embproc/error.hpp"
#include "embproc/normalize.hpp"
#include "test_util.hpp"

using namespace embproc;

namespace {

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = haystack.find(needle); p != std::string::npos; p = haystack.find(needle, p + 1)) ++n;
  return n;
}

LayerVarianceProfile profile(const std::string& model, const std::vector<double>& values) {
  LayerVarianceProfile p{model, {}};
  for (std::size_t i = 0; i < values.size(); ++i) {
    p.entries.push_back({static_cast<std::uint32_t>(i), values[i], values[i], values[i], {}});
  }
  return p;
}

Matrix random_rows(std::uint64_t seed, std::size_t n, std::size_t d) {
  std::mt19937_64 rng(seed);
  return testutil::to_matrix(oracle::random_matrix(rng, n, d, 3.0));
}

}  // namespace

TEST(LayerVariance, TwoRecords) {
  OccurrenceShard s{4, 2, {{"a", 0, {1, 2}}, {"b", 1, {3, 2}}}};
  const auto lv = layer_variance(s);
  EXPECT_EQ(lv.layer, 4u);
  EXPECT_EQ(lv.feature_var, (std::vector<double>{1, 0}));
  EXPECT_DOUBLE_EQ(lv.mean_var, 0.5);
  EXPECT_DOUBLE_EQ(lv.max_var, 1.0);
  EXPECT_DOUBLE_EQ(lv.min_var, 0.0);
}

TEST(LayerVariance, ConstantShard) {
  OccurrenceShard s{0, 3, {{"a", 0, {1, 2, 3}}, {"a", 1, {1, 2, 3}}, {"a", 2, {1, 2, 3}}}};
  const auto lv = layer_variance(s);
  EXPECT_EQ(lv.mean_var, 0.0);
  EXPECT_EQ(lv.max_var, 0.0);
}

TEST(LayerVariance, TooFewRecords) {
  EXPECT_THROW(layer_variance(OccurrenceShard{0, 1, {{"a", 0, {1}}}}), DataError);
}

TEST(LayerVarianceProperty, AfterZscoreAndMinmax) {
  const Matrix m = random_rows(1, 400, 12);
  Matrix z = m, mm = m;
  apply_pipeline(z, fit_pipeline(m, Pipeline::parse("zscore")));
  apply_pipeline(mm, fit_pipeline(m, Pipeline::parse("minmax")));
  EXPECT_NEAR(layer_variance(0, z).mean_var, 1.0, 1e-9);
  for (double v : layer_variance(0, mm).feature_var) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 0.25);
  }
}

TEST(LayerVarianceProperty, PermutationAndMeanRecord) {
  const Matrix m = random_rows(2, 300, 6);
  auto rows = testutil::to_rows(m);
  const auto base = layer_variance(0, m);
  std::mt19937_64 rng(3);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto shuffled = layer_variance(0, testutil::to_matrix(rows));
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(base.feature_var[j], shuffled.feature_var[j], 1e-10);

  rows.push_back(oracle::column_mean(rows));
  const auto grown = layer_variance(0, testutil::to_matrix(rows));
  for (std::size_t j = 0; j < 6; ++j) EXPECT_LE(grown.feature_var[j], base.feature_var[j] + 1e-12);
}

TEST(VarianceReport, OneModel) {
  testutil::TempDir tmp;
  variance_report({profile("bert", {1, 2, 3})}, tmp.path());
  const auto csv = testutil::read_file(tmp / "layer_variance.csv");
  EXPECT_EQ(csv, "model,layer,mean_var,max_var,min_var\nbert,0,1,1,1\nbert,1,2,2,2\nbert,2,3,3,3\n");
  const auto svg = testutil::read_file(tmp / "layer_variance.svg");
  EXPECT_NE(svg.find("viewBox=\"0 0 800 500\""), std::string::npos);
  EXPECT_EQ(count_of(svg, "<polyline"), 1u);
  const auto pts = svg.substr(svg.find("points=\""));
  EXPECT_EQ(count_of(pts.substr(0, pts.find("\"/>")), ","), 3u);
}

TEST(VarianceReport, TwoModelsHaveLegend) {
  const auto svg = variance_svg({profile("bert", {1, 2}), profile("gpt2", {3, 1})});
  EXPECT_EQ(count_of(svg, "<polyline"), 2u);
  EXPECT_NE(svg.find("class=\"legend\""), std::string::npos);
  EXPECT_NE(svg.find(">bert<"), std::string::npos);
  EXPECT_NE(svg.find(">gpt2<"), std::string::npos);
}

TEST(VarianceReport, EmptyIsError) {
  testutil::TempDir tmp;
  EXPECT_THROW(variance_report({}, tmp.path()), DataError);
}

TEST(VarianceReport, YLimitClipsAndIsDeterministic) {
  const std::vector<LayerVarianceProfile> ps = {profile("m", {1, 100, 2})};
  const auto clipped = variance_svg(ps, {5.0});
  EXPECT_EQ(clipped, variance_svg(ps, {5.0}));
  EXPECT_NE(clipped, variance_svg(ps));
  // Clipped point sits on the top edge of the plot area.
  EXPECT_NE(clipped.find(",40.00"), std::string::npos);
}

TEST(VarianceReport, SortProfileRejectsDuplicates) {
  LayerVarianceProfile p{"m", {{2, 1, 1, 1, {}}, {0, 1, 1, 1, {}}}};
  sort_profile(p);
  EXPECT_EQ(p.entries[0].layer, 0u);
  p.entries.push_back({0, 1, 1, 1, {}});
  EXPECT_THROW(sort_profile(p), DataError);
}
