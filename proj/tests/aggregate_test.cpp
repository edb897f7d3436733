#include "embproc/aggregate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "embproc/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace embproc;

namespace {

OccurrenceShard shard_with_counts(const std::map<std::string, std::size_t>& counts, std::uint32_t dim,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  OccurrenceShard s{0, dim, {}};
  std::uint32_t sid = 0;
  for (const auto& [w, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      OccurrenceRecord r{w, sid++, {}};
      for (std::uint32_t j = 0; j < dim; ++j) r.vector.push_back(g(rng));
      s.records.push_back(r);
    }
  }
  return s;
}

}  // namespace

TEST(Aggregate, MeanOfTwoOccurrences) {
  OccurrenceShard s{0, 2, {{"bank", 0, {1, 2}}, {"bank", 1, {3, 4}}}};
  const auto r = aggregate(s, {1, 200, 42});
  ASSERT_EQ(r.table.size(), 1u);
  EXPECT_DOUBLE_EQ(r.table.vector(0)[0], 2.0);
  EXPECT_DOUBLE_EQ(r.table.vector(0)[1], 3.0);
}

TEST(Aggregate, SingleOccurrenceIsExact) {
  OccurrenceShard s{0, 3, {{"x", 0, {0.1f, -7.25f, 3.0e-5f}}}};
  const auto r = aggregate(s, {1, 200, 42});
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.table.vector(0)[j], static_cast<double>(s.records[0].vector[j]));
}

TEST(Aggregate, BelowMinContextsIsDropped) {
  const auto s = shard_with_counts({{"rare", 49}, {"ok", 50}}, 2, 1);
  const auto r = aggregate(s, {50, 200, 42});
  EXPECT_EQ(r.table.find("rare"), nullptr);
  EXPECT_NE(r.table.find("ok"), nullptr);
  EXPECT_EQ(r.report.dropped, 1u);
  ASSERT_EQ(r.report.words.size(), 2u);
  EXPECT_EQ(r.report.words[1].word, "rare");
  EXPECT_TRUE(r.report.words[1].dropped);
  EXPECT_EQ(r.report.words[1].n_used, 0u);
}

TEST(Aggregate, AboveMaxContextsIsSubsampledDeterministically) {
  const auto s = shard_with_counts({{"freq", 300}}, 3, 2);
  const auto a = aggregate(s, {50, 200, 42});
  const auto b = aggregate(s, {50, 200, 42});
  EXPECT_EQ(a.report.words[0].n_used, 200u);
  EXPECT_EQ(a.report.words[0].n_total, 300u);
  EXPECT_EQ(a.table, b.table);
  const auto c = aggregate(s, {50, 200, 43});
  EXPECT_NE(a.table, c.table);

  // The subsample mean equals the oracle mean of the chosen rows.
  const auto chosen = sample_positions(300, 200, 42, "freq");
  ASSERT_EQ(chosen.size(), 200u);
  oracle::Mat rows;
  for (std::size_t i : chosen) rows.emplace_back(s.records[i].vector.begin(), s.records[i].vector.end());
  const auto m = oracle::column_mean(rows);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.table.vector(0)[j], m[j], 1e-12);
}

TEST(Aggregate, SamplePositionsAreDistinctAndSorted) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = sample_positions(37, 11, seed, "w");
    ASSERT_EQ(p.size(), 11u);
    EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    EXPECT_EQ(std::adjacent_find(p.begin(), p.end()), p.end());
    EXPECT_LT(p.back(), 37u);
  }
  EXPECT_EQ(sample_positions(5, 10, 1, "w").size(), 5u);
}

TEST(Aggregate, SamplingIsRoughlyUniform) {
  std::vector<int> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (std::size_t i : sample_positions(20, 5, seed, "u")) ++hits[i];
  }
  // Expected 500 per position.
  for (int h : hits) EXPECT_NEAR(h, 500, 90);
}

TEST(Aggregate, InvalidConfig) {
  OccurrenceShard s{0, 1, {{"a", 0, {1}}}};
  EXPECT_THROW(aggregate(s, {0, 10, 1}), UsageError);
  EXPECT_THROW(aggregate(s, {10, 5, 1}), UsageError);
}

TEST(Aggregate, DimMismatchIsDataError) {
  OccurrenceShard s{0, 2, {{"a", 0, {1}}}};
  EXPECT_THROW(aggregate(s, {1, 10, 1}), DataError);
}

TEST(AggregateProperty, MeanBoundsCountLawAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::map<std::string, std::size_t> counts;
  std::uniform_int_distribution<std::size_t> n(1, 30);
  for (int w = 0; w < 40; ++w) counts["w" + std::to_string(w)] = n(rng);
  auto s = shard_with_counts(counts, 4, 9);
  const AggregationConfig cfg{5, 20, 7};
  const auto base = aggregate(s, cfg);
  EXPECT_EQ(base.table.size() + base.report.dropped, counts.size());

  for (std::size_t i = 0; i < base.table.size(); ++i) {
    const auto& w = base.table.word(i);
    std::vector<double> lo(4, INFINITY), hi(4, -INFINITY);
    for (const auto& r : s.records) {
      if (r.word != w) continue;
      for (std::size_t j = 0; j < 4; ++j) {
        lo[j] = std::min(lo[j], static_cast<double>(r.vector[j]));
        hi[j] = std::max(hi[j], static_cast<double>(r.vector[j]));
      }
    }
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_GE(base.table.vector(i)[j], lo[j]);
      EXPECT_LE(base.table.vector(i)[j], hi[j]);
    }
  }

  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(s.records.begin(), s.records.end(), rng);
    const auto again = aggregate(s, cfg);
    EXPECT_EQ(again.table, base.table);
  }
}

TEST(AggregateProperty, ThreadCountDoesNotChangeBits) {
  std::map<std::string, std::size_t> counts;
  for (int w = 0; w < 30; ++w) counts["w" + std::to_string(w)] = 10 + 9 * static_cast<std::size_t>(w);
  const auto s = shard_with_counts(counts, 6, 4);
  const AggregationConfig cfg{20, 100, 1};
  EXPECT_EQ(aggregate(s, cfg, 1).table, aggregate(s, cfg, 4).table);
}

TEST(Aggregate, ReportCsv) {
  testutil::TempDir tmp;
  OccurrenceShard s{0, 1, {{"a,b", 0, {1}}, {"c", 1, {2}}, {"c", 2, {3}}}};
  const auto r = aggregate(s, {2, 10, 1});
  write_aggregation_report(r.report, tmp / "r.csv");
  EXPECT_EQ(testutil::read_file(tmp / "r.csv"), "word,n_total,n_used,dropped\n\"a,b\",1,0,1\nc,2,2,0\n");
}
