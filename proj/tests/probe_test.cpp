#include "embproc/probe.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "embproc/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace embproc;

namespace {

ProbeDataset make_dataset(const oracle::Mat& x, const std::vector<std::size_t>& y, std::size_t classes) {
  ProbeDataset ds;
  ds.features = testutil::to_matrix(x);
  ds.labels = y;
  for (std::size_t c = 0; c < classes; ++c) ds.label_names.push_back("c" + std::to_string(c));
  ds.layout = {{0, 0, x.at(0).size()}};
  return ds;
}

// Label is the sign of `informative`; all other features are noise.
ProbeDataset planted(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t informative) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  oracle::Mat x(n, oracle::Vec(d));
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x[i]) v = g(rng);
    y[i] = x[i][informative] > 0 ? 1 : 0;
  }
  return make_dataset(x, y, 2);
}

}  // namespace

TEST(ProbeGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + rng() % 16, d = 2 + rng() % 9, C = 3;
    const auto x = oracle::random_matrix(rng, n, d);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % C;
    const auto ds = make_dataset(x, y, C);
    oracle::Mat w = oracle::random_matrix(rng, C, d, 0.5);
    oracle::Vec b = {g(rng), g(rng), g(rng)};
    const auto sl = cross_entropy(ds, testutil::to_matrix(w), b);
    EXPECT_NEAR(sl.value, oracle::cross_entropy(x, y, w, b), 1e-12);

    const double h = 1e-6;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        auto wp = w, wm = w;
        wp[c][j] += h;
        wm[c][j] -= h;
        const double fd = (oracle::cross_entropy(x, y, wp, b) - oracle::cross_entropy(x, y, wm, b)) / (2 * h);
        EXPECT_NEAR(sl.grad_weights(c, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
      auto bp = b, bm = b;
      bp[c] += h;
      bm[c] -= h;
      const double fd = (oracle::cross_entropy(x, y, w, bp) - oracle::cross_entropy(x, y, w, bm)) / (2 * h);
      EXPECT_NEAR(sl.grad_bias[c], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(ProbeGradient, ThreadCountDoesNotChangeBits) {
  const auto ds = planted(3, 1000, 7, 2);
  Matrix w(2, 7, 0.1);
  const std::vector<double> b = {0.2, -0.1};
  const auto a = cross_entropy(ds, w, b, 1), c = cross_entropy(ds, w, b, 3);
  EXPECT_EQ(a.value, c.value);
  EXPECT_EQ(a.grad_weights, c.grad_weights);
}

TEST(TrainProbe, PlantedFeatureSeparable) {
  const auto ds = planted(5, 200, 6, 3);
  ProbeConfig cfg;
  cfg.epochs = 300;
  cfg.lr = 1.0;
  const auto model = train_probe(ds, cfg);
  EXPECT_GE(model.accuracy(ds), 0.99);
  const auto ranking = rank_neurons(model);
  EXPECT_EQ(ranking.order[0].neuron, 3u);
}

TEST(TrainProbe, ConvergesToStationaryPointWithoutPenalty) {
  // Overlapping classes, so the unpenalized optimum is finite.
  const oracle::Mat x = {{1, 0}, {0, 1}, {1, 1}, {0.5, 0.2}};
  const auto ds = make_dataset(x, {0, 1, 0, 1}, 2);
  ProbeConfig cfg;
  cfg.l1 = cfg.l2 = 0.0;
  cfg.epochs = 20000;
  cfg.lr = 2.0;
  const auto model = train_probe(ds, cfg);
  const auto sl = cross_entropy(ds, model.weights, model.bias);
  double inf = 0.0;
  for (double gv : sl.grad_weights.data()) inf = std::max(inf, std::abs(gv));
  for (double gv : sl.grad_bias) inf = std::max(inf, std::abs(gv));
  EXPECT_LT(inf, 1e-4);
}

TEST(TrainProbe, LargeL1ZeroesEveryWeight) {
  auto ds = planted(6, 60, 4, 1);
  // Make class 0 the majority.
  for (std::size_t i = 0; i < 20; ++i) ds.labels[i] = 0;
  ProbeConfig cfg;
  cfg.l1 = 10.0;
  cfg.epochs = 200;
  const auto model = train_probe(ds, cfg);
  for (double w : model.weights.data()) EXPECT_EQ(w, 0.0);
  std::size_t zeros = 0;
  for (std::size_t yv : ds.labels) zeros += yv == 0;
  const std::size_t majority = zeros * 2 >= ds.labels.size() ? 0 : 1;
  for (std::size_t i = 0; i < ds.features.rows(); ++i) EXPECT_EQ(model.predict(ds.features.row(i)), majority);
}

TEST(TrainProbe, LossHistoryIsMonotone) {
  // Labels independent of large-scale features: the optimum is near zero and
  // an oversized step overshoots it.
  std::mt19937_64 rng(7);
  auto x = oracle::random_matrix(rng, 150, 5, 5.0);
  std::vector<std::size_t> y(150);
  for (auto& v : y) v = rng() % 2;
  const auto ds = make_dataset(x, y, 2);
  ProbeConfig cfg;
  cfg.lr = 50.0;
  cfg.epochs = 100;
  const auto model = train_probe(ds, cfg);
  for (std::size_t i = 1; i < model.loss_history.size(); ++i) {
    EXPECT_LE(model.loss_history[i], model.loss_history[i - 1]);
  }
  EXPECT_LT(model.final_lr, 50.0);
}

TEST(TrainProbe, DeterministicAndMiniBatchSeeded) {
  const auto ds = planted(8, 120, 5, 4);
  ProbeConfig cfg;
  cfg.epochs = 20;
  EXPECT_EQ(train_probe(ds, cfg).weights, train_probe(ds, cfg).weights);
  cfg.batch_size = 16;
  const auto a = train_probe(ds, cfg), b = train_probe(ds, cfg);
  EXPECT_EQ(a.weights, b.weights);
  cfg.seed = 99;
  EXPECT_NE(train_probe(ds, cfg).weights, a.weights);
}

TEST(TrainProbe, Errors) {
  const auto ds = planted(9, 20, 3, 0);
  ProbeConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(train_probe(ds, cfg), UsageError);
  cfg.lr = 0.1;
  cfg.epochs = 0;
  EXPECT_THROW(train_probe(ds, cfg), UsageError);

  auto one_class = ds;
  one_class.label_names = {"only"};
  std::fill(one_class.labels.begin(), one_class.labels.end(), 0);
  EXPECT_THROW(train_probe(one_class, ProbeConfig{}), DataError);

  auto bad_layout = ds;
  bad_layout.layout = {{0, 0, 2}};
  EXPECT_THROW(train_probe(bad_layout, ProbeConfig{}), DataError);

  auto huge = ds;
  for (double& v : huge.features.data()) v *= 1e300;
  EXPECT_THROW(train_probe(huge, ProbeConfig{}), DataError);
}

TEST(TrainProbeProperty, PlantedNeuronRecovery) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t informative = seed % 10;
    const auto ds = planted(100 + seed, 200, 10, informative);
    const auto model = train_probe(ds, ProbeConfig{});
    hits += rank_neurons(model).order[0].neuron == informative;
  }
  EXPECT_GE(hits, 19);
}

TEST(RankNeurons, Examples) {
  Matrix w(2, 2);
  w(0, 1) = 2;
  w(1, 1) = -3;
  auto r = rank_neurons(w);
  EXPECT_EQ(r.order[0].neuron, 1u);
  EXPECT_EQ(r.order[0].importance, 5.0);
  EXPECT_EQ(r.order[1].neuron, 0u);
  EXPECT_EQ(r.order[1].importance, 0.0);

  const auto zero = rank_neurons(Matrix(3, 4));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(zero.order[i].neuron, i);

  std::mt19937_64 rng(2);
  Matrix m = testutil::to_matrix(oracle::random_matrix(rng, 3, 12));
  const auto base = rank_neurons(m);
  for (double& v : m.data()) v *= 2.0;
  const auto scaled = rank_neurons(m);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(base.order[i].neuron, scaled.order[i].neuron);
}

TEST(SelectSalient, Examples) {
  NeuronRanking r{{{4, 5.0}, {0, 3.0}, {2, 2.0}}};
  EXPECT_EQ(select_salient(r, 0.8), (std::vector<std::size_t>{4, 0}));
  NeuronRanking z{{{1, 4.0}, {0, 1.0}, {2, 0.0}, {3, 0.0}}};
  EXPECT_EQ(select_salient(z, 1.0), (std::vector<std::size_t>{1, 0}));
  NeuronRanking one{{{7, 0.3}}};
  EXPECT_EQ(select_salient(one, 0.01), (std::vector<std::size_t>{7}));
  EXPECT_EQ(select_salient(one, 1.0), (std::vector<std::size_t>{7}));
  EXPECT_THROW(select_salient(NeuronRanking{{{0, 0.0}}}, 0.5), DataError);
  EXPECT_THROW(select_salient(r, 0.0), UsageError);
  EXPECT_THROW(select_salient(r, 1.5), UsageError);
}

TEST(LayerDistribution, Examples) {
  const std::vector<LayerSpan> layout = {{0, 0, 3}, {1, 3, 3}};
  const std::vector<std::size_t> sel = {0, 1, 4};
  EXPECT_EQ(layer_distribution(sel, layout), (std::vector<LayerCount>{{0, 2}, {1, 1}}));
  EXPECT_EQ(layer_distribution(std::vector<std::size_t>{}, layout), (std::vector<LayerCount>{{0, 0}, {1, 0}}));
  const std::vector<std::size_t> all = {0, 1, 2, 3, 4, 5};
  EXPECT_EQ(layer_distribution(all, layout), (std::vector<LayerCount>{{0, 3}, {1, 3}}));
  EXPECT_THROW(layer_distribution(std::vector<std::size_t>{6}, layout), DataError);
}

TEST(LayerDistributionProperty, CountsSumToSelection) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LayerSpan> layout;
    std::size_t off = 0;
    const std::size_t layers = 1 + rng() % 13;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t w = 1 + rng() % 20;
      layout.push_back({static_cast<std::uint32_t>(l), off, w});
      off += w;
    }
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < off; ++i)
      if (rng() % 3 == 0) sel.push_back(i);
    std::size_t sum = 0;
    for (const auto& h : layer_distribution(sel, layout)) sum += h.count;
    EXPECT_EQ(sum, sel.size());
  }
}

TEST(ProbeOutputs, CsvAndSvg) {
  testutil::TempDir tmp;
  const std::vector<LayerSpan> layout = {{0, 0, 2}, {1, 2, 1}};
  NeuronRanking r{{{2, 1.5}, {0, 0.5}, {1, 0.0}}};
  write_ranking_csv(r, layout, tmp / "rank.csv");
  EXPECT_EQ(testutil::read_file(tmp / "rank.csv"), "neuron,layer,importance\n2,1,1.5\n0,0,0.5\n1,0,0\n");
  const std::vector<LayerCount> hist = {{0, 1}, {1, 1}};
  write_histogram_csv(hist, tmp / "hist.csv");
  EXPECT_EQ(testutil::read_file(tmp / "hist.csv"), "layer,count\n0,1\n1,1\n");
  const auto svg = histogram_svg(hist, "t");
  std::size_t bars = 0;
  for (auto p = svg.find("class=\"bar\""); p != std::string::npos; p = svg.find("class=\"bar\"", p + 1)) ++bars;
  EXPECT_EQ(bars, 2u);
}
