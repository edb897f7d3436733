#pragma once

// Elastic-net multinomial logistic regression over raw occurrence features,
// plus weight-based neuron ranking and layer histograms of salient neurons.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "embproc/matrix.hpp"

namespace embproc {

struct LayerSpan {
  std::uint32_t layer = 0;
  std::size_t offset = 0;
  std::size_t width = 0;
};

struct ProbeDataset {
  Matrix features;                      // N x D
  std::vector<std::size_t> labels;      // class id per row
  std::vector<std::string> label_names;  // class id -> name
  std::vector<LayerSpan> layout;        // tiles [0, D)

  std::size_t num_classes() const noexcept { return label_names.size(); }
  // Throws DataError on inconsistent sizes, < 2 classes, empty classes or a
  // layout that does not tile the feature range.
  void validate() const;
};

struct ProbeConfig {
  double l1 = 1e-5;
  double l2 = 1e-5;
  std::size_t epochs = 200;
  double lr = 0.5;
  std::uint64_t seed = 42;
  // 0 means full batch. Mini-batch order is shuffled with `seed`.
  std::size_t batch_size = 0;
  unsigned threads = 1;
};

struct ProbeModel {
  std::size_t num_classes = 0;
  std::size_t num_features = 0;
  Matrix weights;            // classes x D
  std::vector<double> bias;  // classes
  double l1 = 0.0;
  double l2 = 0.0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double final_lr = 0.0;
  std::vector<double> loss_history;  // full objective after each epoch

  std::size_t predict(std::span<const double> x) const;
  double accuracy(const ProbeDataset& ds) const;
};

// Mean cross-entropy of softmax(W x + b) and its gradient. The penalty terms
// are not included.
struct SmoothLoss {
  double value = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};

SmoothLoss cross_entropy(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias,
                         unsigned threads = 1);
// Cross-entropy + l1*|W|_1 + l2*|W|_2^2.
double probe_objective(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias,
                       double l1, double l2, unsigned threads = 1);

ProbeModel train_probe(const ProbeDataset& ds, const ProbeConfig& cfg);

struct NeuronScore {
  std::size_t neuron = 0;
  double importance = 0.0;
};

struct NeuronRanking {
  std::vector<NeuronScore> order;  // non-increasing importance
};

// importance(n) = sum over classes of |W[c, n]|; ties keep the lower index first.
NeuronRanking rank_neurons(const ProbeModel& model);
NeuronRanking rank_neurons(const Matrix& weights);

// Smallest ranking prefix whose cumulative importance reaches mass * total.
std::vector<std::size_t> select_salient(const NeuronRanking& ranking, double mass);

struct LayerCount {
  std::uint32_t layer = 0;
  std::size_t count = 0;
  friend bool operator==(const LayerCount&, const LayerCount&) = default;
};

std::vector<LayerCount> layer_distribution(std::span<const std::size_t> selected,
                                           std::span<const LayerSpan> layout);
// Layer owning a global neuron index. Throws DataError when out of range.
std::uint32_t layer_of(std::size_t neuron, std::span<const LayerSpan> layout);

// neuron,layer,importance
void write_ranking_csv(const NeuronRanking& ranking, std::span<const LayerSpan> layout,
                       const std::filesystem::path& path);
// layer,count
void write_histogram_csv(std::span<const LayerCount> histogram, const std::filesystem::path& path);
std::string histogram_svg(std::span<const LayerCount> histogram, const std::string& title);

}  // namespace embproc
