#include "embproc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "embproc/error.hpp"
#include "embproc/parallel.hpp"
#include "text_util.hpp"

namespace embproc {

namespace {

constexpr std::size_t kChunkRows = 256;
constexpr int kMaxHalvings = 60;

void validate_layout(std::span<const LayerSpan> layout, std::size_t num_features) {
  std::size_t expect = 0;
  std::set<std::uint32_t> layers;
  for (const auto& s : layout) {
    if (s.width == 0) throw DataError("layout span for layer " + std::to_string(s.layer) + " has zero width");
    if (s.offset != expect) {
      throw DataError("layout spans must be contiguous from 0; layer " + std::to_string(s.layer) + " starts at " +
                      std::to_string(s.offset) + ", expected " + std::to_string(expect));
    }
    if (!layers.insert(s.layer).second) throw DataError("layer " + std::to_string(s.layer) + " appears twice in layout");
    expect += s.width;
  }
  if (expect != num_features) {
    throw DataError("layout covers " + std::to_string(expect) + " features, data has " + std::to_string(num_features));
  }
}

// Adds the loss sum and un-normalized gradient of rows[begin, end) of `rows`
// (indices into ds) into the given accumulators.
void accumulate_chunk(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias,
                      std::span<const std::size_t> rows, double& loss, Matrix& gw, std::vector<double>& gb) {
  const std::size_t C = weights.rows();
  const std::size_t D = weights.cols();
  std::vector<double> logits(C);
  for (std::size_t r : rows) {
    const auto x = ds.features.row(r);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
      const auto w = weights.row(c);
      double z = bias[c];
      for (std::size_t j = 0; j < D; ++j) z += w[j] * x[j];
      logits[c] = z;
      mx = std::max(mx, z);
    }
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(logits[c] - mx);
    const double lse = mx + std::log(se);
    const std::size_t y = ds.labels[r];
    loss += lse - logits[y];
    for (std::size_t c = 0; c < C; ++c) {
      const double g = std::exp(logits[c] - lse) - (c == y ? 1.0 : 0.0);
      gb[c] += g;
      if (g == 0.0) continue;
      auto gr = gw.row(c);
      for (std::size_t j = 0; j < D; ++j) gr[j] += g * x[j];
    }
  }
}

// Mean cross-entropy over the given row indices. Chunks of kChunkRows are
// evaluated (in parallel, `threads` at a time) and summed in chunk order, so
// the result is bitwise independent of the thread count.
SmoothLoss smooth_loss(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias,
                       std::span<const std::size_t> rows, unsigned threads) {
  const std::size_t C = weights.rows();
  const std::size_t D = weights.cols();
  SmoothLoss out;
  out.grad_weights = Matrix(C, D);
  out.grad_bias.assign(C, 0.0);
  const std::size_t n_chunks = (rows.size() + kChunkRows - 1) / kChunkRows;
  const std::size_t group = std::max(1u, threads);

  std::vector<double> loss(group);
  std::vector<Matrix> gw(group, Matrix(C, D));
  std::vector<std::vector<double>> gb(group, std::vector<double>(C));
  for (std::size_t base = 0; base < n_chunks; base += group) {
    const std::size_t count = std::min(group, n_chunks - base);
    parallel_for(count, threads, [&](std::size_t t) {
      loss[t] = 0.0;
      std::fill(gw[t].data().begin(), gw[t].data().end(), 0.0);
      std::fill(gb[t].begin(), gb[t].end(), 0.0);
      const std::size_t b = (base + t) * kChunkRows;
      const std::size_t e = std::min(rows.size(), b + kChunkRows);
      accumulate_chunk(ds, weights, bias, rows.subspan(b, e - b), loss[t], gw[t], gb[t]);
    });
    for (std::size_t t = 0; t < count; ++t) {
      out.value += loss[t];
      auto dst = out.grad_weights.data();
      const auto src = gw[t].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      for (std::size_t c = 0; c < C; ++c) out.grad_bias[c] += gb[t][c];
    }
  }
  const double n = static_cast<double>(rows.size());
  out.value /= n;
  for (double& g : out.grad_weights.data()) g /= n;
  for (double& g : out.grad_bias) g /= n;
  return out;
}

double penalty(const Matrix& weights, double l1, double l2) {
  double a = 0.0, q = 0.0;
  for (double w : weights.data()) {
    a += std::abs(w);
    q += w * w;
  }
  return l1 * a + l2 * q;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

void check_config(const ProbeConfig& cfg) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw UsageError("probe learning rate must be > 0");
  if (cfg.epochs < 1) throw UsageError("probe needs at least 1 epoch");
  if (!(cfg.l1 >= 0.0) || !(cfg.l2 >= 0.0)) throw UsageError("probe penalties must be non-negative");
}

[[noreturn]] void diverged(double lr) {
  throw DataError("probe training diverged (non-finite loss) at lr=" + detail::format_double(lr) +
                  "; try a smaller --lr or standardized features");
}

}  // namespace

void ProbeDataset::validate() const {
  if (features.rows() != labels.size()) {
    throw DataError("probe dataset has " + std::to_string(features.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (label_names.size() < 2) throw DataError("probe needs at least 2 classes");
  std::vector<std::size_t> per_class(label_names.size(), 0);
  for (std::size_t y : labels) {
    if (y >= label_names.size()) throw DataError("label id " + std::to_string(y) + " out of range");
    ++per_class[y];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) throw DataError("class '" + label_names[c] + "' has no samples");
  }
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw DataError("non-finite probe feature");
  }
  validate_layout(layout, features.cols());
}

std::size_t ProbeModel::predict(std::span<const double> x) const {
  std::size_t best = 0;
  double best_z = -INFINITY;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto w = weights.row(c);
    double z = bias[c];
    for (std::size_t j = 0; j < num_features; ++j) z += w[j] * x[j];
    if (z > best_z) {
      best_z = z;
      best = c;
    }
  }
  return best;
}

double ProbeModel::accuracy(const ProbeDataset& ds) const {
  if (ds.features.rows() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.features.rows(); ++i) ok += predict(ds.features.row(i)) == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.features.rows());
}

SmoothLoss cross_entropy(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias,
                         unsigned threads) {
  if (weights.cols() != ds.features.cols() || weights.rows() != bias.size()) {
    throw DataError("probe parameters do not match the dataset shape");
  }
  if (ds.features.rows() == 0) throw DataError("probe dataset is empty");
  const auto rows = all_rows(ds.features.rows());
  return smooth_loss(ds, weights, bias, rows, threads);
}

double probe_objective(const ProbeDataset& ds, const Matrix& weights, std::span<const double> bias, double l1,
                       double l2, unsigned threads) {
  return cross_entropy(ds, weights, bias, threads).value + penalty(weights, l1, l2);
}

ProbeModel train_probe(const ProbeDataset& ds, const ProbeConfig& cfg) {
  check_config(cfg);
  ds.validate();
  const std::size_t C = ds.num_classes();
  const std::size_t D = ds.features.cols();
  const std::size_t N = ds.features.rows();

  ProbeModel model;
  model.num_classes = C;
  model.num_features = D;
  model.weights = Matrix(C, D);
  model.bias.assign(C, 0.0);
  model.l1 = cfg.l1;
  model.l2 = cfg.l2;
  model.seed = cfg.seed;

  const auto rows = all_rows(N);
  double lr = cfg.lr;
  SmoothLoss current = smooth_loss(ds, model.weights, model.bias, rows, cfg.threads);
  double objective = current.value + penalty(model.weights, cfg.l1, cfg.l2);
  if (!std::isfinite(objective)) diverged(lr);

  // One proximal gradient step from (w, b) with gradient g.
  auto step = [&](const Matrix& w, const std::vector<double>& b, const SmoothLoss& g, double rate, Matrix& w_out,
                  std::vector<double>& b_out) {
    w_out = w;
    b_out = b;
    auto wo = w_out.data();
    const auto gw = g.grad_weights.data();
    const auto wi = w.data();
    for (std::size_t i = 0; i < wo.size(); ++i) {
      wo[i] = soft_threshold(wi[i] - rate * (gw[i] + 2.0 * cfg.l2 * wi[i]), rate * cfg.l1);
    }
    for (std::size_t c = 0; c < C; ++c) b_out[c] = b[c] - rate * g.grad_bias[c];
  };

  const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < N;
  std::mt19937_64 rng(cfg.seed);
  Matrix w_next;
  std::vector<double> b_next;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (minibatch) {
      std::vector<std::size_t> order = rows;
      for (std::size_t i = N - 1; i > 0; --i) {
        const std::uint64_t range = i + 1;
        const std::uint64_t threshold = (0 - range) % range;
        std::uint64_t x;
        do x = rng(); while (x < threshold);
        std::swap(order[i], order[x % range]);
      }
      for (std::size_t b = 0; b < N; b += cfg.batch_size) {
        const std::size_t e = std::min(N, b + cfg.batch_size);
        const auto g = smooth_loss(ds, model.weights, model.bias, std::span(order).subspan(b, e - b), cfg.threads);
        step(model.weights, model.bias, g, lr, w_next, b_next);
        model.weights = std::move(w_next);
        model.bias = std::move(b_next);
      }
      current = smooth_loss(ds, model.weights, model.bias, rows, cfg.threads);
      objective = current.value + penalty(model.weights, cfg.l1, cfg.l2);
      if (!std::isfinite(objective)) diverged(lr);
    } else {
      bool accepted = false;
      bool saw_nonfinite = false;
      for (int h = 0; h <= kMaxHalvings; ++h) {
        step(model.weights, model.bias, current, lr, w_next, b_next);
        SmoothLoss cand = smooth_loss(ds, w_next, b_next, rows, cfg.threads);
        const double f = cand.value + penalty(w_next, cfg.l1, cfg.l2);
        if (std::isfinite(f) && f <= objective) {
          model.weights = std::move(w_next);
          model.bias = std::move(b_next);
          current = std::move(cand);
          objective = f;
          accepted = true;
          break;
        }
        saw_nonfinite = saw_nonfinite || !std::isfinite(f);
        lr *= 0.5;
      }
      if (!accepted) {
        if (saw_nonfinite && model.loss_history.empty() && epoch == 0) diverged(cfg.lr);
        // No decrease is possible at any representable step: converged.
        model.loss_history.push_back(objective);
        model.epochs = epoch + 1;
        break;
      }
    }
    model.loss_history.push_back(objective);
    model.epochs = epoch + 1;
  }
  model.final_loss = objective;
  model.final_lr = lr;
  return model;
}

NeuronRanking rank_neurons(const Matrix& weights) {
  NeuronRanking r;
  r.order.resize(weights.cols());
  for (std::size_t n = 0; n < weights.cols(); ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < weights.rows(); ++c) s += std::abs(weights(c, n));
    r.order[n] = {n, s};
  }
  std::stable_sort(r.order.begin(), r.order.end(),
                   [](const NeuronScore& a, const NeuronScore& b) { return a.importance > b.importance; });
  return r;
}

NeuronRanking rank_neurons(const ProbeModel& model) { return rank_neurons(model.weights); }

std::vector<std::size_t> select_salient(const NeuronRanking& ranking, double mass) {
  if (!(mass > 0.0 && mass <= 1.0)) throw UsageError("salient mass must be in (0, 1]");
  double total = 0.0;
  for (const auto& s : ranking.order) total += s.importance;
  if (!(total > 0.0)) throw DataError("cannot select salient neurons: total importance is 0");

  std::vector<std::size_t> out;
  if (mass == 1.0) {
    for (const auto& s : ranking.order) {
      if (s.importance > 0.0) out.push_back(s.neuron);
    }
    return out;
  }
  const double target = mass * total * (1.0 - 1e-12);
  double cum = 0.0;
  for (const auto& s : ranking.order) {
    out.push_back(s.neuron);
    cum += s.importance;
    if (cum >= target) break;
  }
  return out;
}

std::uint32_t layer_of(std::size_t neuron, std::span<const LayerSpan> layout) {
  for (const auto& s : layout) {
    if (neuron >= s.offset && neuron < s.offset + s.width) return s.layer;
  }
  throw DataError("neuron index " + std::to_string(neuron) + " is outside the feature layout");
}

std::vector<LayerCount> layer_distribution(std::span<const std::size_t> selected, std::span<const LayerSpan> layout) {
  std::size_t total = 0;
  for (const auto& s : layout) total = std::max(total, s.offset + s.width);
  validate_layout(layout, total);
  std::vector<LayerCount> hist;
  hist.reserve(layout.size());
  for (const auto& s : layout) hist.push_back({s.layer, 0});
  for (std::size_t n : selected) {
    if (n >= total) {
      throw DataError("neuron index " + std::to_string(n) + " out of range [0, " + std::to_string(total) + ")");
    }
    // spans are contiguous and ordered by offset
    const auto it = std::upper_bound(layout.begin(), layout.end(), n,
                                     [](std::size_t v, const LayerSpan& s) { return v < s.offset; });
    ++hist[static_cast<std::size_t>(it - layout.begin()) - 1].count;
  }
  return hist;
}

void write_ranking_csv(const NeuronRanking& ranking, std::span<const LayerSpan> layout,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << "neuron,layer,importance\n";
  for (const auto& s : ranking.order) {
    out << s.neuron << ',' << layer_of(s.neuron, layout) << ',' << detail::format_double(s.importance) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_histogram_csv(std::span<const LayerCount> histogram, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << "layer,count\n";
  for (const auto& h : histogram) out << h.layer << ',' << h.count << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string histogram_svg(std::span<const LayerCount> histogram, const std::string& title) {
  constexpr double W = 800, H = 500, L = 60, R = 20, T = 40, B = 50;
  std::size_t peak = 1;
  for (const auto& h : histogram) peak = std::max(peak, h.count);
  const double plot_w = W - L - R, plot_h = H - T - B;
  const double slot = histogram.empty() ? plot_w : plot_w / static_cast<double>(histogram.size());
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" width=\"800\" height=\"500\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n";
  std::string esc;
  for (char c : title) esc += c == '<' ? std::string("&lt;") : c == '&' ? std::string("&amp;") : std::string(1, c);
  s += "<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + esc + "</text>\n";
  s += "<line x1=\"" + f(L) + "\" y1=\"" + f(T + plot_h) + "\" x2=\"" + f(L + plot_w) + "\" y2=\"" + f(T + plot_h) +
       "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < histogram.size(); ++i) {
    const double h = plot_h * static_cast<double>(histogram[i].count) / static_cast<double>(peak);
    const double x = L + slot * static_cast<double>(i) + slot * 0.1;
    s += "<rect class=\"bar\" x=\"" + f(x) + "\" y=\"" + f(T + plot_h - h) + "\" width=\"" + f(slot * 0.8) +
         "\" height=\"" + f(h) + "\" fill=\"#1f77b4\"/>\n";
    s += "<text x=\"" + f(x + slot * 0.4) + "\" y=\"" + f(T + plot_h + 16) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + std::to_string(histogram[i].layer) + "</text>\n";
    s += "<text x=\"" + f(x + slot * 0.4) + "\" y=\"" + f(T + plot_h - h - 4) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + std::to_string(histogram[i].count) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace embproc
