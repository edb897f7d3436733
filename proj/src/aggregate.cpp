#include "embproc/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "embproc/error.hpp"
#include "embproc/parallel.hpp"
#include "text_util.hpp"

namespace embproc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Uniform integer in [0, range), range >= 1.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t range) {
  const std::uint64_t threshold = (0 - range) % range;
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % range;
  }
}

bool canonical_less(const OccurrenceRecord& a, const OccurrenceRecord& b) {
  if (a.sentence_id != b.sentence_id) return a.sentence_id < b.sentence_id;
  return std::lexicographical_compare(a.vector.begin(), a.vector.end(), b.vector.begin(), b.vector.end());
}

}  // namespace

void AggregationConfig::validate() const {
  if (min_contexts < 1) throw UsageError("min_contexts must be at least 1");
  if (max_contexts < min_contexts) throw UsageError("max_contexts must be >= min_contexts");
}

std::vector<std::size_t> sample_positions(std::size_t n, std::size_t count, std::uint64_t seed,
                                          std::string_view word) {
  count = std::min(count, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == n) return idx;
  std::mt19937_64 rng(splitmix64(seed ^ fnv1a(word)));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AggregationResult aggregate(const OccurrenceShard& shard, const AggregationConfig& cfg, unsigned threads) {
  cfg.validate();
  std::map<std::string_view, std::vector<std::size_t>> by_word;
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    const auto& r = shard.records[i];
    if (r.vector.size() != shard.dim) {
      throw DataError("record for '" + r.word + "' has " + std::to_string(r.vector.size()) +
                      " values, shard header says dim " + std::to_string(shard.dim));
    }
    by_word[r.word].push_back(i);
  }

  std::vector<std::pair<std::string_view, std::vector<std::size_t>*>> groups;
  groups.reserve(by_word.size());
  for (auto& [word, positions] : by_word) groups.emplace_back(word, &positions);

  const std::size_t dim = shard.dim;
  std::vector<WordAggregation> info(groups.size());
  std::vector<std::vector<double>> means(groups.size());

  parallel_for(groups.size(), threads, [&](std::size_t g) {
    auto& positions = *groups[g].second;
    const std::string_view word = groups[g].first;
    WordAggregation& wa = info[g];
    wa.word = std::string(word);
    wa.n_total = positions.size();
    if (positions.size() < cfg.min_contexts) {
      wa.dropped = true;
      return;
    }
    std::sort(positions.begin(), positions.end(), [&](std::size_t a, std::size_t b) {
      return canonical_less(shard.records[a], shard.records[b]);
    });
    const auto chosen = sample_positions(positions.size(), cfg.max_contexts, cfg.seed, word);
    wa.n_used = chosen.size();

    // Neumaier-compensated sums in a fixed order.
    std::vector<double> sum(dim, 0.0), comp(dim, 0.0);
    for (std::size_t c : chosen) {
      const auto& v = shard.records[positions[c]].vector;
      for (std::size_t j = 0; j < dim; ++j) {
        const double x = v[j];
        const double t = sum[j] + x;
        if (std::abs(sum[j]) >= std::abs(x)) {
          comp[j] += (sum[j] - t) + x;
        } else {
          comp[j] += (x - t) + sum[j];
        }
        sum[j] = t;
      }
    }
    auto& mean = means[g];
    mean.resize(dim);
    const double n = static_cast<double>(chosen.size());
    for (std::size_t j = 0; j < dim; ++j) mean[j] = (sum[j] + comp[j]) / n;
  });

  AggregationResult result;
  result.table = WordVectorTable(dim, "layer=" + std::to_string(shard.layer) + " agg=mean min=" +
                                          std::to_string(cfg.min_contexts) + " max=" +
                                          std::to_string(cfg.max_contexts) + " seed=" + std::to_string(cfg.seed));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (info[g].dropped) {
      ++result.report.dropped;
    } else {
      result.table.add(info[g].word, std::move(means[g]));
    }
  }
  result.report.words = std::move(info);
  return result;
}

void write_aggregation_report(const AggregationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << "word,n_total,n_used,dropped\n";
  for (const auto& w : report.words) {
    out << detail::csv_field(w.word) << ',' << w.n_total << ',' << w.n_used << ',' << (w.dropped ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace embproc
