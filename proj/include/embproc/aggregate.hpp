#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "embproc/embstore.hpp"

namespace embproc {

struct AggregationConfig {
  std::size_t min_contexts = 50;
  std::size_t max_contexts = 200;
  std::uint64_t seed = 42;

  void validate() const;
};

struct WordAggregation {
  std::string word;
  std::size_t n_total = 0;
  std::size_t n_used = 0;
  bool dropped = false;
};

struct AggregationReport {
  // One entry per distinct word, sorted by word.
  std::vector<WordAggregation> words;
  std::size_t dropped = 0;
};

struct AggregationResult {
  WordVectorTable table;
  AggregationReport report;
};

// Mean-pools each word's occurrence vectors. Words with fewer than
// min_contexts occurrences are dropped; words with more than max_contexts use
// a seeded uniform subsample of exactly max_contexts occurrences.
//
// A word's occurrences are first put in canonical order (sentence_id, then
// vector values), so the result does not depend on record order in the shard.
// Output rows are sorted by word.
AggregationResult aggregate(const OccurrenceShard& shard, const AggregationConfig& cfg,
                            unsigned threads = 1);

// Indices of `count` distinct positions drawn uniformly from [0, n), sorted
// ascending. Deterministic in (seed, word).
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t count, std::uint64_t seed,
                                          std::string_view word);

// CSV: word,n_total,n_used,dropped
void write_aggregation_report(const AggregationReport& report, const std::filesystem::path& path);

}  // namespace embproc
