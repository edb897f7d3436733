#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "embproc/embstore.hpp"
#include "embproc/error.hpp"

namespace embproc {

// Raised by cosine() when both vectors are zero. Evaluators treat it like an
// out-of-vocabulary pair.
class UndefinedSimilarity : public DataError {
 public:
  using DataError::DataError;
};

struct WordPair {
  std::string word1;
  std::string word2;
  double score = 0.0;
};

struct SimilarityDataset {
  std::string name;
  std::vector<WordPair> pairs;
};

struct AnalogyQuestion {
  std::string a, b, c, d;
  std::string section;
};

struct AnalogyDataset {
  std::string name;
  std::vector<AnalogyQuestion> questions;
};

enum class Metric { spearman, accuracy };
const char* metric_name(Metric m);

struct EvalResult {
  std::string dataset;
  Metric metric = Metric::spearman;
  double value = 0.0;
  std::size_t n_used = 0;
  std::size_t n_skipped_oov = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

// Clamped to [-1, 1].
double cosine(std::span<const double> u, std::span<const double> v);

// 1-based ranks, ties get the average of the positions they span.
std::vector<double> average_ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

EvalResult eval_similarity(const WordVectorTable& table, const SimilarityDataset& ds);

struct AnalogyPrediction {
  std::size_t question = 0;
  std::string predicted;
  bool correct = false;
};

// 3CosAdd over the whole table vocabulary excluding a, b and c. Equal
// cosines resolve to the lexicographically smallest word.
EvalResult eval_analogy(const WordVectorTable& table, const AnalogyDataset& ds, unsigned threads = 1,
                        std::vector<AnalogyPrediction>* predictions = nullptr);

// Dataset name is the file stem. Words are case-folded.
SimilarityDataset load_similarity(const std::filesystem::path& path);
AnalogyDataset load_analogy(const std::filesystem::path& path);

double average_report(std::span<const EvalResult> results);
double average_report(std::span<const double> values);

// ASCII lowercase; non-ASCII bytes pass through.
std::string case_fold(std::string_view s);

// "dataset,metric,value,n_used,n_skipped"
std::string eval_csv_header();
std::string eval_csv_row(const EvalResult& r);

}  // namespace embproc
