#pragma once

// Post-processing of occurrence vectors: z-score, min-max, unit length and
// all-but-the-top, each fitted on an occurrence set and then applied per
// vector. Steps compose left to right into a pipeline.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "embproc/matrix.hpp"

namespace embproc {

inline constexpr double kDegenerateEps = 1e-12;

struct FeatureStats {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> std;  // population (1/N)
  std::vector<double> min;
  std::vector<double> max;
  std::uint64_t count = 0;

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

// Streaming per-feature moments (Welford). Partial accumulators over
// disjoint partitions merge exactly into the serial result up to rounding.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dim = 0);

  void add(std::span<const double> v);
  void merge(const MomentAccumulator& other);
  std::uint64_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }
  // Throws DataError when empty.
  FeatureStats finish() const;

 private:
  std::size_t dim_;
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
  std::vector<double> min_;
  std::vector<double> max_;
};

// Streaming mean and co-moment matrix. Rows are folded in blocks and blocks
// are combined with the pairwise update of Chan et al., so partial
// accumulators over disjoint partitions can be merged.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(std::size_t dim = 0);

  void add(std::span<const double> v);
  // Rows [begin, end) of `rows`.
  void add_rows(const Matrix& rows, std::size_t begin, std::size_t end);
  void merge(const CovarianceAccumulator& other);
  std::uint64_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  // Symmetric population covariance, row-major dim x dim.
  std::vector<double> covariance() const;

 private:
  std::size_t dim_;
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> comoment_;  // dim x dim
};

FeatureStats fit_stats(const Matrix& occurrences);

std::vector<double> apply_zscore(std::span<const double> v, const FeatureStats& stats);
std::vector<double> apply_minmax(std::span<const double> v, const FeatureStats& stats);
// Zero (norm <= eps) vectors come back unchanged.
std::vector<double> apply_ulen(std::span<const double> v);
bool is_degenerate_norm(std::span<const double> v);

struct AbttModel {
  std::size_t dim = 0;
  std::vector<double> mean;
  Matrix components;  // k x dim, orthonormal rows
  std::vector<double> eigenvalues;

  std::size_t k() const noexcept { return components.rows(); }
  friend bool operator==(const AbttModel&, const AbttModel&) = default;
};

// Top-k eigenvectors of the population covariance. Each component's largest
// magnitude entry is made positive.
AbttModel fit_abtt(const Matrix& occurrences, std::size_t k);
std::vector<double> apply_abtt(std::span<const double> v, const AbttModel& model);

// floor(dim / 100).
std::size_t default_abtt_k(std::size_t dim);

enum class StepKind : std::uint32_t { zscore = 1, minmax = 2, ulen = 3, abtt = 4 };

struct StepSpec {
  StepKind kind = StepKind::zscore;
  // abtt only. Unset means default_abtt_k(dim) at fit time.
  std::optional<std::size_t> k;

  friend bool operator==(const StepSpec&, const StepSpec&) = default;
};

struct Pipeline {
  std::vector<StepSpec> steps;

  // "abtt:7,zscore". Throws UsageError on unknown names or empty specs.
  static Pipeline parse(std::string_view spec);
  std::string to_string() const;
  // Filename-friendly tag, e.g. "abtt7+zscore".
  std::string tag() const;
};

struct UlenStep {
  friend bool operator==(const UlenStep&, const UlenStep&) = default;
};
struct ZscoreStep {
  FeatureStats stats;
  friend bool operator==(const ZscoreStep&, const ZscoreStep&) = default;
};
struct MinmaxStep {
  FeatureStats stats;
  friend bool operator==(const MinmaxStep&, const MinmaxStep&) = default;
};
struct AbttStep {
  AbttModel model;
  friend bool operator==(const AbttStep&, const AbttStep&) = default;
};
using FittedStep = std::variant<ZscoreStep, MinmaxStep, UlenStep, AbttStep>;

struct FittedPipeline {
  std::size_t dim = 0;
  std::vector<FittedStep> steps;

  friend bool operator==(const FittedPipeline&, const FittedPipeline&) = default;
};

struct ApplyDiagnostics {
  std::size_t zero_norm_vectors = 0;  // seen by ulen steps
};

// Step i is fitted on the occurrence set transformed by steps 0..i-1.
FittedPipeline fit_pipeline(const Matrix& occurrences, const Pipeline& pipeline);
std::vector<double> apply_pipeline(std::span<const double> v, const FittedPipeline& fitted);
// In-place over every row.
ApplyDiagnostics apply_pipeline(Matrix& rows, const FittedPipeline& fitted, unsigned threads = 1);

// .npf sidecar, float64 little-endian payloads.
void write_fitted_pipeline(const FittedPipeline& fitted, const std::filesystem::path& path);
FittedPipeline read_fitted_pipeline(const std::filesystem::path& path);

}  // namespace embproc
