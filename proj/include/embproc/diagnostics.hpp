#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "embproc/embstore.hpp"
#include "embproc/matrix.hpp"

namespace embproc {

struct LayerVariance {
  std::uint32_t layer = 0;
  double mean_var = 0.0;
  double max_var = 0.0;
  double min_var = 0.0;
  std::vector<double> feature_var;
};

struct LayerVarianceProfile {
  std::string model;
  std::vector<LayerVariance> entries;  // sorted by layer, unique
};

// Per-feature population variance over every record.
LayerVariance layer_variance(const OccurrenceShard& shard);
LayerVariance layer_variance(std::uint32_t layer, const Matrix& occurrences);

// Sort entries by layer; throws DataError on duplicate layers.
void sort_profile(LayerVarianceProfile& profile);

struct VarianceReportOptions {
  // Plotted values above this are clipped to it.
  std::optional<double> y_limit;
};

// Writes <dir>/layer_variance.csv (model,layer,mean_var,max_var,min_var) and
// <dir>/layer_variance.svg with one polyline per model.
void variance_report(const std::vector<LayerVarianceProfile>& profiles, const std::filesystem::path& dir,
                     const VarianceReportOptions& options = {});

std::string variance_csv(const std::vector<LayerVarianceProfile>& profiles);
std::string variance_svg(const std::vector<LayerVarianceProfile>& profiles,
                         const VarianceReportOptions& options = {});

}  // namespace embproc
