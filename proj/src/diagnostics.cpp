#include "embproc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "embproc/error.hpp"
#include "embproc/normalize.hpp"
#include "text_util.hpp"

namespace embproc {

LayerVariance layer_variance(std::uint32_t layer, const Matrix& occurrences) {
  if (occurrences.rows() < 2) throw DataError("layer variance needs at least 2 occurrence vectors");
  const FeatureStats stats = fit_stats(occurrences);
  LayerVariance lv;
  lv.layer = layer;
  lv.feature_var.resize(stats.dim);
  double sum = 0.0;
  for (std::size_t j = 0; j < stats.dim; ++j) {
    lv.feature_var[j] = stats.std[j] * stats.std[j];
    sum += lv.feature_var[j];
  }
  if (stats.dim > 0) {
    lv.mean_var = sum / static_cast<double>(stats.dim);
    lv.max_var = *std::max_element(lv.feature_var.begin(), lv.feature_var.end());
    lv.min_var = *std::min_element(lv.feature_var.begin(), lv.feature_var.end());
  }
  return lv;
}

LayerVariance layer_variance(const OccurrenceShard& shard) {
  if (shard.records.size() < 2) throw DataError("layer variance needs at least 2 records");
  Matrix m(shard.records.size(), shard.dim);
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    const auto& r = shard.records[i];
    if (r.vector.size() != shard.dim) throw DataError("record for '" + r.word + "' has the wrong dimension");
    std::copy(r.vector.begin(), r.vector.end(), m.row(i).begin());
  }
  return layer_variance(shard.layer, m);
}

void sort_profile(LayerVarianceProfile& profile) {
  std::sort(profile.entries.begin(), profile.entries.end(),
            [](const LayerVariance& a, const LayerVariance& b) { return a.layer < b.layer; });
  for (std::size_t i = 1; i < profile.entries.size(); ++i) {
    if (profile.entries[i].layer == profile.entries[i - 1].layer) {
      throw DataError("model '" + profile.model + "' has layer " + std::to_string(profile.entries[i].layer) +
                      " twice");
    }
  }
}

std::string variance_csv(const std::vector<LayerVarianceProfile>& profiles) {
  std::string out = "model,layer,mean_var,max_var,min_var\n";
  for (const auto& p : profiles) {
    for (const auto& e : p.entries) {
      out += detail::csv_field(p.model) + "," + std::to_string(e.layer) + "," + detail::format_double(e.mean_var) +
             "," + detail::format_double(e.max_var) + "," + detail::format_double(e.min_var) + "\n";
    }
  }
  return out;
}

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string variance_svg(const std::vector<LayerVarianceProfile>& profiles, const VarianceReportOptions& options) {
  if (profiles.empty()) throw DataError("variance report needs at least one profile");
  std::uint32_t lo = UINT32_MAX, hi = 0;
  double ymax = 0.0;
  for (const auto& p : profiles) {
    for (const auto& e : p.entries) {
      lo = std::min(lo, e.layer);
      hi = std::max(hi, e.layer);
      ymax = std::max(ymax, e.mean_var);
    }
  }
  if (lo == UINT32_MAX) lo = hi = 0;
  if (options.y_limit) ymax = *options.y_limit;
  if (ymax <= 0.0) ymax = 1.0;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double span = hi > lo ? static_cast<double>(hi - lo) : 1.0;
  auto x_of = [&](std::uint32_t layer) { return kLeft + plot_w * static_cast<double>(layer - lo) / span; };
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - std::clamp(v, 0.0, ymax) / ymax); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" width=\"800\" height=\"500\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kLeft + plot_w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">Layer-wise variance</text>\n";
  // axes
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop + plot_h) + "\" x2=\"" + fmt(kLeft + plot_w) + "\" y2=\"" +
       fmt(kTop + plot_h) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kTop + plot_h) +
       "\" stroke=\"black\"/>\n";
  for (std::uint32_t l = lo; l <= hi; ++l) {
    s += "<text x=\"" + fmt(x_of(l)) + "\" y=\"" + fmt(kTop + plot_h + 18) + "\" text-anchor=\"middle\" font-size=\"11\">" +
         std::to_string(l) + "</text>\n";
    if (l == hi) break;
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    s += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(y_of(v) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         detail::format_double(std::round(v * 1000.0) / 1000.0) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kLeft + plot_w / 2) + "\" y=\"" + fmt(kHeight - 16) +
       "\" text-anchor=\"middle\" font-size=\"12\">layer</text>\n";

  for (std::size_t m = 0; m < profiles.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& e : profiles[m].entries) {
      if (!first) s += ' ';
      first = false;
      s += fmt(x_of(e.layer)) + "," + fmt(y_of(e.mean_var));
    }
    s += "\"/>\n";
  }
  s += "<g class=\"legend\">\n";
  for (std::size_t m = 0; m < profiles.size(); ++m) {
    const double y = kTop + 10 + 20.0 * static_cast<double>(m);
    const char* color = kPalette[m % std::size(kPalette)];
    s += "<rect x=\"" + fmt(kWidth - kRight + 20) + "\" y=\"" + fmt(y - 8) + "\" width=\"14\" height=\"4\" fill=\"" +
         color + "\"/>\n";
    s += "<text x=\"" + fmt(kWidth - kRight + 40) + "\" y=\"" + fmt(y) + "\" font-size=\"12\">" +
         xml_escape(profiles[m].model) + "</text>\n";
  }
  s += "</g>\n</svg>\n";
  return s;
}

void variance_report(const std::vector<LayerVarianceProfile>& profiles, const std::filesystem::path& dir,
                     const VarianceReportOptions& options) {
  if (profiles.empty()) throw DataError("variance report needs at least one profile");
  const std::string csv = variance_csv(profiles);
  const std::string svg = variance_svg(profiles, options);
  for (const auto& [name, body] : {std::pair{"layer_variance.csv", &csv}, std::pair{"layer_variance.svg", &svg}}) {
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(body->data(), static_cast<std::streamsize>(body->size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
}

}  // namespace embproc
