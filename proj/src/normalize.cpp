#include "embproc/normalize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "embproc/error.hpp"
#include "embproc/parallel.hpp"

namespace embproc {

namespace {

void require_dim(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim) {
    throw DataError(std::string(what) + ": vector has " + std::to_string(v.size()) + " entries, expected " +
                    std::to_string(dim));
  }
}

void require_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError("non-finite value in occurrence vector");
  }
}

constexpr std::size_t kBlockRows = 1024;

}  // namespace

// ---------------------------------------------------------------------------
// Moments

MomentAccumulator::MomentAccumulator(std::size_t dim)
    : dim_(dim), mean_(dim, 0.0), m2_(dim, 0.0), min_(dim, 0.0), max_(dim, 0.0) {}

void MomentAccumulator::add(std::span<const double> v) {
  require_dim(v, dim_, "fit_stats");
  require_finite(v);
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t j = 0; j < dim_; ++j) {
    const double x = v[j];
    const double delta = x - mean_[j];
    mean_[j] += delta / n;
    m2_[j] += delta * (x - mean_[j]);
    if (count_ == 1) {
      min_[j] = max_[j] = x;
    } else {
      min_[j] = std::min(min_[j], x);
      max_[j] = std::max(max_[j], x);
    }
  }
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.dim_ != dim_) throw DataError("cannot merge moment accumulators of different dims");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (std::size_t j = 0; j < dim_; ++j) {
    const double delta = other.mean_[j] - mean_[j];
    mean_[j] += delta * nb / n;
    m2_[j] += other.m2_[j] + delta * delta * na * nb / n;
    min_[j] = std::min(min_[j], other.min_[j]);
    max_[j] = std::max(max_[j], other.max_[j]);
  }
  count_ += other.count_;
}

FeatureStats MomentAccumulator::finish() const {
  if (count_ == 0) throw DataError("cannot fit statistics on an empty occurrence set");
  FeatureStats s;
  s.dim = dim_;
  s.count = count_;
  s.min = min_;
  s.max = max_;
  s.mean.resize(dim_);
  s.std.resize(dim_);
  const double n = static_cast<double>(count_);
  for (std::size_t j = 0; j < dim_; ++j) {
    s.mean[j] = std::clamp(mean_[j], min_[j], max_[j]);
    s.std[j] = std::sqrt(std::max(0.0, m2_[j]) / n);
  }
  return s;
}

FeatureStats fit_stats(const Matrix& occurrences) {
  MomentAccumulator acc(occurrences.cols());
  for (std::size_t i = 0; i < occurrences.rows(); ++i) acc.add(occurrences.row(i));
  return acc.finish();
}

std::vector<double> apply_zscore(std::span<const double> v, const FeatureStats& stats) {
  require_dim(v, stats.dim, "zscore");
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    out[j] = stats.std[j] > kDegenerateEps ? (v[j] - stats.mean[j]) / stats.std[j] : 0.0;
  }
  return out;
}

std::vector<double> apply_minmax(std::span<const double> v, const FeatureStats& stats) {
  require_dim(v, stats.dim, "minmax");
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double range = stats.max[j] - stats.min[j];
    out[j] = range > kDegenerateEps ? (v[j] - stats.min[j]) / range : 0.0;
  }
  return out;
}

bool is_degenerate_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss) <= kDegenerateEps;
}

std::vector<double> apply_ulen(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double norm = std::sqrt(ss);
  std::vector<double> out(v.begin(), v.end());
  if (norm <= kDegenerateEps) return out;
  for (double& x : out) x /= norm;
  return out;
}

// ---------------------------------------------------------------------------
// Covariance

CovarianceAccumulator::CovarianceAccumulator(std::size_t dim)
    : dim_(dim), mean_(dim, 0.0), comoment_(dim * dim, 0.0) {}

void CovarianceAccumulator::add(std::span<const double> v) {
  require_dim(v, dim_, "covariance");
  Matrix one(1, dim_);
  std::copy(v.begin(), v.end(), one.row(0).begin());
  add_rows(one, 0, 1);
}

void CovarianceAccumulator::add_rows(const Matrix& rows, std::size_t begin, std::size_t end) {
  if (rows.cols() != dim_) throw DataError("covariance: row width does not match accumulator dim");
  for (std::size_t b = begin; b < end; b += kBlockRows) {
    const std::size_t e = std::min(end, b + kBlockRows);
    const auto n = static_cast<Eigen::Index>(e - b);
    const auto d = static_cast<Eigen::Index>(dim_);
    for (std::size_t i = b; i < e; ++i) require_finite(rows.row(i));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> block(
        rows.row(b).data(), n, d);

    CovarianceAccumulator part(dim_);
    part.count_ = static_cast<std::uint64_t>(n);
    Eigen::VectorXd mu = block.colwise().mean().transpose();
    Eigen::MatrixXd centered = block.rowwise() - mu.transpose();
    Eigen::MatrixXd cm = centered.transpose() * centered;
    Eigen::Map<Eigen::VectorXd>(part.mean_.data(), d) = mu;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(part.comoment_.data(), d,
                                                                                        d) = cm;
    merge(part);
  }
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other) {
  if (other.dim_ != dim_) throw DataError("cannot merge covariance accumulators of different dims");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  std::vector<double> delta(dim_);
  for (std::size_t j = 0; j < dim_; ++j) delta[j] = other.mean_[j] - mean_[j];
  const double w = na * nb / n;
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      comoment_[i * dim_ + j] += other.comoment_[i * dim_ + j] + delta[i] * delta[j] * w;
    }
  }
  for (std::size_t j = 0; j < dim_; ++j) mean_[j] += delta[j] * nb / n;
  count_ += other.count_;
}

std::vector<double> CovarianceAccumulator::covariance() const {
  if (count_ == 0) throw DataError("covariance of an empty set");
  std::vector<double> cov(dim_ * dim_);
  const double n = static_cast<double>(count_);
  // Symmetrize to remove rounding asymmetry from the merges.
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      cov[i * dim_ + j] = 0.5 * (comoment_[i * dim_ + j] + comoment_[j * dim_ + i]) / n;
    }
  }
  return cov;
}

// ---------------------------------------------------------------------------
// All-but-the-top

std::size_t default_abtt_k(std::size_t dim) { return dim / 100; }

AbttModel fit_abtt(const Matrix& occurrences, std::size_t k) {
  const std::size_t d = occurrences.cols();
  if (k > d) throw DataError("abtt: k=" + std::to_string(k) + " exceeds dim " + std::to_string(d));
  if (occurrences.rows() < 2) throw DataError("abtt needs at least 2 occurrence vectors");

  CovarianceAccumulator acc(d);
  acc.add_rows(occurrences, 0, occurrences.rows());

  AbttModel model;
  model.dim = d;
  model.mean = acc.mean();
  model.components = Matrix(k, d);
  model.eigenvalues.assign(k, 0.0);
  if (k == 0) return model;

  const auto cov = acc.covariance();
  const auto di = static_cast<Eigen::Index>(d);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> cm(cov.data(), di, di);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cm);
  if (solver.info() != Eigen::Success) throw DataError("abtt: covariance eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  for (std::size_t i = 0; i < k; ++i) {
    const Eigen::Index col = di - 1 - static_cast<Eigen::Index>(i);
    model.eigenvalues[i] = std::max(0.0, solver.eigenvalues()(col));
    auto comp = model.components.row(i);
    std::size_t arg = 0;
    for (std::size_t j = 0; j < d; ++j) {
      comp[j] = solver.eigenvectors()(static_cast<Eigen::Index>(j), col);
      if (std::abs(comp[j]) > std::abs(comp[arg])) arg = j;
    }
    if (comp[arg] < 0) {
      for (double& x : comp) x = -x;
    }
  }
  return model;
}

std::vector<double> apply_abtt(std::span<const double> v, const AbttModel& model) {
  require_dim(v, model.dim, "abtt");
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] - model.mean[j];
  std::vector<double> proj(model.k(), 0.0);
  for (std::size_t i = 0; i < model.k(); ++i) {
    const auto u = model.components.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) dot += u[j] * out[j];
    proj[i] = dot;
  }
  for (std::size_t i = 0; i < model.k(); ++i) {
    const auto u = model.components.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) out[j] -= proj[i] * u[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

const char* step_name(StepKind kind) {
  switch (kind) {
    case StepKind::zscore: return "zscore";
    case StepKind::minmax: return "minmax";
    case StepKind::ulen: return "ulen";
    case StepKind::abtt: return "abtt";
  }
  return "?";
}

}  // namespace

Pipeline Pipeline::parse(std::string_view spec) {
  Pipeline p;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = spec.find(',', pos);
    const std::string_view item = trim(spec.substr(pos, comma == std::string_view::npos ? spec.npos : comma - pos));
    if (item.empty()) throw UsageError("empty step in pipeline spec '" + std::string(spec) + "'");
    StepSpec step;
    std::string_view name = item;
    std::string_view arg;
    if (const auto colon = item.find(':'); colon != std::string_view::npos) {
      name = item.substr(0, colon);
      arg = item.substr(colon + 1);
    }
    if (name == "zscore") {
      step.kind = StepKind::zscore;
    } else if (name == "minmax") {
      step.kind = StepKind::minmax;
    } else if (name == "ulen") {
      step.kind = StepKind::ulen;
    } else if (name == "abtt") {
      step.kind = StepKind::abtt;
    } else {
      throw UsageError("unknown pipeline step '" + std::string(name) + "' (expected zscore, minmax, ulen, abtt[:k])");
    }
    if (!arg.empty() || item.find(':') != std::string_view::npos) {
      if (step.kind != StepKind::abtt) throw UsageError("step '" + std::string(name) + "' takes no argument");
      std::size_t k = 0;
      auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), k);
      if (ec != std::errc() || ptr != arg.data() + arg.size()) {
        throw UsageError("abtt needs a non-negative integer k, got '" + std::string(arg) + "'");
      }
      step.k = k;
    }
    p.steps.push_back(step);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return p;
}

std::string Pipeline::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) s += ',';
    s += step_name(steps[i].kind);
    if (steps[i].k) s += ":" + std::to_string(*steps[i].k);
  }
  return s;
}

std::string Pipeline::tag() const {
  std::string s;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) s += '+';
    s += step_name(steps[i].kind);
    if (steps[i].k) s += std::to_string(*steps[i].k);
  }
  return s;
}

namespace {

std::vector<double> apply_step(std::span<const double> v, const FittedStep& step) {
  return std::visit(
      [&](const auto& s) -> std::vector<double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ZscoreStep>) {
          return apply_zscore(v, s.stats);
        } else if constexpr (std::is_same_v<T, MinmaxStep>) {
          return apply_minmax(v, s.stats);
        } else if constexpr (std::is_same_v<T, UlenStep>) {
          return apply_ulen(v);
        } else {
          return apply_abtt(v, s.model);
        }
      },
      step);
}

FittedStep fit_step(const Matrix& data, const StepSpec& spec) {
  switch (spec.kind) {
    case StepKind::zscore: return ZscoreStep{fit_stats(data)};
    case StepKind::minmax: return MinmaxStep{fit_stats(data)};
    case StepKind::ulen:
      if (data.empty()) throw DataError("cannot fit a pipeline on an empty occurrence set");
      return UlenStep{};
    case StepKind::abtt: return AbttStep{fit_abtt(data, spec.k.value_or(default_abtt_k(data.cols())))};
  }
  throw DataError("unknown step kind");
}

ApplyDiagnostics apply_step_rows(Matrix& rows, const FittedStep& step, unsigned threads) {
  const bool is_ulen = std::holds_alternative<UlenStep>(step);
  std::vector<unsigned char> zero(is_ulen ? rows.rows() : 0, 0);
  parallel_for(rows.rows(), threads, [&](std::size_t i) {
    auto row = rows.row(i);
    if (is_ulen && is_degenerate_norm(row)) zero[i] = 1;
    const auto out = apply_step(row, step);
    std::copy(out.begin(), out.end(), row.begin());
  });
  ApplyDiagnostics diag;
  for (unsigned char z : zero) diag.zero_norm_vectors += z;
  return diag;
}

}  // namespace

FittedPipeline fit_pipeline(const Matrix& occurrences, const Pipeline& pipeline) {
  if (pipeline.steps.empty()) throw UsageError("pipeline has no steps");
  FittedPipeline fitted;
  fitted.dim = occurrences.cols();
  Matrix work = occurrences;
  for (std::size_t i = 0; i < pipeline.steps.size(); ++i) {
    fitted.steps.push_back(fit_step(work, pipeline.steps[i]));
    if (i + 1 < pipeline.steps.size()) apply_step_rows(work, fitted.steps.back(), 1);
  }
  return fitted;
}

std::vector<double> apply_pipeline(std::span<const double> v, const FittedPipeline& fitted) {
  require_dim(v, fitted.dim, "pipeline");
  std::vector<double> cur(v.begin(), v.end());
  for (const auto& step : fitted.steps) cur = apply_step(cur, step);
  return cur;
}

ApplyDiagnostics apply_pipeline(Matrix& rows, const FittedPipeline& fitted, unsigned threads) {
  if (!rows.empty() && rows.cols() != fitted.dim) {
    throw DataError("pipeline fitted for dim " + std::to_string(fitted.dim) + " applied to dim " +
                    std::to_string(rows.cols()));
  }
  ApplyDiagnostics total;
  for (const auto& step : fitted.steps) total.zero_norm_vectors += apply_step_rows(rows, step, threads).zero_norm_vectors;
  return total;
}

// ---------------------------------------------------------------------------
// .npf sidecar
//
// "NPF1" | version u32 = 1 | dim u32 | n_steps u32 | steps...
// step: kind u32 | payload
//   zscore, minmax: count u64 | mean | std | min | max   (dim x f64 each)
//   ulen:           (empty)
//   abtt:           k u32 | mean (dim) | eigenvalues (k) | components (k x dim)

namespace {

constexpr char kNpfMagic[4] = {'N', 'P', 'F', '1'};
constexpr std::uint32_t kNpfVersion = 1;

void put_doubles(std::vector<char>& out, std::span<const double> v) {
  for (double x : v) detail::put_f64(out, x);
}

void put_stats(std::vector<char>& out, const FeatureStats& s) {
  detail::put_u64(out, s.count);
  put_doubles(out, s.mean);
  put_doubles(out, s.std);
  put_doubles(out, s.min);
  put_doubles(out, s.max);
}

class NpfCursor {
 public:
  NpfCursor(std::vector<char> bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CorruptionError(where_ + ": truncated pipeline model", pos_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return detail::get_u32(take(4)); }
  std::uint64_t u64() { return detail::get_u64(take(8)); }
  std::vector<double> doubles(std::size_t n) {
    const char* p = take(8 * n);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = detail::get_f64(p + 8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  const std::string& where() const { return where_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string where_;
};

FeatureStats get_stats(NpfCursor& c, std::size_t dim) {
  FeatureStats s;
  s.dim = dim;
  s.count = c.u64();
  s.mean = c.doubles(dim);
  s.std = c.doubles(dim);
  s.min = c.doubles(dim);
  s.max = c.doubles(dim);
  return s;
}

}  // namespace

void write_fitted_pipeline(const FittedPipeline& fitted, const std::filesystem::path& path) {
  std::vector<char> out(kNpfMagic, kNpfMagic + 4);
  detail::put_u32(out, kNpfVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(fitted.dim));
  detail::put_u32(out, static_cast<std::uint32_t>(fitted.steps.size()));
  for (const auto& step : fitted.steps) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ZscoreStep>) {
            detail::put_u32(out, static_cast<std::uint32_t>(StepKind::zscore));
            put_stats(out, s.stats);
          } else if constexpr (std::is_same_v<T, MinmaxStep>) {
            detail::put_u32(out, static_cast<std::uint32_t>(StepKind::minmax));
            put_stats(out, s.stats);
          } else if constexpr (std::is_same_v<T, UlenStep>) {
            detail::put_u32(out, static_cast<std::uint32_t>(StepKind::ulen));
          } else {
            detail::put_u32(out, static_cast<std::uint32_t>(StepKind::abtt));
            detail::put_u32(out, static_cast<std::uint32_t>(s.model.k()));
            put_doubles(out, s.model.mean);
            put_doubles(out, s.model.eigenvalues);
            put_doubles(out, s.model.components.data());
          }
        },
        step);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot create " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

FittedPipeline read_fitted_pipeline(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open pipeline model " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  NpfCursor c(std::move(bytes), path.string());
  if (std::memcmp(c.take(4), kNpfMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, not an NPF1 model");
  if (const auto v = c.u32(); v != kNpfVersion) {
    throw FormatError(path.string() + ": unsupported model version " + std::to_string(v));
  }
  FittedPipeline fitted;
  fitted.dim = c.u32();
  const std::uint32_t n_steps = c.u32();
  for (std::uint32_t i = 0; i < n_steps; ++i) {
    const std::uint32_t kind = c.u32();
    switch (static_cast<StepKind>(kind)) {
      case StepKind::zscore: fitted.steps.emplace_back(ZscoreStep{get_stats(c, fitted.dim)}); break;
      case StepKind::minmax: fitted.steps.emplace_back(MinmaxStep{get_stats(c, fitted.dim)}); break;
      case StepKind::ulen: fitted.steps.emplace_back(UlenStep{}); break;
      case StepKind::abtt: {
        const std::uint32_t k = c.u32();
        if (k > fitted.dim) throw FormatError(path.string() + ": abtt k exceeds dim");
        AbttModel m;
        m.dim = fitted.dim;
        m.mean = c.doubles(fitted.dim);
        m.eigenvalues = c.doubles(k);
        m.components = Matrix(k, fitted.dim);
        const auto comps = c.doubles(static_cast<std::size_t>(k) * fitted.dim);
        std::copy(comps.begin(), comps.end(), m.components.data().begin());
        fitted.steps.emplace_back(AbttStep{std::move(m)});
        break;
      }
      default: throw FormatError(path.string() + ": unknown step kind " + std::to_string(kind));
    }
  }
  if (!c.done()) throw FormatError(path.string() + ": trailing bytes after pipeline model");
  return fitted;
}

}  // namespace embproc
