#include "embproc/lexeval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "embproc/matrix.hpp"
#include "embproc/parallel.hpp"
#include "text_util.hpp"

namespace embproc {

const char* metric_name(Metric m) { return m == Metric::spearman ? "spearman" : "accuracy"; }

std::string case_fold(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DataError("cosine: dimension mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 && vv == 0.0) throw UndefinedSimilarity("cosine of two zero vectors is undefined");
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // positions i..j (0-based) share rank mean(i+1..j+1)
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DataError("spearman: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw DataError("spearman needs at least 2 observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DataError("spearman: non-finite input");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  // Both rank vectors have mean (n + 1) / 2.
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = rx[i] - mean;
    const double b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("spearman: zero rank variance (all values tied)");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// Case-folded lookup over a table; the first word wins when two fold together.
class FoldedIndex {
 public:
  explicit FoldedIndex(const WordVectorTable& table) {
    for (std::size_t i = 0; i < table.size(); ++i) index_.try_emplace(case_fold(table.word(i)), i);
  }
  const std::size_t* find(const std::string& folded) const {
    auto it = index_.find(folded);
    return it == index_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

void normalize_in_place(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) return;
  const double n = std::sqrt(ss);
  for (double& x : v) x /= n;
}

}  // namespace

EvalResult eval_similarity(const WordVectorTable& table, const SimilarityDataset& ds) {
  if (table.empty()) throw DataError("eval_similarity: empty word-vector table");
  const FoldedIndex index(table);
  EvalResult r;
  r.dataset = ds.name;
  r.metric = Metric::spearman;
  std::vector<double> model, human;
  for (const auto& p : ds.pairs) {
    const auto* i1 = index.find(case_fold(p.word1));
    const auto* i2 = index.find(case_fold(p.word2));
    if (!i1 || !i2) {
      ++r.n_skipped_oov;
      continue;
    }
    try {
      model.push_back(cosine(table.vector(*i1), table.vector(*i2)));
    } catch (const UndefinedSimilarity&) {
      ++r.n_skipped_oov;
      continue;
    }
    human.push_back(p.score);
  }
  r.n_used = model.size();
  if (r.n_used < 2) {
    throw DataError("eval_similarity on '" + ds.name + "': fewer than 2 in-vocabulary pairs (" +
                    std::to_string(r.n_used) + " of " + std::to_string(ds.pairs.size()) + ")");
  }
  r.value = spearman(model, human);
  return r;
}

EvalResult eval_analogy(const WordVectorTable& table, const AnalogyDataset& ds, unsigned threads,
                        std::vector<AnalogyPrediction>* predictions) {
  if (table.empty()) throw DataError("eval_analogy: empty word-vector table");
  const std::size_t dim = table.dim();
  const std::size_t n = table.size();

  Matrix unit(n, dim);
  std::vector<std::string> folded(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = table.vector(i);
    std::copy(v.begin(), v.end(), unit.row(i).begin());
    normalize_in_place(unit.row(i));
    folded[i] = case_fold(table.word(i));
  }
  const FoldedIndex index(table);

  struct Usable {
    std::size_t question, a, b, c;
    std::string answer;
  };
  std::vector<Usable> usable;
  EvalResult r;
  r.dataset = ds.name;
  r.metric = Metric::accuracy;
  for (std::size_t q = 0; q < ds.questions.size(); ++q) {
    const auto& Q = ds.questions[q];
    const auto* a = index.find(case_fold(Q.a));
    const auto* b = index.find(case_fold(Q.b));
    const auto* c = index.find(case_fold(Q.c));
    const auto* d = index.find(case_fold(Q.d));
    if (!a || !b || !c || !d) {
      ++r.n_skipped_oov;
      continue;
    }
    usable.push_back({q, *a, *b, *c, case_fold(Q.d)});
  }
  r.n_used = usable.size();
  if (usable.empty()) throw DataError("eval_analogy on '" + ds.name + "': no in-vocabulary questions");

  std::vector<std::size_t> best(usable.size(), n);
  parallel_for(usable.size(), threads, [&](std::size_t u) {
    const auto& q = usable[u];
    std::vector<double> target(dim);
    const auto va = unit.row(q.a), vb = unit.row(q.b), vc = unit.row(q.c);
    for (std::size_t j = 0; j < dim; ++j) target[j] = vb[j] - va[j] + vc[j];
    normalize_in_place(target);
    std::size_t arg = n;
    double arg_score = 0.0;
    for (std::size_t w = 0; w < n; ++w) {
      if (w == q.a || w == q.b || w == q.c) continue;
      const auto v = unit.row(w);
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += v[j] * target[j];
      if (arg == n || s > arg_score || (s == arg_score && folded[w] < folded[arg])) {
        arg = w;
        arg_score = s;
      }
    }
    best[u] = arg;
  });

  std::size_t correct = 0;
  for (std::size_t u = 0; u < usable.size(); ++u) {
    const bool ok = best[u] != n && folded[best[u]] == usable[u].answer;
    correct += ok;
    if (predictions) {
      predictions->push_back({usable[u].question, best[u] == n ? std::string() : table.word(best[u]), ok});
    }
  }
  r.value = static_cast<double>(correct) / static_cast<double>(usable.size());
  return r;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::ifstream open_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return in;
}

std::string line_ref(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

}  // namespace

SimilarityDataset load_similarity(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  SimilarityDataset ds;
  ds.name = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens.size() != 3) {
      throw FormatError(line_ref(path, line_no) + ": expected 'word1 word2 score', got " +
                        std::to_string(tokens.size()) + " fields");
    }
    double score = 0.0;
    const char* first = tokens[2].data();
    const char* last = first + tokens[2].size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, score);
    if (ec != std::errc() || ptr != last || !std::isfinite(score)) {
      throw FormatError(line_ref(path, line_no) + ": bad similarity score '" + std::string(tokens[2]) + "'");
    }
    ds.pairs.push_back({case_fold(tokens[0]), case_fold(tokens[1]), score});
  }
  if (ds.pairs.empty()) throw DataError(path.string() + ": similarity dataset has no pairs");
  return ds;
}

AnalogyDataset load_analogy(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  AnalogyDataset ds;
  ds.name = path.stem().string();
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind(": ", 0) == 0) {
      const auto tokens = split_ws(std::string_view(line).substr(2));
      section = tokens.empty() ? std::string() : std::string(tokens[0]);
      continue;
    }
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 4) {
      throw FormatError(line_ref(path, line_no) + ": expected 4 words per analogy, got " +
                        std::to_string(tokens.size()));
    }
    ds.questions.push_back(
        {case_fold(tokens[0]), case_fold(tokens[1]), case_fold(tokens[2]), case_fold(tokens[3]), section});
  }
  if (ds.questions.empty()) throw DataError(path.string() + ": analogy dataset has no questions");
  return ds;
}

double average_report(std::span<const double> values) {
  if (values.empty()) throw DataError("average_report: no results");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double average_report(std::span<const EvalResult> results) {
  std::vector<double> v;
  v.reserve(results.size());
  for (const auto& r : results) v.push_back(r.value);
  return average_report(v);
}

std::string eval_csv_header() { return "dataset,metric,value,n_used,n_skipped"; }

std::string eval_csv_row(const EvalResult& r) {
  return detail::csv_field(r.dataset) + "," + metric_name(r.metric) + "," + detail::format_double(r.value) + "," +
         std::to_string(r.n_used) + "," + std::to_string(r.n_skipped_oov);
}

}  // namespace embproc
