#include "embproc/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>

#include "embproc/aggregate.hpp"
#include "embproc/diagnostics.hpp"
#include "embproc/embstore.hpp"
#include "embproc/error.hpp"
#include "embproc/lexeval.hpp"
#include "embproc/normalize.hpp"
#include "embproc/parallel.hpp"
#include "embproc/probe.hpp"
#include "text_util.hpp"

namespace embproc::cli {

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::string out;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  bool quiet = false;

  std::vector<std::string> shards;
  std::string pipeline;
  std::vector<std::string> pipelines;
  std::string apply_model;
  std::string vectors;
  std::vector<std::string> datasets;
  std::vector<std::string> sim_datasets;
  std::vector<std::string> analogy_datasets;
  std::vector<std::string> models;
  std::string labels;
  std::size_t min_contexts = 50;
  std::size_t max_contexts = 200;
  std::optional<double> y_limit;
  std::optional<std::uint32_t> expect_dim;
  ProbeConfig probe;
  double mass = 0.95;
};

void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

fs::path out_dir(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("--out is required for this command");
  fs::path dir(cfg.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Matrix shard_matrix(const OccurrenceShard& shard) {
  Matrix m(shard.records.size(), shard.dim);
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    std::copy(shard.records[i].vector.begin(), shard.records[i].vector.end(), m.row(i).begin());
  }
  return m;
}

void store_matrix(OccurrenceShard& shard, const Matrix& m) {
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    const auto row = m.row(i);
    auto& v = shard.records[i].vector;
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<float>(row[j]);
  }
}

// Fits `spec` on the shard's occurrences and rewrites them in place.
// "raw" leaves the shard untouched.
std::optional<FittedPipeline> normalize_shard(OccurrenceShard& shard, const std::string& spec, unsigned threads) {
  if (spec == "raw") return std::nullopt;
  const Pipeline pipeline = Pipeline::parse(spec);
  Matrix m = shard_matrix(shard);
  FittedPipeline fitted = fit_pipeline(m, pipeline);
  apply_pipeline(m, fitted, threads);
  store_matrix(shard, m);
  return fitted;
}

// --- subcommands ----------------------------------------------------------

int cmd_normalize(const RunConfig& cfg, std::ostream& out) {
  require_exists(cfg.shards.at(0), "shard");
  if (!cfg.apply_model.empty()) require_exists(cfg.apply_model, "pipeline model");
  const fs::path dir = out_dir(cfg);
  const fs::path in_path(cfg.shards.at(0));
  OccurrenceShard shard = read_shard(in_path);
  Matrix m = shard_matrix(shard);

  FittedPipeline fitted;
  std::string tag;
  if (!cfg.apply_model.empty()) {
    fitted = read_fitted_pipeline(cfg.apply_model);
    tag = fs::path(cfg.apply_model).stem().string();
  } else {
    if (cfg.pipeline.empty()) throw UsageError("normalize needs --pipeline or --apply-model");
    const Pipeline pipeline = Pipeline::parse(cfg.pipeline);
    fitted = fit_pipeline(m, pipeline);
    tag = pipeline.tag();
  }
  const ApplyDiagnostics diag = apply_pipeline(m, fitted, cfg.threads);
  store_matrix(shard, m);

  const fs::path shard_out = dir / (in_path.stem().string() + "." + tag + ".ceb");
  write_shard(shard, shard_out);
  if (cfg.apply_model.empty()) write_fitted_pipeline(fitted, dir / "model.npf");
  if (!cfg.quiet) {
    out << "normalize: " << shard.records.size() << " records (layer " << shard.layer << ", dim " << shard.dim
        << ") -> " << shard_out.string() << ", zero-norm vectors " << diag.zero_norm_vectors << '\n';
  }
  return 0;
}

int cmd_aggregate(const RunConfig& cfg, std::ostream& out) {
  require_exists(cfg.shards.at(0), "shard");
  const fs::path dir = out_dir(cfg);
  const OccurrenceShard shard = read_shard(cfg.shards.at(0));
  AggregationConfig ac{cfg.min_contexts, cfg.max_contexts, cfg.seed};
  const auto result = aggregate(shard, ac, cfg.threads);
  write_word_vectors(result.table, dir / "vectors.txt");
  write_aggregation_report(result.report, dir / "aggregation_report.csv");
  if (!cfg.quiet) {
    out << "aggregate: " << result.table.size() << " words kept, " << result.report.dropped << " dropped -> "
        << (dir / "vectors.txt").string() << '\n';
  }
  return 0;
}

template <typename Load, typename Eval>
int cmd_eval(const RunConfig& cfg, std::ostream& out, const char* name, const char* csv_name, Load load, Eval eval) {
  require_exists(cfg.vectors, "vectors file");
  for (const auto& d : cfg.datasets) require_exists(d, "dataset");
  const WordVectorTable table = read_word_vectors(cfg.vectors);
  std::vector<EvalResult> results;
  for (const auto& d : cfg.datasets) results.push_back(eval(table, load(d)));

  std::string csv = eval_csv_header() + "\n";
  for (const auto& r : results) csv += eval_csv_row(r) + "\n";
  if (!cfg.out.empty()) {
    const fs::path path = out_dir(cfg) / csv_name;
    write_text(path, csv);
    if (!cfg.quiet) {
      out << name << ": " << results.size() << " dataset(s), average " << detail::format_double(average_report(results))
          << " -> " << path.string() << '\n';
    }
  } else {
    out << csv;
  }
  return 0;
}

int cmd_variance(const RunConfig& cfg, std::ostream& out) {
  for (const auto& s : cfg.shards) require_exists(s, "shard");
  if (cfg.models.size() > 1 && cfg.models.size() != cfg.shards.size()) {
    throw UsageError("--model must be given once or once per --shard");
  }
  const fs::path dir = out_dir(cfg);
  std::vector<LayerVarianceProfile> profiles;
  std::map<std::string, std::size_t> by_model;
  for (std::size_t i = 0; i < cfg.shards.size(); ++i) {
    const std::string model = cfg.models.empty() ? "model" : cfg.models.size() == 1 ? cfg.models[0] : cfg.models[i];
    auto [it, fresh] = by_model.try_emplace(model, profiles.size());
    if (fresh) profiles.push_back({model, {}});
    profiles[it->second].entries.push_back(layer_variance(read_shard(cfg.shards[i])));
  }
  for (auto& p : profiles) sort_profile(p);
  variance_report(profiles, dir, {cfg.y_limit});
  if (!cfg.quiet) {
    out << "variance: " << cfg.shards.size() << " layer(s), " << profiles.size() << " model(s) -> "
        << (dir / "layer_variance.csv").string() << '\n';
  }
  return 0;
}

struct LabelRow {
  std::string word;
  std::uint32_t sentence_id;
  std::string label;
};

std::vector<LabelRow> read_labels(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected word<TAB>sentence_id<TAB>label");
    }
    LabelRow r;
    r.word = line.substr(0, t1);
    const std::string sid = line.substr(t1 + 1, t2 - t1 - 1);
    r.label = line.substr(t2 + 1);
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(sid, &used);
      if (used != sid.size() || v > UINT32_MAX) throw std::invalid_argument(sid);
      r.sentence_id = static_cast<std::uint32_t>(v);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad sentence id '" + sid + "'");
    }
    if (r.word.empty() || r.label.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty word or label");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path.string() + ": no labels");
  return rows;
}

int cmd_probe(const RunConfig& cfg, std::ostream& out) {
  for (const auto& s : cfg.shards) require_exists(s, "shard");
  require_exists(cfg.labels, "label file");
  const fs::path dir = out_dir(cfg);

  std::vector<OccurrenceShard> shards;
  for (const auto& s : cfg.shards) {
    shards.push_back(read_shard(s));
    if (!cfg.pipeline.empty()) normalize_shard(shards.back(), cfg.pipeline, cfg.threads);
  }
  ProbeDataset ds;
  std::size_t offset = 0;
  std::vector<std::map<std::pair<std::string, std::uint32_t>, std::size_t>> index(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    ds.layout.push_back({shards[i].layer, offset, shards[i].dim});
    offset += shards[i].dim;
    for (std::size_t r = 0; r < shards[i].records.size(); ++r) {
      index[i].try_emplace({shards[i].records[r].word, shards[i].records[r].sentence_id}, r);
    }
  }

  const auto labels = read_labels(cfg.labels);
  std::map<std::string, std::size_t> label_ids;
  for (const auto& l : labels) label_ids.try_emplace(l.label, 0);
  std::size_t next_id = 0;
  for (auto& [name, id] : label_ids) {
    id = next_id++;
    ds.label_names.push_back(name);
  }

  std::size_t skipped = 0;
  std::vector<double> row(offset);
  ds.features = Matrix(0, offset);
  for (const auto& l : labels) {
    bool found = true;
    for (std::size_t i = 0; i < shards.size() && found; ++i) {
      const auto it = index[i].find({l.word, l.sentence_id});
      if (it == index[i].end()) {
        found = false;
        break;
      }
      const auto& v = shards[i].records[it->second].vector;
      std::copy(v.begin(), v.end(), row.begin() + static_cast<std::ptrdiff_t>(ds.layout[i].offset));
    }
    if (!found) {
      ++skipped;
      continue;
    }
    ds.features.push_row(row);
    ds.labels.push_back(label_ids.at(l.label));
  }
  // Classes that lost every sample to the join are dropped from the label set.
  {
    std::vector<std::size_t> counts(ds.label_names.size(), 0);
    for (std::size_t y : ds.labels) ++counts[y];
    std::vector<std::size_t> remap(counts.size());
    std::vector<std::string> names;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      remap[c] = names.size();
      if (counts[c]) names.push_back(ds.label_names[c]);
    }
    for (auto& y : ds.labels) y = remap[y];
    ds.label_names = std::move(names);
  }
  if (ds.features.rows() == 0) throw DataError("no labelled token matched an occurrence in every shard");

  ProbeConfig pc = cfg.probe;
  pc.seed = cfg.seed;
  pc.threads = cfg.threads;
  const ProbeModel model = train_probe(ds, pc);
  const NeuronRanking ranking = rank_neurons(model);
  const auto salient = select_salient(ranking, cfg.mass);
  const auto hist = layer_distribution(salient, ds.layout);

  write_ranking_csv(ranking, ds.layout, dir / "neuron_ranking.csv");
  write_histogram_csv(hist, dir / "layer_histogram.csv");
  write_text(dir / "layer_histogram.svg",
             histogram_svg(hist, "Salient neurons per layer (" + (cfg.pipeline.empty() ? std::string("raw") : cfg.pipeline) +
                                     ")"));
  if (!cfg.quiet) {
    out << "probe: " << ds.features.rows() << " samples (" << skipped << " unmatched), " << ds.num_classes()
        << " classes, accuracy " << detail::format_double(model.accuracy(ds)) << ", " << salient.size()
        << " salient neurons -> " << (dir / "layer_histogram.csv").string() << '\n';
  }
  return 0;
}

int cmd_pipeline(const RunConfig& cfg, std::ostream& out) {
  for (const auto& s : cfg.shards) require_exists(s, "shard");
  for (const auto& d : cfg.sim_datasets) require_exists(d, "dataset");
  for (const auto& d : cfg.analogy_datasets) require_exists(d, "dataset");
  if (cfg.sim_datasets.empty() && cfg.analogy_datasets.empty()) {
    throw UsageError("pipeline needs at least one --sim or --analogy dataset");
  }
  const fs::path dir = out_dir(cfg);
  std::vector<std::string> specs = cfg.pipelines.empty() ? std::vector<std::string>{"raw"} : cfg.pipelines;
  for (const auto& s : specs) {
    if (s != "raw") Pipeline::parse(s);
  }

  std::vector<SimilarityDataset> sims;
  for (const auto& d : cfg.sim_datasets) sims.push_back(load_similarity(d));
  std::vector<AnalogyDataset> analogies;
  for (const auto& d : cfg.analogy_datasets) analogies.push_back(load_analogy(d));

  const AggregationConfig ac{cfg.min_contexts, cfg.max_contexts, cfg.seed};
  std::string csv = "layer,pipeline,dataset,metric,value,n_used,n_skipped\n";
  std::size_t runs = 0;
  for (const auto& shard_path : cfg.shards) {
    const OccurrenceShard raw = read_shard(shard_path);
    for (const auto& spec : specs) {
      // Normalize occurrences first, then aggregate.
      OccurrenceShard shard = raw;
      normalize_shard(shard, spec, cfg.threads);
      const auto agg = aggregate(shard, ac, cfg.threads);
      std::vector<EvalResult> results;
      for (const auto& ds : sims) results.push_back(eval_similarity(agg.table, ds));
      for (const auto& ds : analogies) results.push_back(eval_analogy(agg.table, ds, cfg.threads));
      const std::string prefix = std::to_string(raw.layer) + "," + detail::csv_field(spec) + ",";
      for (const auto& r : results) csv += prefix + eval_csv_row(r) + "\n";
      csv += prefix + "average,mean," + detail::format_double(average_report(results)) + "," +
             std::to_string(results.size()) + ",0\n";
      ++runs;
    }
  }
  const fs::path path = dir / "lexical_results.csv";
  write_text(path, csv);
  if (!cfg.quiet) {
    out << "pipeline: " << cfg.shards.size() << " layer(s) x " << specs.size() << " pipeline(s) = " << runs
        << " runs -> " << path.string() << '\n';
  }
  return 0;
}

int cmd_fmt_check(const RunConfig& cfg, std::ostream& out) {
  for (const auto& s : cfg.shards) require_exists(s, "shard");
  for (const auto& s : cfg.shards) {
    ShardReader reader(s);
    if (cfg.expect_dim && reader.dim() != *cfg.expect_dim) {
      throw DataError(s + ": dim " + std::to_string(reader.dim()) + ", expected " + std::to_string(*cfg.expect_dim));
    }
    std::size_t n = 0;
    std::map<std::string, std::size_t> words;
    while (auto rec = reader.next()) {
      ++n;
      ++words[rec->word];
    }
    if (!cfg.quiet) {
      out << "ok " << s << " layer=" << reader.layer() << " dim=" << reader.dim() << " records=" << n
          << " words=" << words.size() << '\n';
    }
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  cfg.threads = default_threads();

  CLI::App app{"embproc: post-processing and evaluation of contextual word embeddings", "embproc"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.add_option("--out", cfg.out, "Output directory");
  app.add_option("--seed", cfg.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", cfg.threads, "Worker threads (default: EMBPROC_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", cfg.quiet, "Suppress the summary line");

  auto* normalize = app.add_subcommand("normalize", "Fit a pipeline on a shard and write the normalized shard");
  normalize->add_option("--shard", cfg.shards, "Input shard (.ceb)")->required()->expected(1);
  normalize->add_option("--pipeline", cfg.pipeline, "Steps, e.g. abtt:7,zscore");
  normalize->add_option("--apply-model", cfg.apply_model, "Apply a previously fitted model.npf instead of fitting");

  auto* agg = app.add_subcommand("aggregate", "Mean-pool occurrences into word vectors");
  agg->add_option("--shard", cfg.shards, "Input shard (.ceb)")->required()->expected(1);
  agg->add_option("--min-contexts", cfg.min_contexts, "Drop words with fewer occurrences")->capture_default_str();
  agg->add_option("--max-contexts", cfg.max_contexts, "Subsample words with more occurrences")->capture_default_str();

  auto* sim = app.add_subcommand("eval-sim", "Spearman correlation on word-similarity datasets");
  sim->add_option("--vectors", cfg.vectors, "Word vectors (text)")->required();
  sim->add_option("--dataset", cfg.datasets, "Similarity dataset(s)")->required();

  auto* ana = app.add_subcommand("eval-analogy", "3CosAdd accuracy on analogy datasets");
  ana->add_option("--vectors", cfg.vectors, "Word vectors (text)")->required();
  ana->add_option("--dataset", cfg.datasets, "Analogy dataset(s)")->required();

  auto* var = app.add_subcommand("variance", "Layer-wise feature variance report");
  var->add_option("--shard", cfg.shards, "One shard per layer")->required();
  var->add_option("--model", cfg.models, "Model name, once or once per shard");
  var->add_option("--y-limit", cfg.y_limit, "Clip plotted values at this height");

  auto* probe = app.add_subcommand("probe", "Elastic-net probe and salient-neuron layer histogram");
  probe->add_option("--shard", cfg.shards, "Shards to concatenate, one per layer")->required();
  probe->add_option("--labels", cfg.labels, "TSV word<TAB>sentence_id<TAB>label")->required();
  probe->add_option("--pipeline", cfg.pipeline, "Normalize each layer's occurrences first");
  probe->add_option("--l1", cfg.probe.l1, "L1 penalty")->capture_default_str();
  probe->add_option("--l2", cfg.probe.l2, "L2 penalty")->capture_default_str();
  probe->add_option("--epochs", cfg.probe.epochs, "Training epochs")->capture_default_str();
  probe->add_option("--lr", cfg.probe.lr, "Initial learning rate")->capture_default_str();
  probe->add_option("--batch-size", cfg.probe.batch_size, "Mini-batch size, 0 for full batch")->capture_default_str();
  probe->add_option("--mass", cfg.mass, "Cumulative importance fraction for salient neurons")->capture_default_str();

  auto* pipe = app.add_subcommand("pipeline", "normalize -> aggregate -> evaluate for every layer and pipeline");
  pipe->add_option("--shard", cfg.shards, "One shard per layer")->required();
  pipe->add_option("--pipeline", cfg.pipelines, "Pipeline spec(s); 'raw' for none (repeatable)");
  pipe->add_option("--sim", cfg.sim_datasets, "Similarity dataset(s)");
  pipe->add_option("--analogy", cfg.analogy_datasets, "Analogy dataset(s)");
  pipe->add_option("--min-contexts", cfg.min_contexts)->capture_default_str();
  pipe->add_option("--max-contexts", cfg.max_contexts)->capture_default_str();

  auto* check = app.add_subcommand("fmt-check", "Validate shard files");
  check->add_option("--shard", cfg.shards, "Shard file(s)")->required();
  check->add_option("--expect-dim", cfg.expect_dim, "Required header dim");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (normalize->parsed()) return cmd_normalize(cfg, out);
    if (agg->parsed()) return cmd_aggregate(cfg, out);
    if (sim->parsed()) {
      return cmd_eval(cfg, out, "eval-sim", "eval_sim.csv", load_similarity, [](const auto& t, const auto& d) {
        return eval_similarity(t, d);
      });
    }
    if (ana->parsed()) {
      return cmd_eval(cfg, out, "eval-analogy", "eval_analogy.csv", load_analogy,
                      [&](const auto& t, const auto& d) { return eval_analogy(t, d, cfg.threads); });
    }
    if (var->parsed()) return cmd_variance(cfg, out);
    if (probe->parsed()) return cmd_probe(cfg, out);
    if (pipe->parsed()) return cmd_pipeline(cfg, out);
    if (check->parsed()) return cmd_fmt_check(cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  for (const auto& a : args) argv.push_back(a.c_str());
  argv.push_back(nullptr);
  return run(static_cast<int>(args.size()), argv.data(), out, err);
}

}  // namespace embproc::cli
