// foldattn: cost tables, verification suites, toy training and host benchmarks.
//
// Exit codes: 0 success, 1 check or target failure, 2 usage or config error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "foldattn/foldattn.hpp"

namespace fa = foldattn;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Rows of cells, printed either as CSV or as right-aligned text columns.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void print(std::ostream& os, const std::string& format) const {
    if (format == "csv") {
      auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
      return;
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << "  ";
        os << std::string(width[i] - cells[i].size(), ' ') << cells[i];
      }
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }
};

std::string opt_cell(const std::optional<double>& v, int precision) {
  return v ? fmt(*v, precision) : "-";
}

std::string err_cell(double predicted, const std::optional<double>& ref) {
  if (!ref || *ref == 0.0) return "-";
  return fmt(100.0 * (predicted - *ref) / *ref, 2);
}

const fa::ModelEntry& select_model(const fa::RunConfig& cfg, const std::string& id) {
  if (cfg.models.empty()) throw fa::ConfigError("models: config defines no models");
  return id.empty() ? cfg.models.front() : cfg.find_model(id);
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string& config_path, std::string format) {
  const auto cfg = fa::load_config(config_path);
  if (format.empty()) format = cfg.format;
  const auto grid = fa::evaluate_grid(cfg);

  Table t;
  t.header = {"id",  "fold",  "std",   "params", "size_m", "ref",  "err%",
              "gops", "ref",  "err%",  "power_mw", "ref", "err%"};
  for (const auto& r : grid.rows) {
    const auto& ref = r.entry.reference;
    t.rows.push_back({r.entry.id,
                      std::to_string(r.entry.folding_layers),
                      std::to_string(r.entry.standard_layers),
                      r.layer_params ? std::to_string(*r.layer_params) : "-",
                      fmt(r.predicted.size_m, 2),
                      opt_cell(ref.size_m, 2),
                      err_cell(r.predicted.size_m, ref.size_m),
                      fmt(r.predicted.gops, 3),
                      opt_cell(ref.gops, 2),
                      err_cell(r.predicted.gops, ref.gops),
                      fmt(r.predicted.power_mw, 2),
                      opt_cell(ref.power_mw, 2),
                      err_cell(r.predicted.power_mw, ref.power_mw)});
  }
  t.print(std::cout, format);
  if (format == "text" && !grid.rows.empty()) {
    std::cout << "\nsize:  " << fmt(grid.size.base_m, 4) << " M + " << fmt(grid.size.per_layer_m, 5)
              << " M/standard layer + " << fmt(grid.size.folding_layer_m(), 5)
              << " M/folding layer\n";
    if (grid.concrete)
      std::cout << "gops:  " << fmt(grid.gops.base_gops, 4) << " + work * "
                << fmt(grid.gops.token_rate(), 3) << " tokens/s / 1e9\n";
    else
      std::cout << "gops:  " << fmt(grid.gops.base_gops, 4) << " + " << fmt(grid.gops.gops_per_unit, 5)
                << " per standard-layer equivalent\n";
    std::cout << "power: " << fmt(grid.power.a, 5) << " mW/M * size + " << fmt(grid.power.b, 5)
              << " mW/GOPS * gops\n";
  }
  return kOk;
}

int cmd_compare(const std::string& pairs_path, std::string config_path, std::string format) {
  const auto doc = fa::parse_json_text(fa::read_text_file(pairs_path), pairs_path);
  if (!doc.is_object()) throw fa::ConfigError(pairs_path + ": expected a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (it.key() != "config" && it.key() != "pairs")
      throw fa::ConfigError(pairs_path + ": " + it.key() + ": unknown field");
  if (config_path.empty()) {
    if (!doc.contains("config") || !doc["config"].is_string())
      throw fa::ConfigError(pairs_path + ": config: missing (or pass --config)");
    std::filesystem::path p = doc["config"].get<std::string>();
    if (p.is_relative()) p = std::filesystem::path(pairs_path).parent_path() / p;
    config_path = p.string();
  }
  auto cfg = fa::load_config(config_path);
  if (doc.contains("pairs")) {
    nlohmann::json wrapper = {{"pairs", doc["pairs"]}};
    cfg.pairs = fa::parse_config(wrapper).pairs;
  }
  if (format.empty()) format = cfg.format;
  const auto grid = fa::evaluate_grid(cfg);
  const auto summary = fa::compare_pairs(grid, cfg.pairs);

  Table t;
  t.header = {"candidate", "baseline", "size_red%", "power_red%", "gops_red%",
              "ref_size_red%", "ref_power_red%", "ref_gops_red%"};
  for (const auto& r : summary.rows) {
    t.rows.push_back({r.candidate, r.baseline, fmt(r.predicted.size_pct, 2),
                      fmt(r.predicted.power_pct, 2), fmt(r.predicted.gops_pct, 2),
                      r.reference ? fmt(r.reference->size_pct, 2) : "-",
                      r.reference ? fmt(r.reference->power_pct, 2) : "-",
                      r.reference ? fmt(r.reference->gops_pct, 2) : "-"});
  }
  t.print(std::cout, format);
  if (!summary.rows.empty()) {
    const std::string prefix = format == "csv" ? "# " : "\n";
    std::cout << prefix << "range: size " << fmt(summary.size_min, 2) << ".." << fmt(summary.size_max, 2)
              << "%, power " << fmt(summary.power_min, 2) << ".." << fmt(summary.power_max, 2)
              << "%, gops " << fmt(summary.gops_min, 2) << ".." << fmt(summary.gops_max, 2) << "%\n";
  }
  return kOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  const auto results = fa::run_suite(suite, seed);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.suite << ": " << r.name;
    if (!r.detail.empty()) std::cout << " [" << r.detail << "]";
    std::cout << '\n';
    if (!r.passed) ++failed;
  }
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed ? kFailed : kOk;
}

struct BenchResult {
  std::string id;
  std::size_t layers = 0;
  std::size_t chunks = 0;
  double mean_ms = 0, p95_ms = 0, tokens_per_s = 0, rtf = 0;
};

BenchResult bench_model(const fa::RunConfig& cfg, const fa::ModelEntry& entry, double seconds) {
  const auto spec = fa::encoder_spec(cfg.model, entry);
  const auto enc = fa::make_encoder<float>(spec, cfg.seed);
  fa::Rng rng(cfg.seed + 17);
  const auto frames = fa::random_normal<float>({spec.chunk_size, spec.feature_dim}, rng);

  auto state = fa::init_stream<float>(spec);
  for (int i = 0; i < 3; ++i) fa::process_chunk(enc, state, frames);  // warm-up

  using clock = std::chrono::steady_clock;
  std::vector<double> ms;
  const auto start = clock::now();
  do {
    const auto t0 = clock::now();
    auto out = fa::process_chunk(enc, state, frames);
    const auto t1 = clock::now();
    if (out.rows() != spec.chunk_size) throw std::logic_error("short chunk output");
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  } while (std::chrono::duration<double>(clock::now() - start).count() < seconds || ms.size() < 5);

  BenchResult r{entry.id, spec.layers.size(), ms.size()};
  double sum = 0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / double(ms.size());
  std::sort(ms.begin(), ms.end());
  r.p95_ms = ms[std::min(ms.size() - 1, std::size_t(0.95 * double(ms.size())))];
  r.tokens_per_s = double(spec.chunk_size) * 1000.0 / r.mean_ms;
  r.rtf = r.mean_ms / (double(spec.chunk_size) * cfg.model.token_period_ms);
  return r;
}

int cmd_bench(const std::string& config_path, double seconds, const std::string& model,
              std::string format) {
  const auto cfg = fa::load_config(config_path);
  if (format.empty()) format = cfg.format;
  if (seconds <= 0) throw fa::ConfigError("--seconds must be > 0");
  std::vector<const fa::ModelEntry*> entries;
  if (!model.empty())
    entries.push_back(&cfg.find_model(model));
  else
    for (const auto& e : cfg.models) entries.push_back(&e);

  Table t;
  t.header = {"id", "layers", "chunks", "mean_ms", "p95_ms", "tokens_per_s", "rtf_proxy"};
  for (const auto* e : entries) {
    const auto r = bench_model(cfg, *e, seconds);
    t.rows.push_back({r.id, std::to_string(r.layers), std::to_string(r.chunks), fmt(r.mean_ms, 4),
                      fmt(r.p95_ms, 4), fmt(r.tokens_per_s, 1), fmt(r.rtf, 5)});
  }
  t.print(std::cout, format);
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& out_path, const std::string& model) {
  const auto cfg = fa::load_config(config_path);
  if (!cfg.train) throw fa::ConfigError(config_path + ": train: missing");
  const auto& ts = *cfg.train;
  const auto spec = fa::encoder_spec(cfg.model, select_model(cfg, model));
  if (spec.feature_dim != ts.task.feature_dim)
    throw fa::ConfigError("model.feature_dim (" + std::to_string(spec.feature_dim) +
                          ") must equal train.task.feature_dim (" +
                          std::to_string(ts.task.feature_dim) + ")");
  const auto result = fa::train_toy<double>(spec, ts.task, ts.steps, ts.lr, ts.seed);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    if (!file) throw fa::ConfigError(out_path + ": cannot open for writing");
    os = &file;
  }
  *os << "step,loss,accuracy\n";
  for (const auto& s : result.curve) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", s.step, s.loss, s.accuracy);
    *os << buf;
  }
  os->flush();

  if (result.diverged) {
    std::cerr << "diverged: non-finite loss at step " << result.diverged_step << '\n';
    return kFailed;
  }
  const bool met = result.final_accuracy >= ts.target_accuracy;
  std::cerr << "parameters=" << result.parameters << " final_accuracy=" << fmt(result.final_accuracy, 4)
            << " target=" << fmt(ts.target_accuracy, 4) << (met ? " met" : " NOT met") << '\n';
  return met ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Folding attention: cost tables, invariant checks, toy training, benchmarks"};
  app.require_subcommand(1);
  const std::vector<std::string> formats{"text", "csv"};

  std::string config, format, pairs, suite = "all", out, model;
  std::uint64_t seed = 1;
  double seconds = 1.0;

  auto* report = app.add_subcommand("report", "Size / GOPS / power table for a model grid");
  report->add_option("--config", config, "Grid config (JSON)")->required();
  report->add_option("--format", format, "text or csv (default: config)")
      ->check(CLI::IsMember(formats));

  auto* compare = app.add_subcommand("compare", "Reductions over candidate/baseline pairs");
  compare->add_option("--pairs", pairs, "Pairs file (JSON)")->required();
  compare->add_option("--config", config, "Grid config; overrides the pairs file's \"config\"");
  compare->add_option("--format", format)->check(CLI::IsMember(formats));

  auto* verify = app.add_subcommand("verify", "Run invariant suites");
  std::vector<std::string> suites = fa::suite_names();
  suites.push_back("all");
  verify->add_option("--suite", suite, "fold|grad|stream|flops|all")->check(CLI::IsMember(suites));
  verify->add_option("--seed", seed, "Base seed");

  auto* bench = app.add_subcommand("bench", "Host wall-clock streaming benchmark");
  bench->add_option("--config", config)->required();
  bench->add_option("--seconds", seconds, "Timed seconds per model");
  bench->add_option("--model", model, "Only this model id");
  bench->add_option("--format", format)->check(CLI::IsMember(formats));

  auto* train = app.add_subcommand("train-toy", "Train a toy classifier, emit per-step CSV");
  train->add_option("--config", config)->required();
  train->add_option("--out", out, "CSV path (default: stdout)");
  train->add_option("--model", model, "Model id (default: first)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*report) return cmd_report(config, format);
    if (*compare) return cmd_compare(pairs, config, format);
    if (*verify) return cmd_verify(suite, seed);
    if (*bench) return cmd_bench(config, seconds, model, format);
    if (*train) return cmd_train(config, out, model);
  } catch (const fa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const fa::FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kUsage;
  } catch (const fa::DivisibilityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const fa::DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
