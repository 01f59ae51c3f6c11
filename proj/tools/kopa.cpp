// kopa: command-line driver for the KGC toolkit.

#include <cstdio>
#include <functional>
#include <map>

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kopa/cli.hpp"
#include "kopa/error.hpp"

using namespace kopa;
using namespace kopa::cli;

namespace {

struct Overrides {
  std::string config, data_dir, output_dir, embeddings, prompts;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> family, optimizer, mode, split, loss, mining_family, backend_url;
  std::optional<std::size_t> dim, epochs, negatives, batch_size, k, neighbors, adapter_epochs,
      train_instances, eval_instances, candidates, mining_dim, mining_epochs, retries, window;
  std::optional<double> lr, alpha, adapter_lr, timeout;
  std::vector<double> margin_grid, ir;
  std::vector<std::string> positions;
  bool serial = false;
  bool verbose = false;
};

void add_options(CLI::App& app, Overrides& o) {
  app.add_option("-c,--config", o.config, "Experiment config (JSON)");
  app.add_option("--data-dir", o.data_dir, "Directory holding train/valid/test/entities/relations .tsv");
  app.add_option("-o,--output-dir", o.output_dir, "Output directory");
  app.add_option("--seed", o.seed, "Master seed (KOPA_SEED overrides)");
  app.add_option("--embeddings", o.embeddings, "Embedding file (default <output-dir>/embeddings.kge)");
  app.add_option("--prompts", o.prompts, "JSONL corpus path");

  app.add_option("--family", o.family, "Score family: TransE, DistMult, ComplEx, RotatE");
  app.add_option("--dim", o.dim, "Entity embedding width d_e");
  app.add_option("--epochs", o.epochs, "KGE training epochs");
  app.add_option("--negatives", o.negatives, "Negatives per positive (K)");
  app.add_option("--lr", o.lr, "KGE learning rate");
  app.add_option("--batch-size", o.batch_size, "KGE batch size");
  app.add_option("--alpha", o.alpha, "Self-adversarial temperature");
  app.add_option("--margin-grid", o.margin_grid, "Candidate margins");
  app.add_option("--optimizer", o.optimizer, "sgd or adam");
  app.add_flag("--serial", o.serial, "Use the serial reference kernels");

  app.add_option("--mode", o.mode, "Prompt mode: zsr, icl, it, sit, kopa");
  app.add_option("--k", o.k, "ICL shots");
  app.add_option("--neighbors", o.neighbors, "SIT neighbourhood lines");
  app.add_option("--split", o.split, "train, valid or test");

  app.add_option("--position", o.positions, "Adapter placement(s): prefix, infix, suffix");
  app.add_option("--loss", o.loss, "Adapter loss: answer or full");
  app.add_option("--adapter-epochs", o.adapter_epochs, "Adapter training epochs");
  app.add_option("--adapter-lr", o.adapter_lr, "Adapter learning rate");
  app.add_option("--train-instances", o.train_instances, "Adapter training instances (0 = all)");
  app.add_option("--eval-instances", o.eval_instances, "Adapter evaluation instances (0 = all)");

  app.add_option("--ir", o.ir, "Inductive rate(s)");

  app.add_option("--candidates", o.candidates, "Hard-negative candidates per positive");
  app.add_option("--mining-family", o.mining_family, "Scorer family used for mining");
  app.add_option("--mining-dim", o.mining_dim, "Scorer width used for mining");
  app.add_option("--mining-epochs", o.mining_epochs, "Scorer epochs used for mining");

  app.add_option("--backend-url", o.backend_url, "Completion endpoint, e.g. http://localhost:8000/complete");
  app.add_option("--timeout", o.timeout, "Request timeout in seconds");
  app.add_option("--retries", o.retries, "Retries per request");
  app.add_option("--window", o.window, "Requests in flight");

  app.add_flag("-v,--verbose", o.verbose, "Debug logging");
}

template <typename T, typename U>
void set(const std::optional<T>& v, U& out) {
  if (v) out = *v;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.data_dir.empty()) use_data_dir(cfg, o.data_dir);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (!o.embeddings.empty()) cfg.embeddings = o.embeddings;
  if (!o.prompts.empty()) cfg.prompts = o.prompts;
  set(o.seed, cfg.seed);

  auto& t = cfg.kge.train;
  if (o.family) cfg.kge.family = parse_family(*o.family);
  set(o.dim, t.dim);
  set(o.epochs, t.epochs);
  set(o.negatives, t.negatives);
  set(o.lr, t.lr);
  set(o.batch_size, t.batch_size);
  set(o.alpha, t.alpha);
  if (!o.margin_grid.empty()) t.margin_grid = o.margin_grid;
  if (o.optimizer) {
    if (*o.optimizer == "adam") t.optimizer = Optimizer::adam;
    else if (*o.optimizer == "sgd") t.optimizer = Optimizer::sgd;
    else throw ConfigError("optimizer must be sgd or adam");
  }
  if (o.serial) t.parallel = false;

  if (o.mode) cfg.prompt.mode = parse_mode(*o.mode);
  set(o.k, cfg.prompt.k);
  set(o.neighbors, cfg.prompt.neighbors);
  set(o.split, cfg.prompt.split);

  auto& a = cfg.adapter;
  if (!o.positions.empty()) {
    a.positions.clear();
    for (const auto& p : o.positions) a.positions.push_back(parse_position(p));
  }
  if (o.loss) a.loss = parse_loss_mode(*o.loss);
  set(o.adapter_epochs, a.epochs);
  set(o.adapter_lr, a.lr);
  set(o.train_instances, a.train_instances);
  set(o.eval_instances, a.eval_instances);

  if (!o.ir.empty()) cfg.inductive.rates = o.ir;

  set(o.candidates, cfg.mining.candidates);
  if (o.mining_family) cfg.mining.family = parse_family(*o.mining_family);
  set(o.mining_dim, cfg.mining.dim);
  set(o.mining_epochs, cfg.mining.epochs);

  set(o.backend_url, cfg.backend.url);
  set(o.timeout, cfg.backend.timeout_s);
  set(o.retries, cfg.backend.max_retries);
  set(o.window, cfg.backend.window);

  apply_environment(cfg);
  return cfg;
}

void setup_logging(const ExperimentConfig& cfg, const std::string& command, bool verbose) {
  std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
  sinks.back()->set_pattern("%^[%l]%$ %v");
  std::filesystem::create_directories(cfg.output_dir);
  // Timestamps live only in this sidecar log, never in reports.
  sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((cfg.output_dir / "kopa.log").string()));
  sinks.back()->set_pattern("%Y-%m-%dT%H:%M:%S.%e [%l] %v");
  auto logger = std::make_shared<spdlog::logger>("kopa", sinks.begin(), sinks.end());
  logger->set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(logger);
  spdlog::info("kopa {} (seed {})", command, cfg.seed ? std::to_string(*cfg.seed) : "unset");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kopa: knowledge graph completion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  add_options(app, o);

  using Command = std::function<nlohmann::ordered_json(const ExperimentConfig&)>;
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"stats", "Load the dataset and report its size", cmd_stats},
      {"kge-train", "Train structural embeddings with margin selection", cmd_kge_train},
      {"classify", "Fit a threshold on valid and classify test", cmd_classify},
      {"prompts", "Generate a JSONL prompt corpus", cmd_prompts},
      {"adapter-train", "Train the prefix adapter and toy LM per position", cmd_adapter_train},
      {"adapter-eval", "Evaluate trained adapters on test", cmd_adapter_eval},
      {"inductive", "Inductive splits with seen/unseen/all metrics", cmd_inductive},
      {"mine-negatives", "Build labeled valid/test files with hard negatives", cmd_mine_negatives},
      {"llm-run", "Send a prompt corpus to an HTTP completion backend", cmd_llm_run},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help, _] : commands) subs[name] = app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : int(ExitCode::usage);
  }

  for (const auto& [name, help, fn] : commands) {
    if (!subs[name]->parsed()) continue;
    try {
      auto cfg = resolve(o);
      setup_logging(cfg, name, o.verbose);
      fn(cfg);
      return int(ExitCode::ok);
    } catch (const std::exception& e) {
      spdlog::error("{}", e.what());
      return int(exit_code_for(e));
    }
  }
  return int(ExitCode::usage);
}
