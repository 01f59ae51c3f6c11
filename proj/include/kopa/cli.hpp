#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kopa/adapter.hpp"
#include "kopa/kg.hpp"
#include "kopa/kge.hpp"
#include "kopa/promptgen.hpp"
#include "kopa/toylm.hpp"

namespace kopa::cli {

inline constexpr int kReportVersion = 1;

enum class ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// ConfigError -> usage, parse/format/data errors -> data, TrainingError ->
/// numeric. Anything else is reported as a data error.
ExitCode exit_code_for(const std::exception& e);

struct KgeSettings {
  ScoreFamily family = ScoreFamily::RotatE;
  TrainConfig train;
};

struct PromptSettings {
  PromptMode mode = PromptMode::it;
  std::size_t k = 4;
  std::size_t neighbors = 4;
  std::string split = "train";  // train | valid | test
};

struct AdapterSettings {
  ToyLMConfig lm;
  std::size_t epochs = 60;
  double lr = 3e-3;
  std::size_t batch_size = 16;
  LossMode loss = LossMode::answer_only;
  std::vector<PrefixPosition> positions = {PrefixPosition::prefix, PrefixPosition::infix,
                                           PrefixPosition::suffix};
  std::size_t train_instances = 200;  // 0 = the whole training corpus
  std::size_t eval_instances = 0;     // 0 = every test triple
};

struct InductiveSettings {
  std::vector<double> rates = {0.1, 0.2, 0.3};
};

/// Hard-negative construction for labeled valid/test files.
struct MiningSettings {
  ScoreFamily family = ScoreFamily::TransE;
  std::size_t dim = 64;
  std::size_t epochs = 50;
  double gamma = 6.0;
  std::size_t candidates = 30;
};

/// HTTP completion endpoint: POST {prompt_field: ...} -> {response_field: ...}.
struct BackendSettings {
  std::string url;
  double timeout_s = 30.0;
  std::size_t max_retries = 3;
  double backoff_ms = 250.0;
  std::size_t window = 4;
  std::string prompt_field = "prompt";
  std::string response_field = "text";
};

struct ExperimentConfig {
  DatasetPaths dataset;
  std::filesystem::path output_dir = "out";
  std::optional<std::uint64_t> seed;
  std::filesystem::path embeddings;  // default: output_dir/embeddings.kge
  std::filesystem::path prompts;     // llm-run input; default: output_dir/prompts_<mode>_<split>.jsonl
  KgeSettings kge;
  PromptSettings prompt;
  AdapterSettings adapter;
  InductiveSettings inductive;
  MiningSettings mining;
  BackendSettings backend;

  std::uint64_t master_seed() const;
  std::filesystem::path embeddings_path() const;
  std::filesystem::path prompts_path() const;
};

/// Strict parse: unknown keys anywhere are a ConfigError. Relative paths are
/// resolved against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Points the five dataset paths at `dir`/{train,valid,test,entities,relations}.tsv.
void use_data_dir(ExperimentConfig& cfg, const std::filesystem::path& dir);

/// KOPA_SEED, when set, replaces the configured seed.
void apply_environment(ExperimentConfig& cfg);

/// Seed present and every dataset file exists.
void validate(const ExperimentConfig& cfg);

/// Each command writes its outputs under cfg.output_dir and returns the JSON
/// report it wrote (also saved as <command>_report.json).
nlohmann::ordered_json cmd_stats(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_kge_train(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_classify(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_prompts(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_adapter_train(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_adapter_eval(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_inductive(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_mine_negatives(const ExperimentConfig& cfg);
nlohmann::ordered_json cmd_llm_run(const ExperimentConfig& cfg);

/// Tokenizer covering the instruction and every entity/relation description.
Tokenizer build_tokenizer(const KnowledgeGraph& kg);

struct BackendResult {
  bool ok = false;
  Answer answer = Answer::unknown;
  std::string text;
  std::size_t attempts = 0;
  std::string error;
};

/// Sends every serialized prompt to the backend with at most `window`
/// requests in flight. Transport errors, 429 and 5xx responses are retried
/// with exponential backoff (429 honours Retry-After); other statuses fail
/// at once. A response that is not JSON or lacks the response field parses
/// as an unknown answer. Results are in input order.
std::vector<BackendResult> run_backend(const BackendSettings& backend,
                                       std::span<const PromptInstance> instances);

}  // namespace kopa::cli
