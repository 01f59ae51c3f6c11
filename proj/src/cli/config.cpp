#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>

#include "kopa/cli.hpp"
#include "kopa/error.hpp"

namespace kopa::cli {

using json = nlohmann::json;

ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::usage;
  if (dynamic_cast<const TrainingError*>(&e)) return ExitCode::numeric;
  return ExitCode::data;
}

std::uint64_t ExperimentConfig::master_seed() const {
  if (!seed) throw ConfigError("a seed is required (config \"seed\", --seed or KOPA_SEED)");
  return *seed;
}

std::filesystem::path ExperimentConfig::embeddings_path() const {
  return embeddings.empty() ? output_dir / "embeddings.kge" : embeddings;
}

std::filesystem::path ExperimentConfig::prompts_path() const {
  if (!prompts.empty()) return prompts;
  return output_dir / ("prompts_" + std::string(to_string(prompt.mode)) + "_" + prompt.split + ".jsonl");
}

namespace {

// Reads the keys of one JSON object, rejecting any it was not asked about.
class Section {
 public:
  Section(const json& j, std::string name, std::filesystem::path base)
      : j_(j), name_(std::move(name)), base_(std::move(base)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }
  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError("unknown key '" + key + "' in " + label());
    }
  }

  const json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const json* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("bad value for '" + key + "' in " + label());
      }
    }
  }

  void count(const std::string& key, std::size_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_unsigned()) throw ConfigError("'" + key + "' in " + label() + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void path(const std::string& key, std::filesystem::path& out) {
    std::string s;
    read(key, s);
    if (!s.empty()) out = resolve(s);
  }

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() || base_.empty() ? p : base_ / p;
  }

  std::string label() const { return name_.empty() ? "config" : "config." + name_; }
  const std::filesystem::path& base() const { return base_; }

 private:
  const json& j_;
  std::string name_;
  std::filesystem::path base_;
  std::set<std::string> used_;
};

template <typename Fn>
void section(Section& parent, const std::string& key, Fn&& fn) {
  if (const json* v = parent.get(key)) {
    Section s(*v, key, parent.base());
    fn(s);
    s.done();
  }
}

template <typename Enum, typename Parse>
void enum_value(Section& s, const std::string& key, Enum& out, Parse parse) {
  std::string name;
  s.read(key, name);
  if (!name.empty()) out = parse(name);
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  Section root(j, "", base_dir);

  if (const json* v = root.get("seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    cfg.seed = v->get<std::uint64_t>();
  }
  root.path("output_dir", cfg.output_dir);
  root.path("embeddings", cfg.embeddings);
  root.path("prompts", cfg.prompts);
  if (const json* v = root.get("data_dir")) {
    if (!v->is_string()) throw ConfigError("data_dir must be a string");
    use_data_dir(cfg, root.resolve(v->get<std::string>()));
  }

  section(root, "dataset", [&](Section& s) {
    s.path("train", cfg.dataset.train);
    s.path("valid", cfg.dataset.valid);
    s.path("test", cfg.dataset.test);
    s.path("entities", cfg.dataset.entity_descriptions);
    s.path("relations", cfg.dataset.relation_descriptions);
  });

  section(root, "kge", [&](Section& s) {
    auto& t = cfg.kge.train;
    enum_value(s, "family", cfg.kge.family, parse_family);
    s.count("dim", t.dim);
    s.count("negatives", t.negatives);
    s.read("lr", t.lr);
    s.count("epochs", t.epochs);
    s.count("batch_size", t.batch_size);
    s.read("alpha", t.alpha);
    s.read("margin_grid", t.margin_grid);
    s.read("parallel", t.parallel);
    std::string opt;
    s.read("optimizer", opt);
    if (opt == "adam") t.optimizer = Optimizer::adam;
    else if (opt == "sgd") t.optimizer = Optimizer::sgd;
    else if (!opt.empty()) throw ConfigError("optimizer must be sgd or adam");
  });

  section(root, "prompt", [&](Section& s) {
    enum_value(s, "mode", cfg.prompt.mode, parse_mode);
    s.count("k", cfg.prompt.k);
    s.count("neighbors", cfg.prompt.neighbors);
    s.read("split", cfg.prompt.split);
  });

  section(root, "adapter", [&](Section& s) {
    auto& a = cfg.adapter;
    s.count("d_model", a.lm.d_model);
    s.count("n_layers", a.lm.n_layers);
    s.count("n_heads", a.lm.n_heads);
    s.count("context_len", a.lm.context_len);
    s.count("mlp_mult", a.lm.mlp_mult);
    s.count("epochs", a.epochs);
    s.read("lr", a.lr);
    s.count("batch_size", a.batch_size);
    enum_value(s, "loss", a.loss, parse_loss_mode);
    if (const json* v = s.get("positions")) {
      if (!v->is_array() || v->empty()) throw ConfigError("adapter.positions must be a non-empty array");
      a.positions.clear();
      for (const auto& p : *v) {
        if (!p.is_string()) throw ConfigError("adapter.positions entries must be strings");
        a.positions.push_back(parse_position(p.get<std::string>()));
      }
    }
    s.count("train_instances", a.train_instances);
    s.count("eval_instances", a.eval_instances);
  });

  section(root, "inductive", [&](Section& s) { s.read("rates", cfg.inductive.rates); });

  section(root, "mining", [&](Section& s) {
    enum_value(s, "family", cfg.mining.family, parse_family);
    s.count("dim", cfg.mining.dim);
    s.count("epochs", cfg.mining.epochs);
    s.read("gamma", cfg.mining.gamma);
    s.count("candidates", cfg.mining.candidates);
  });

  section(root, "backend", [&](Section& s) {
    auto& b = cfg.backend;
    s.read("url", b.url);
    s.read("timeout_s", b.timeout_s);
    s.count("max_retries", b.max_retries);
    s.read("backoff_ms", b.backoff_ms);
    s.count("window", b.window);
    s.read("prompt_field", b.prompt_field);
    s.read("response_field", b.response_field);
  });

  root.done();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

void use_data_dir(ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.dataset.train = dir / "train.tsv";
  cfg.dataset.valid = dir / "valid.tsv";
  cfg.dataset.test = dir / "test.tsv";
  cfg.dataset.entity_descriptions = dir / "entities.tsv";
  cfg.dataset.relation_descriptions = dir / "relations.tsv";
}

void apply_environment(ExperimentConfig& cfg) {
  const char* env = std::getenv("KOPA_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || errno != 0 || env[0] == '-') throw ConfigError("KOPA_SEED must be a non-negative integer");
  cfg.seed = v;
}

void validate(const ExperimentConfig& cfg) {
  cfg.master_seed();
  const std::pair<const char*, const std::filesystem::path*> files[] = {
      {"train", &cfg.dataset.train},
      {"valid", &cfg.dataset.valid},
      {"test", &cfg.dataset.test},
      {"entities", &cfg.dataset.entity_descriptions},
      {"relations", &cfg.dataset.relation_descriptions},
  };
  for (const auto& [name, p] : files) {
    if (p->empty()) throw ConfigError(std::string("dataset.") + name + " is not set");
    if (!std::filesystem::exists(*p)) throw ConfigError(std::string("dataset.") + name + " does not exist: " + p->string());
  }
  kopa::validate(cfg.kge.train);
  if (cfg.adapter.batch_size == 0) throw ConfigError("adapter.batch_size must be >= 1");
  if (!(cfg.adapter.lr > 0.0)) throw ConfigError("adapter.lr must be > 0");
  if (cfg.adapter.lm.n_heads == 0 || cfg.adapter.lm.d_model % cfg.adapter.lm.n_heads != 0) {
    throw ConfigError("adapter.d_model must be divisible by adapter.n_heads");
  }
  if (cfg.prompt.split != "train" && cfg.prompt.split != "valid" && cfg.prompt.split != "test") {
    throw ConfigError("prompts.split must be train, valid or test");
  }
  for (double ir : cfg.inductive.rates) {
    if (!(ir >= 0.0 && ir < 1.0)) throw ConfigError("inductive rates must lie in [0, 1)");
  }
  if (cfg.mining.candidates == 0) throw ConfigError("mining.candidates must be >= 1");
  if (!(cfg.backend.timeout_s > 0.0)) throw ConfigError("backend.timeout_s must be > 0");
  if (cfg.backend.window == 0) throw ConfigError("backend.window must be >= 1");
}

}  // namespace kopa::cli
