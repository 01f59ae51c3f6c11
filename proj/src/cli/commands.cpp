#include <algorithm>
#include <fstream>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "kopa/classifier.hpp"
#include "kopa/cli.hpp"
#include "kopa/error.hpp"

namespace kopa::cli {

using ojson = nlohmann::ordered_json;

namespace {

// Stream ids for derive_rng, one per command-level consumer of randomness.
enum Stream : std::uint64_t {
  kPromptStream = 101,
  kAdapterCorpusStream = 102,
  kAdapterInitStream = 103,
  kAdapterEvalStream = 104,
  kInductiveStream = 105,
  kMiningStream = 106,
};

Dataset load(const ExperimentConfig& cfg, bool positives_only = false) {
  validate(cfg);
  auto paths = cfg.dataset;
  paths.positives_only = positives_only;
  return load_graph(paths);
}

ojson header(const char* command, const ExperimentConfig& cfg) {
  ojson j;
  j["report_version"] = kReportVersion;
  j["command"] = command;
  j["seed"] = cfg.master_seed();
  return j;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_text(const std::filesystem::path& path) {
  ensure_dir(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_report(const ExperimentConfig& cfg, const std::string& name, const ojson& report) {
  auto path = cfg.output_dir / (name + "_report.json");
  open_text(path) << report.dump(2) << '\n';
  spdlog::info("wrote {}", path.string());
}

std::string csv_double(double v) { return fmt::format("{}", v); }

ojson metrics_json(const Metrics& m) {
  ojson j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tn"] = m.tn;
  return j;
}

std::vector<bool> labels_of(std::span<const LabeledTriple> triples) {
  std::vector<bool> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back(t.label);
  return out;
}

ThresholdClassifier fit_on(const EmbeddingModel& model, std::span<const LabeledTriple> valid) {
  auto scores = score_all(model, valid);
  std::vector<ScoredLabel> sl(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) sl[i] = {scores[i], valid[i].label};
  return fit_threshold(sl);
}

Metrics classify_with(const EmbeddingModel& model, const ThresholdClassifier& clf,
                      std::span<const LabeledTriple> test) {
  return evaluate(clf.predict(score_all(model, test)), labels_of(test));
}

struct GridResult {
  EmbeddingModel model;
  double gamma = 0.0;
  ThresholdClassifier classifier;
  ojson candidates = ojson::array();
  std::vector<std::pair<double, std::vector<double>>> histories;
};

// One model per margin in the grid; the best validation accuracy wins, the
// earlier grid entry on ties.
GridResult train_grid(const KnowledgeGraph& kg, std::span<const LabeledTriple> valid,
                      const KgeSettings& settings, std::uint64_t seed) {
  GridResult best;
  bool have = false;
  TrainConfig tc = settings.train;
  tc.seed = seed;
  for (double gamma : tc.margin_grid) {
    TrainResult r;
    try {
      r = train(kg, tc, settings.family, gamma);
    } catch (const TrainingError& e) {
      throw TrainingError(e.epoch(), fmt::format("gamma={}: {}", gamma, e.what()));
    }
    auto clf = fit_on(r.model, valid);
    spdlog::info("{} gamma={} valid accuracy {:.4f}", to_string(settings.family), gamma, clf.fit_accuracy);
    ojson row;
    row["gamma"] = gamma;
    row["valid_accuracy"] = clf.fit_accuracy;
    row["theta"] = clf.theta;
    row["final_loss"] = r.history.empty() ? 0.0 : r.history.back();
    best.candidates.push_back(row);
    best.histories.emplace_back(gamma, r.history);
    if (!have || clf.fit_accuracy > best.classifier.fit_accuracy) {
      best.model = std::move(r.model);
      best.gamma = gamma;
      best.classifier = clf;
      have = true;
    }
  }
  return best;
}

ojson dataset_json(const Dataset& ds) {
  std::size_t vp = 0, tp = 0;
  for (const auto& t : ds.valid) vp += t.label;
  for (const auto& t : ds.test) tp += t.label;
  ojson j;
  j["entities"] = ds.graph.num_entities();
  j["relations"] = ds.graph.num_relations();
  j["train"] = ds.graph.train().size();
  j["valid_positive"] = vp;
  j["valid_negative"] = ds.valid.size() - vp;
  j["test_positive"] = tp;
  j["test_negative"] = ds.test.size() - tp;
  return j;
}

std::span<const LabeledTriple> split_of(const Dataset& ds, const std::string& split) {
  if (split == "valid") return ds.valid;
  if (split == "test") return ds.test;
  throw ConfigError("split must be valid or test here, got '" + split + "'");
}

std::filesystem::path adapter_file(const ExperimentConfig& cfg, PrefixPosition p) {
  return cfg.output_dir / fmt::format("adapter_{}.kpa", to_string(p));
}
std::filesystem::path toylm_file(const ExperimentConfig& cfg, PrefixPosition p) {
  return cfg.output_dir / fmt::format("toylm_{}.tlm", to_string(p));
}

}  // namespace

Tokenizer build_tokenizer(const KnowledgeGraph& kg) {
  std::vector<std::string> texts{std::string(kInstruction)};
  for (std::size_t e = 0; e < kg.num_entities(); ++e) {
    const auto& d = kg.entity_description(EntityId(e));
    texts.push_back(normalize_whitespace(d.empty() ? kg.entities().name(EntityId(e)) : d));
  }
  for (std::size_t r = 0; r < kg.num_relations(); ++r) {
    const auto& d = kg.relation_description(RelationId(r));
    texts.push_back(normalize_whitespace(d.empty() ? kg.relations().name(RelationId(r)) : d));
  }
  return Tokenizer::build(texts);
}

ojson cmd_stats(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  auto report = header("stats", cfg);
  report["dataset"] = dataset_json(ds);
  write_report(cfg, "stats", report);
  return report;
}

ojson cmd_kge_train(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  const auto seed = cfg.master_seed();
  auto grid = train_grid(ds.graph, ds.valid, cfg.kge, seed);

  ensure_dir(cfg.output_dir);
  save_embeddings(grid.model, cfg.embeddings_path());
  {
    auto out = open_text(cfg.output_dir / "kge_history.csv");
    out << "gamma,epoch,loss\n";
    for (const auto& [gamma, hist] : grid.histories) {
      for (std::size_t e = 0; e < hist.size(); ++e) out << csv_double(gamma) << ',' << e << ',' << csv_double(hist[e]) << '\n';
    }
  }
  {
    auto out = open_text(cfg.output_dir / "kge_grid.csv");
    out << "gamma,valid_accuracy,theta,final_loss\n";
    for (const auto& row : grid.candidates) {
      out << csv_double(row["gamma"].get<double>()) << ',' << csv_double(row["valid_accuracy"].get<double>())
          << ',' << csv_double(row["theta"].get<double>()) << ',' << csv_double(row["final_loss"].get<double>())
          << '\n';
    }
  }

  const auto& t = cfg.kge.train;
  auto report = header("kge-train", cfg);
  report["dataset"] = dataset_json(ds);
  report["family"] = to_string(cfg.kge.family);
  report["dim"] = t.dim;
  report["negatives"] = t.negatives;
  report["lr"] = t.lr;
  report["epochs"] = t.epochs;
  report["batch_size"] = t.batch_size;
  report["alpha"] = t.alpha;
  report["optimizer"] = t.optimizer == Optimizer::adam ? "adam" : "sgd";
  report["grid"] = grid.candidates;
  report["selected_gamma"] = grid.gamma;
  report["theta"] = grid.classifier.theta;
  report["valid_accuracy"] = grid.classifier.fit_accuracy;
  report["embeddings"] = cfg.embeddings_path().filename().string();
  write_report(cfg, "kge_train", report);
  return report;
}

ojson cmd_classify(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  auto model = load_embeddings(cfg.embeddings_path(), &ds.graph);
  auto clf = fit_on(model, ds.valid);
  auto m = classify_with(model, clf, ds.test);
  spdlog::info("theta {:.6f} valid accuracy {:.4f} test accuracy {:.4f} f1 {:.4f}", clf.theta,
               clf.fit_accuracy, m.accuracy, m.f1);

  open_text(cfg.output_dir / "classify_metrics.csv") << metrics_csv_header() << '\n' << metrics_csv_row(m) << '\n';
  auto report = header("classify", cfg);
  report["family"] = to_string(model.family);
  report["gamma"] = model.gamma;
  report["theta"] = clf.theta;
  report["valid_accuracy"] = clf.fit_accuracy;
  report["test"] = metrics_json(m);
  write_report(cfg, "classify", report);
  return report;
}

ojson cmd_prompts(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  const auto& p = cfg.prompt;
  auto rng = derive_rng(cfg.master_seed(), {kPromptStream});
  std::vector<PromptInstance> corpus;
  if (p.split == "train") {
    if (p.mode == PromptMode::zsr || p.mode == PromptMode::icl) {
      throw ConfigError(fmt::format("mode {} builds evaluation prompts; use split valid or test", to_string(p.mode)));
    }
    corpus = build_training_corpus(ds.graph, p.mode, p.neighbors, rng);
  } else {
    corpus = build_eval_prompts(ds.graph, p.mode, split_of(ds, p.split), p.k, p.neighbors, rng);
  }

  std::size_t pos = 0, neg = 0;
  for (const auto& inst : corpus) {
    if (inst.answer) (*inst.answer == kTrue ? pos : neg) += 1;
  }
  const auto path = cfg.prompts_path();
  ensure_dir(path.parent_path().empty() ? "." : path.parent_path());
  export_jsonl(corpus, path);
  spdlog::info("{} {} prompts: {} instances ({} true, {} false)", to_string(p.mode), p.split, corpus.size(), pos, neg);

  auto report = header("prompts", cfg);
  report["mode"] = to_string(p.mode);
  report["split"] = p.split;
  report["k"] = p.k;
  report["neighbors"] = p.neighbors;
  report["instances"] = corpus.size();
  report["true"] = pos;
  report["false"] = neg;
  report["unlabeled"] = corpus.size() - pos - neg;
  report["file"] = path.filename().string();
  write_report(cfg, "prompts", report);
  return report;
}

ojson cmd_adapter_train(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  const auto seed = cfg.master_seed();
  const auto& a = cfg.adapter;
  auto frozen = load_embeddings(cfg.embeddings_path(), &ds.graph);

  auto corpus_rng = derive_rng(seed, {kAdapterCorpusStream});
  auto corpus = build_training_corpus(ds.graph, PromptMode::kopa, 0, corpus_rng);
  if (a.train_instances > 0 && corpus.size() > a.train_instances) corpus.resize(a.train_instances);
  auto tokenizer = build_tokenizer(ds.graph);
  const std::size_t d_in = entity_feature(frozen, 0).size();

  ensure_dir(cfg.output_dir);
  auto history = open_text(cfg.output_dir / "adapter_history.csv");
  history << "position,epoch,loss\n";
  auto table = open_text(cfg.output_dir / "adapter_train.csv");
  table << "position,final_loss,train_accuracy,embeddings_unchanged\n";

  ojson rows = ojson::array();
  for (auto position : a.positions) {
    // Identical initial weights for every position, so rows differ only by placement.
    auto init_rng = derive_rng(seed, {kAdapterInitStream});
    ToyLM lm(a.lm, tokenizer, init_rng);
    auto adapter = PrefixAdapter::init(d_in, a.lm.d_model, init_rng);
    AdapterTrainConfig tc{a.epochs, a.lr, a.batch_size, seed, position, a.loss, true};
    auto result = train_adapter(frozen, corpus, lm, adapter, tc);
    save_adapter(adapter, adapter_file(cfg, position));
    lm.save(toylm_file(cfg, position));

    const double final_loss = result.history.empty() ? 0.0 : result.history.back();
    spdlog::info("adapter {}: final loss {:.5f}, train accuracy {:.4f}, frozen tables {}", to_string(position),
                 final_loss, result.train_accuracy, result.embeddings_unchanged ? "pass" : "FAIL");
    for (std::size_t e = 0; e < result.history.size(); ++e) {
      history << to_string(position) << ',' << e << ',' << csv_double(result.history[e]) << '\n';
    }
    table << to_string(position) << ',' << csv_double(final_loss) << ',' << csv_double(result.train_accuracy) << ','
          << (result.embeddings_unchanged ? "pass" : "fail") << '\n';
    ojson row;
    row["position"] = to_string(position);
    row["final_loss"] = final_loss;
    row["train_accuracy"] = result.train_accuracy;
    row["frozen_embeddings"] = result.embeddings_unchanged ? "pass" : "fail";
    rows.push_back(row);
  }

  auto report = header("adapter-train", cfg);
  report["instances"] = corpus.size();
  report["vocab"] = tokenizer.size();
  report["d_in"] = d_in;
  report["d_model"] = a.lm.d_model;
  report["epochs"] = a.epochs;
  report["loss"] = to_string(a.loss);
  report["positions"] = rows;
  write_report(cfg, "adapter_train", report);
  return report;
}

ojson cmd_adapter_eval(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  const auto seed = cfg.master_seed();
  const auto& a = cfg.adapter;
  auto frozen = load_embeddings(cfg.embeddings_path(), &ds.graph);

  auto rng = derive_rng(seed, {kAdapterEvalStream});
  auto prompts = build_eval_prompts(ds.graph, PromptMode::kopa, ds.test, 0, 0, rng);
  if (a.eval_instances > 0 && prompts.size() > a.eval_instances) prompts.resize(a.eval_instances);

  auto table = open_text(cfg.output_dir / "adapter_eval.csv");
  table << "position," << metrics_csv_header() << '\n';
  ojson rows = ojson::array();
  for (auto position : a.positions) {
    auto lm = ToyLM::load(toylm_file(cfg, position));
    auto adapter = load_adapter(adapter_file(cfg, position));
    auto examples = encode_examples(frozen, lm.tokenizer(), prompts);
    auto preds = kopa_predict_all(lm, adapter, examples, position);
    std::vector<bool> labels;
    for (const auto& ex : examples) labels.push_back(ex.label);
    auto m = evaluate(preds, labels);
    spdlog::info("adapter {}: test accuracy {:.4f} f1 {:.4f}", to_string(position), m.accuracy, m.f1);
    table << to_string(position) << ',' << metrics_csv_row(m) << '\n';
    ojson row;
    row["position"] = to_string(position);
    row["metrics"] = metrics_json(m);
    rows.push_back(row);
  }

  auto report = header("adapter-eval", cfg);
  report["instances"] = prompts.size();
  report["positions"] = rows;
  write_report(cfg, "adapter_eval", report);
  return report;
}

ojson cmd_inductive(const ExperimentConfig& cfg) {
  auto ds = load(cfg);
  const auto seed = cfg.master_seed();
  const auto& kg = ds.graph;
  const std::string method(to_string(cfg.kge.family));

  auto table = open_text(cfg.output_dir / "inductive.csv");
  table << "ir,method,partition,count,accuracy,f1\n";
  ojson splits = ojson::array();
  for (std::size_t i = 0; i < cfg.inductive.rates.size(); ++i) {
    const double ir = cfg.inductive.rates[i];
    auto rng = derive_rng(seed, {kInductiveStream, i});
    InductiveSplit split;
    try {
      split = make_inductive_split(kg, ds.test, ir, rng);
    } catch (const DegenerateSplit& e) {
      throw DegenerateSplit(fmt::format("ir={}: {}", ir, e.what()));
    }
    for (const auto& t : split.retained_train) {
      if (split.is_inductive(t.head) || split.is_inductive(t.tail)) {
        throw std::logic_error("retained training triple touches an inductive entity");
      }
    }

    const auto dir = cfg.output_dir / "inductive" / fmt::format("ir_{:.2f}", ir);
    ensure_dir(dir);
    {
      std::vector<std::string> names;
      for (auto e : split.inductive_entities) names.push_back(kg.entities().name(e));
      std::sort(names.begin(), names.end());
      auto out = open_text(dir / "inductive_entities.txt");
      for (const auto& n : names) out << n << '\n';
    }
    auto [valid_seen, valid_unseen] = partition_seen_unseen(split, ds.valid);
    write_triples(dir / "train.tsv", kg, split.retained_train);
    write_labeled(dir / "valid_seen.tsv", kg, valid_seen);
    write_labeled(dir / "test_seen.tsv", kg, split.seen_test);
    write_labeled(dir / "test_unseen.tsv", kg, split.unseen_test);

    const auto positives = std::count_if(valid_seen.begin(), valid_seen.end(), [](const auto& t) { return t.label; });
    if (positives == 0 || positives == std::ssize(valid_seen)) {
      throw DegenerateSplit(fmt::format("ir={}: seen validation triples lack one of the two classes", ir));
    }
    auto sub = kg.with_train(split.retained_train);
    auto grid = train_grid(sub, valid_seen, cfg.kge, seed);

    ojson parts = ojson::array();
    const std::pair<const char*, std::span<const LabeledTriple>> partitions[] = {
        {"S", split.seen_test}, {"U", split.unseen_test}, {"A", ds.test}};
    for (const auto& [name, triples] : partitions) {
      ojson p;
      p["partition"] = name;
      p["count"] = triples.size();
      if (triples.empty()) {
        p["accuracy"] = nullptr;
        p["f1"] = nullptr;
        table << csv_double(ir) << ',' << method << ',' << name << ",0,,\n";
      } else {
        auto m = classify_with(grid.model, grid.classifier, triples);
        p["accuracy"] = m.accuracy;
        p["f1"] = m.f1;
        table << csv_double(ir) << ',' << method << ',' << name << ',' << triples.size() << ','
              << csv_double(m.accuracy) << ',' << csv_double(m.f1) << '\n';
      }
      parts.push_back(p);
    }
    spdlog::info("ir={}: {} inductive entities, {} retained train, S={} U={}", ir, split.inductive_entities.size(),
                 split.retained_train.size(), split.seen_test.size(), split.unseen_test.size());

    ojson s;
    s["ir"] = ir;
    s["directory"] = dir.lexically_relative(cfg.output_dir).generic_string();
    s["inductive_entities"] = split.inductive_entities.size();
    s["retained_train"] = split.retained_train.size();
    s["valid_seen"] = valid_seen.size();
    s["selected_gamma"] = grid.gamma;
    s["theta"] = grid.classifier.theta;
    s["method"] = method;
    s["partitions"] = parts;
    splits.push_back(s);
  }

  auto report = header("inductive", cfg);
  report["family"] = method;
  report["splits"] = splits;
  write_report(cfg, "inductive", report);
  return report;
}

ojson cmd_mine_negatives(const ExperimentConfig& cfg) {
  auto ds = load(cfg, true);
  const auto seed = cfg.master_seed();
  const auto& mc = cfg.mining;

  TrainConfig tc = cfg.kge.train;
  tc.dim = mc.dim;
  tc.epochs = mc.epochs;
  tc.seed = derive_seed(seed, {kMiningStream});
  auto miner = train(ds.graph, tc, mc.family, mc.gamma).model;

  TripleSet known;
  for (const auto& t : ds.valid) known.insert(t.triple);
  for (const auto& t : ds.test) known.insert(t.triple);
  auto scorer = [&](const Triple& t) { return score(miner, t); };
  auto mine = [&](std::span<const LabeledTriple> split, std::uint64_t stream) {
    std::vector<Triple> positives;
    for (const auto& t : split) positives.push_back(t.triple);
    auto rng = derive_rng(seed, {kMiningStream, stream});
    return mine_hard_negatives(ds.graph, scorer, positives, mc.candidates, rng, &known);
  };
  auto valid = mine(ds.valid, 1);
  auto test = mine(ds.test, 2);
  ensure_dir(cfg.output_dir);
  write_labeled(cfg.output_dir / "valid.tsv", ds.graph, valid);
  write_labeled(cfg.output_dir / "test.tsv", ds.graph, test);

  auto report = header("mine-negatives", cfg);
  report["scorer"] = to_string(mc.family);
  report["scorer_dim"] = mc.dim;
  report["scorer_epochs"] = mc.epochs;
  report["scorer_gamma"] = mc.gamma;
  report["candidates"] = mc.candidates;
  report["valid"] = valid.size();
  report["test"] = test.size();
  write_report(cfg, "mine_negatives", report);
  return report;
}

ojson cmd_llm_run(const ExperimentConfig& cfg) {
  cfg.master_seed();
  if (cfg.backend.url.empty()) throw ConfigError("backend.url is not set");
  auto instances = import_jsonl(cfg.prompts_path());

  // zsr/icl prompts carry no answer; take labels from the configured split
  // when it lines up with the corpus triple for triple.
  std::vector<std::optional<bool>> labels(instances.size());
  bool missing = false;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].answer) labels[i] = *instances[i].answer == kTrue;
    else missing = true;
  }
  if (missing && cfg.prompt.split != "train") {
    try {
      auto ds = load(cfg);
      auto split = split_of(ds, cfg.prompt.split);
      if (split.size() == instances.size()) {
        for (std::size_t i = 0; i < instances.size(); ++i) {
          if (!labels[i] && split[i].triple == instances[i].triple) labels[i] = split[i].label;
        }
      }
    } catch (const Error& e) {
      spdlog::info("no labels for unlabeled prompts: {}", e.what());
    }
  }

  auto results = run_backend(cfg.backend, instances);

  std::size_t ok = 0, failed = 0, unknown = 0;
  std::vector<bool> preds, truth;
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    ok += r.ok;
    failed += !r.ok;
    unknown += r.ok && r.answer == Answer::unknown;
    ojson row;
    row["index"] = i;
    row["status"] = r.ok ? "ok" : "failed";
    row["answer"] = r.answer == Answer::yes ? "true" : r.answer == Answer::no ? "false" : "unknown";
    row["attempts"] = r.attempts;
    if (!r.ok) row["error"] = r.error;
    rows.push_back(row);
    if (labels[i]) {
      const bool label = *labels[i];
      // Unknown or failed answers count as wrong.
      preds.push_back(r.answer == Answer::unknown ? !label : r.answer == Answer::yes);
      truth.push_back(label);
    }
  }

  auto report = header("llm-run", cfg);
  report["prompts"] = cfg.prompts_path().filename().string();
  report["instances"] = results.size();
  report["ok"] = ok;
  report["failed"] = failed;
  report["unknown"] = unknown;
  report["labeled"] = truth.size();
  if (!truth.empty()) report["metrics"] = metrics_json(evaluate(preds, truth));
  report["results"] = rows;
  write_report(cfg, "llm_run", report);
  if (!results.empty() && failed == results.size()) {
    throw DataError(fmt::format("all {} backend requests failed", failed));
  }
  return report;
}

}  // namespace kopa::cli
