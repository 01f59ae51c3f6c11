#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "kopa/adapter.hpp"
#include "kopa/binary_io.hpp"
#include "kopa/error.hpp"
#include "kopa/parallel.hpp"

namespace kopa {

std::string_view to_string(PrefixPosition p) {
  switch (p) {
    case PrefixPosition::prefix: return "prefix";
    case PrefixPosition::infix: return "infix";
    case PrefixPosition::suffix: return "suffix";
  }
  return "?";
}

PrefixPosition parse_position(std::string_view name) {
  for (auto p : {PrefixPosition::prefix, PrefixPosition::infix, PrefixPosition::suffix}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown prefix position '" + std::string(name) + "'");
}

std::string_view to_string(LossMode m) {
  return m == LossMode::answer_only ? "answer" : "full";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "answer") return LossMode::answer_only;
  if (name == "full") return LossMode::full_sequence;
  throw ConfigError("unknown loss mode '" + std::string(name) + "' (expected answer or full)");
}

PrefixAdapter PrefixAdapter::init(std::size_t d_in, std::size_t d_model, Rng& rng) {
  if (d_in == 0 || d_model == 0) throw ConfigError("adapter dimensions must be positive");
  PrefixAdapter a{d_in, d_model, std::vector<double>(d_in * d_model), std::vector<double>(d_model, 0.0)};
  const double bound = 1.0 / std::sqrt(double(d_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& x : a.w) x = u(rng);
  return a;
}

std::vector<double> PrefixAdapter::project(std::span<const double> v) const {
  if (v.size() != d_in) {
    throw DataError("adapter expects width " + std::to_string(d_in) + ", got " + std::to_string(v.size()));
  }
  std::vector<double> out(b);
  for (std::size_t i = 0; i < d_in; ++i) {
    const double x = v[i];
    const double* row = w.data() + i * d_model;
    for (std::size_t j = 0; j < d_model; ++j) out[j] += x * row[j];
  }
  return out;
}

VirtualTokenPrefix adapt(const PrefixAdapter& adapter, std::span<const double> h,
                         std::span<const double> r, std::span<const double> t,
                         PrefixPosition position) {
  return {{adapter.project(h), adapter.project(r), adapter.project(t)}, position};
}

MixedSequence assemble_sequence(PrefixPosition position, std::span<const int> instruction,
                                std::span<const int> triple, std::span<const int> answer,
                                std::size_t context_len) {
  MixedSequence seq;
  auto text = [&](std::span<const int> toks) {
    for (int tok : toks) seq.slots.push_back({tok, -1});
  };
  auto virt = [&] {
    seq.virtual_begin = seq.slots.size();
    for (int v = 0; v < 3; ++v) seq.slots.push_back({-1, v});
  };
  switch (position) {
    case PrefixPosition::prefix:
      virt();
      text(instruction);
      text(triple);
      break;
    case PrefixPosition::infix:
      text(instruction);
      virt();
      text(triple);
      break;
    case PrefixPosition::suffix:
      text(instruction);
      text(triple);
      virt();
      break;
  }
  seq.answer_begin = seq.slots.size();
  text(answer);
  if (seq.slots.size() > context_len) {
    throw DataError("sequence of " + std::to_string(seq.slots.size()) + " slots exceeds context length " +
                    std::to_string(context_len));
  }
  return seq;
}

TargetMask make_targets(const MixedSequence& seq, LossMode mode) {
  const std::size_t n = seq.slots.size();
  TargetMask tm{std::vector<int>(n, -1), std::vector<bool>(n, false)};
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Slot& next = seq.slots[i + 1];
    if (next.is_virtual()) continue;
    tm.targets[i] = next.token;
    tm.mask[i] = mode == LossMode::full_sequence || i + 1 >= seq.answer_begin;
  }
  return tm;
}

std::vector<KopaExample> encode_examples(const EmbeddingModel& embeddings, const Tokenizer& tokenizer,
                                         std::span<const PromptInstance> corpus) {
  std::vector<KopaExample> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& inst = corpus[i];
    if (!inst.prefix) throw DataError("instance " + std::to_string(i) + " has no prefix triple");
    const Triple& p = *inst.prefix;
    if (p.head >= embeddings.num_entities() || p.tail >= embeddings.num_entities() ||
        p.relation >= embeddings.num_relations()) {
      throw DataError("instance " + std::to_string(i) + " prefix triple is outside the embedding tables");
    }
    if (!inst.answer) throw DataError("instance " + std::to_string(i) + " has no answer label");
    KopaExample ex;
    ex.instruction = tokenizer.encode(inst.instruction);
    ex.triple = tokenizer.encode(inst.triple_text);
    ex.label = *inst.answer == kTrue;
    ex.features = {entity_feature(embeddings, p.head), relation_feature(embeddings, p.relation),
                   entity_feature(embeddings, p.tail)};
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

struct Prepared {
  VirtualTokenPrefix prefix;
  MixedSequence seq;
};

Prepared prepare(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                 PrefixPosition position, bool with_answer) {
  const int answer = ex.label ? lm.tokenizer().true_id() : lm.tokenizer().false_id();
  std::span<const int> ans(&answer, with_answer ? 1 : 0);
  return {adapt(adapter, ex.features[0], ex.features[1], ex.features[2], position),
          assemble_sequence(position, ex.instruction, ex.triple, ans, lm.config().context_len)};
}

ToyLM::LossRows loss_rows(const MixedSequence& seq, LossMode mode) {
  auto tm = make_targets(seq, mode);
  ToyLM::LossRows rows;
  for (std::size_t i = 0; i < tm.mask.size(); ++i) {
    if (tm.mask[i]) {
      rows.rows.push_back(i);
      rows.targets.push_back(tm.targets[i]);
    }
  }
  return rows;
}

}  // namespace

double kopa_loss_and_grad(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                          PrefixPosition position, LossMode mode, std::span<double> lm_grad,
                          std::span<double> adapter_grad) {
  auto p = prepare(lm, adapter, ex, position, true);
  VirtualVectors dvirtual;
  const double loss = lm.loss_and_grad(p.seq.slots, p.prefix.tokens, loss_rows(p.seq, mode), lm_grad, &dvirtual);
  const std::size_t din = adapter.d_in, dm = adapter.d_model;
  for (std::size_t v = 0; v < 3; ++v) {
    if (dvirtual[v].empty()) continue;
    const auto& f = ex.features[v];
    for (std::size_t i = 0; i < din; ++i) {
      double* g = adapter_grad.data() + i * dm;
      for (std::size_t j = 0; j < dm; ++j) g[j] += f[i] * dvirtual[v][j];
    }
    double* gb = adapter_grad.data() + din * dm;
    for (std::size_t j = 0; j < dm; ++j) gb[j] += dvirtual[v][j];
  }
  return loss;
}

double kopa_loss(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                 PrefixPosition position, LossMode mode) {
  auto p = prepare(lm, adapter, ex, position, true);
  auto rows = loss_rows(p.seq, mode);
  Matrix logits = lm.forward_rows(p.seq.slots, p.prefix.tokens, rows.rows);
  std::vector<bool> mask(rows.rows.size(), true);
  return lm_loss(logits, rows.targets, mask);
}

double kopa_grad_check(ToyLM lm, PrefixAdapter adapter, const KopaExample& ex,
                       PrefixPosition position, LossMode mode, double eps) {
  std::vector<double> lm_grad(lm.params().size(), 0.0), ad_grad(adapter.size(), 0.0);
  kopa_loss_and_grad(lm, adapter, ex, position, mode, lm_grad, ad_grad);

  double worst = 0.0;
  auto probe = [&](double& x, double analytic) {
    const double saved = x;
    x = saved + eps;
    const double up = kopa_loss(lm, adapter, ex, position, mode);
    x = saved - eps;
    const double down = kopa_loss(lm, adapter, ex, position, mode);
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    worst = std::max(worst, scale < 1e-6 ? std::abs(analytic - numeric) : std::abs(analytic - numeric) / scale);
  };
  auto& params = lm.params().data();
  for (std::size_t i = 0; i < params.size(); ++i) probe(params[i], lm_grad[i]);
  for (std::size_t i = 0; i < adapter.w.size(); ++i) probe(adapter.w[i], ad_grad[i]);
  for (std::size_t i = 0; i < adapter.b.size(); ++i) probe(adapter.b[i], ad_grad[adapter.w.size() + i]);
  return worst;
}

bool kopa_predict(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                  PrefixPosition position) {
  auto p = prepare(lm, adapter, ex, position, false);
  const std::size_t row = p.seq.slots.size() - 1;
  Matrix logits = lm.forward_rows(p.seq.slots, p.prefix.tokens, std::span<const std::size_t>(&row, 1));
  auto r = logits.row(0);
  return r[std::size_t(lm.tokenizer().true_id())] > r[std::size_t(lm.tokenizer().false_id())];
}

std::vector<bool> kopa_predict_all(const ToyLM& lm, const PrefixAdapter& adapter,
                                   std::span<const KopaExample> examples, PrefixPosition position,
                                   bool parallel) {
  std::vector<char> out(examples.size(), 0);
  auto one = [&](std::size_t i) { out[i] = kopa_predict(lm, adapter, examples[i], position); };
  if (parallel) {
    parallel_for(examples.size(), one);
  } else {
    for (std::size_t i = 0; i < examples.size(); ++i) one(i);
  }
  return {out.begin(), out.end()};
}

namespace {

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

struct Adam {
  std::vector<double> m, v;
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::span<double> params, std::span<const double> grad, double lr, std::size_t t) {
    const double bc1 = 1.0 - std::pow(kBeta1, double(t)), bc2 = 1.0 - std::pow(kBeta2, double(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
    }
  }
};

}  // namespace

AdapterTrainResult train_adapter(const EmbeddingModel& frozen, std::span<const PromptInstance> corpus,
                                 ToyLM& lm, PrefixAdapter& adapter, const AdapterTrainConfig& config) {
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (adapter.d_model != lm.config().d_model) throw ConfigError("adapter output width differs from d_model");
  const auto entity_before = frozen.entity_table;
  const auto relation_before = frozen.relation_table;

  auto examples = encode_examples(frozen, lm.tokenizer(), corpus);
  if (examples.empty()) throw DataError("adapter training corpus is empty");
  if (examples.front().features[0].size() != adapter.d_in) {
    throw DataError("embedding width " + std::to_string(examples.front().features[0].size()) +
                    " does not match adapter input " + std::to_string(adapter.d_in));
  }

  const std::size_t n_lm = lm.params().size(), n_ad = adapter.size();
  Adam lm_opt(n_lm), ad_opt(n_ad);
  std::vector<std::uint32_t> order(examples.size());
  AdapterTrainResult result;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0u);
    auto rng = derive_rng(config.seed, {7, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      std::vector<std::vector<double>> lm_grads(b), ad_grads(b);
      std::vector<double> losses(b);
      auto one = [&](std::size_t j) {
        lm_grads[j].assign(n_lm, 0.0);
        ad_grads[j].assign(n_ad, 0.0);
        losses[j] = kopa_loss_and_grad(lm, adapter, examples[order[start + j]], config.position,
                                       config.loss, lm_grads[j], ad_grads[j]);
      };
      if (config.parallel) {
        parallel_for(b, one);
      } else {
        for (std::size_t j = 0; j < b; ++j) one(j);
      }
      // Fixed-order reduction keeps results independent of thread count.
      std::vector<double> lm_grad(n_lm, 0.0), ad_grad(n_ad, 0.0);
      const double inv_b = 1.0 / double(b);
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t i = 0; i < n_lm; ++i) lm_grad[i] += lm_grads[j][i] * inv_b;
        for (std::size_t i = 0; i < n_ad; ++i) ad_grad[i] += ad_grads[j][i] * inv_b;
        epoch_loss += losses[j];
      }
      ++step;
      lm_opt.step(lm.params().data(), lm_grad, config.lr, step);
      std::vector<double> ad_params(adapter.w);
      ad_params.insert(ad_params.end(), adapter.b.begin(), adapter.b.end());
      ad_opt.step(ad_params, ad_grad, config.lr, step);
      std::copy(ad_params.begin(), ad_params.begin() + std::ptrdiff_t(adapter.w.size()), adapter.w.begin());
      std::copy(ad_params.begin() + std::ptrdiff_t(adapter.w.size()), ad_params.end(), adapter.b.begin());
    }
    epoch_loss /= double(order.size());
    if (!std::isfinite(epoch_loss)) throw TrainingError(epoch, "non-finite adapter loss");
    result.history.push_back(epoch_loss);
    spdlog::debug("adapter[{}] epoch {} loss {:.6f}", to_string(config.position), epoch, epoch_loss);
  }

  auto preds = kopa_predict_all(lm, adapter, examples, config.position, config.parallel);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) correct += preds[i] == examples[i].label;
  result.train_accuracy = double(correct) / double(examples.size());
  result.embeddings_unchanged =
      frozen.entity_table == entity_before && frozen.relation_table == relation_before;
  return result;
}

ReachReport attention_reach_check(const ToyLM& lm, PrefixPosition position, Rng& rng) {
  const std::size_t d = lm.config().d_model;
  std::uniform_int_distribution<int> tok(0, int(lm.vocab_size()) - 1);
  std::vector<int> instruction(5), triple(4), answer(1);
  for (auto* v : {&instruction, &triple, &answer}) {
    for (auto& x : *v) x = tok(rng);
  }
  auto seq = assemble_sequence(position, instruction, triple, answer, lm.config().context_len);

  std::normal_distribution<double> normal(0.0, 1.0);
  VirtualVectors base, moved;
  for (std::size_t v = 0; v < 3; ++v) {
    base[v].resize(d);
    moved[v].resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      base[v][j] = normal(rng);
      moved[v][j] = base[v][j] + 0.5 * normal(rng);
    }
  }
  Matrix a = lm.forward(seq.slots, base);
  Matrix b = lm.forward(seq.slots, moved);

  ReachReport rep;
  rep.position = position;
  rep.virtual_begin = seq.virtual_begin;
  rep.length = seq.slots.size();
  rep.sensitivity.resize(rep.length);
  for (std::size_t i = 0; i < rep.length; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s = std::max(s, std::abs(a.row(i)[j] - b.row(i)[j]));
    rep.sensitivity[i] = s;
  }
  rep.passed = true;
  for (std::size_t i = 0; i < rep.length; ++i) {
    if (i < seq.virtual_begin && rep.sensitivity[i] != 0.0) rep.passed = false;
    if (i >= seq.virtual_begin + 3 && !(rep.sensitivity[i] > 0.0)) rep.passed = false;
  }
  return rep;
}

CausalityReport causality_check(const ToyLM& lm, std::span<const Slot> seq,
                                const VirtualVectors& virtual_vectors, Rng& rng) {
  CausalityReport rep;
  Matrix base = lm.forward(seq, virtual_vectors);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < seq.size(); ++j) {
    std::vector<Slot> changed(seq.begin(), seq.end());
    VirtualVectors vv = virtual_vectors;
    if (changed[j].is_virtual()) {
      for (auto& x : vv[std::size_t(changed[j].virtual_index)]) x += normal(rng);
    } else {
      changed[j].token = (changed[j].token + 1) % int(lm.vocab_size());
    }
    Matrix out = lm.forward(changed, vv);
    for (std::size_t i = 0; i < j; ++i) {
      ++rep.pairs;
      auto x = base.row(i), y = out.row(i);
      if (!std::equal(x.begin(), x.end(), y.begin())) ++rep.violations;
    }
  }
  return rep;
}

void save_adapter(const PrefixAdapter& adapter, const std::filesystem::path& path) {
  io::Writer w(path);
  w.magic("KPA1");
  w.u32(static_cast<std::uint32_t>(adapter.d_in));
  w.u32(static_cast<std::uint32_t>(adapter.d_model));
  w.as_f32(std::span<const double>(adapter.w));
  w.as_f32(std::span<const double>(adapter.b));
  w.close();
}

PrefixAdapter load_adapter(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("KPA1");
  PrefixAdapter a;
  a.d_in = r.u32();
  a.d_model = r.u32();
  if (r.remaining() < (a.d_in * a.d_model + a.d_model) * sizeof(float)) {
    throw FormatError(r.path() + ": truncated adapter payload");
  }
  std::vector<float> w(a.d_in * a.d_model), b(a.d_model);
  r.f32s(w);
  r.f32s(b);
  r.expect_end();
  a.w.assign(w.begin(), w.end());
  a.b.assign(b.begin(), b.end());
  return a;
}

}  // namespace kopa
