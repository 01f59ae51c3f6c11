#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "kopa/binary_io.hpp"
#include "kopa/error.hpp"
#include "kopa/kge.hpp"
#include "kopa/kge_kernels.hpp"

namespace kopa {

std::string_view to_string(ScoreFamily f) {
  switch (f) {
    case ScoreFamily::TransE: return "TransE";
    case ScoreFamily::DistMult: return "DistMult";
    case ScoreFamily::ComplEx: return "ComplEx";
    case ScoreFamily::RotatE: return "RotatE";
  }
  return "?";
}

ScoreFamily parse_family(std::string_view name) {
  for (auto f : {ScoreFamily::TransE, ScoreFamily::DistMult, ScoreFamily::ComplEx, ScoreFamily::RotatE}) {
    std::string_view canonical = to_string(f);
    if (name.size() == canonical.size() &&
        std::equal(name.begin(), name.end(), canonical.begin(),
                   [](char a, char b) { return std::tolower(a) == std::tolower(b); })) {
      return f;
    }
  }
  throw ConfigError("unknown score family '" + std::string(name) + "'");
}

std::size_t relation_width(ScoreFamily family, std::size_t d_e) {
  if (d_e == 0) throw ConfigError("embedding dimension must be positive");
  switch (family) {
    case ScoreFamily::TransE:
    case ScoreFamily::DistMult:
      return d_e;
    case ScoreFamily::ComplEx:
    case ScoreFamily::RotatE:
      if (d_e % 2 != 0) {
        throw ConfigError(std::string(to_string(family)) + " needs an even entity dimension, got " +
                          std::to_string(d_e));
      }
      return family == ScoreFamily::ComplEx ? d_e : d_e / 2;
  }
  throw ConfigError("unknown score family");
}

EmbeddingModel init_embeddings(const KnowledgeGraph& kg, ScoreFamily family, std::size_t d_e,
                               double gamma, Rng& rng) {
  EmbeddingModel m;
  m.family = family;
  m.d_e = d_e;
  m.d_r = relation_width(family, d_e);
  m.gamma = static_cast<float>(gamma);

  const double range = (gamma + 2.0) / static_cast<double>(d_e);
  std::uniform_real_distribution<double> ent(-range, range);
  m.entity_table.resize(kg.num_entities() * m.d_e);
  for (auto& x : m.entity_table) x = static_cast<float>(ent(rng));

  m.relation_table.resize(kg.num_relations() * m.d_r);
  if (family == ScoreFamily::RotatE) {
    std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
    for (auto& x : m.relation_table) x = static_cast<float>(phase(rng));
  } else {
    for (auto& x : m.relation_table) x = static_cast<float>(ent(rng));
  }
  return m;
}

double score(const EmbeddingModel& model, const Triple& t) {
  return kernels::score_triple(model.view(), t);
}

std::vector<double> adversarial_weights(std::span<const double> neg_scores, double alpha) {
  if (neg_scores.empty()) throw DataError("adversarial weights need at least one score");
  std::vector<double> w(neg_scores.size());
  kernels::adversarial_softmax(neg_scores, alpha, w);
  return w;
}

double loss_batch(const EmbeddingModel& model, const NegativeBatch& batch, double alpha) {
  if (batch.negatives.size() != batch.positives.size() * batch.k) {
    throw DataError("negative batch shape mismatch");
  }
  return kernels::loss_serial(model.view(), batch, model.gamma, alpha).loss;
}

double grad_check(const EmbeddingModel& model, const NegativeBatch& batch, double alpha, double eps) {
  std::vector<double> ent(model.entity_table.begin(), model.entity_table.end());
  std::vector<double> rel(model.relation_table.begin(), model.relation_table.end());
  auto view = [&] { return TableView<double>{model.family, model.d_e, model.d_r, ent, rel}; };

  auto base = kernels::loss_serial(view(), batch, model.gamma, alpha);
  const std::vector<double> frozen = base.weights;
  auto grad = kernels::gradient_serial(view(), std::span<const Triple>(base.triples),
                                       std::span<const double>(base.coef));

  auto loss_at = [&] { return kernels::loss_serial(view(), batch, model.gamma, alpha, &frozen).loss; };
  double worst = 0.0;
  auto check = [&](std::vector<double>& table, std::size_t row, std::size_t width,
                   std::span<const double> analytic) {
    for (std::size_t i = 0; i < width; ++i) {
      double& x = table[row * width + i];
      const double saved = x;
      x = saved + eps;
      const double up = loss_at();
      x = saved - eps;
      const double down = loss_at();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale < 1e-6 ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
      worst = std::max(worst, err);
    }
  };
  for (std::size_t s = 0; s < grad.entity_rows.size(); ++s) {
    check(ent, grad.entity_rows[s], model.d_e,
          std::span<const double>(grad.entity_grad).subspan(s * model.d_e, model.d_e));
  }
  for (std::size_t s = 0; s < grad.relation_rows.size(); ++s) {
    check(rel, grad.relation_rows[s], model.d_r,
          std::span<const double>(grad.relation_grad).subspan(s * model.d_r, model.d_r));
  }
  return worst;
}

std::vector<double> score_all(const EmbeddingModel& model, std::span<const Triple> triples,
                              bool parallel) {
  std::vector<double> out(triples.size());
  if (parallel) {
    kernels::score_batch_parallel(model.view(), triples, std::span<double>(out));
  } else {
    kernels::score_batch_serial(model.view(), triples, std::span<double>(out));
  }
  return out;
}

std::vector<double> score_all(const EmbeddingModel& model, std::span<const LabeledTriple> triples,
                              bool parallel) {
  std::vector<Triple> plain;
  plain.reserve(triples.size());
  for (const auto& lt : triples) plain.push_back(lt.triple);
  return score_all(model, plain, parallel);
}

std::vector<double> entity_feature(const EmbeddingModel& model, EntityId e) {
  auto row = model.view().entity_row(e);
  return {row.begin(), row.end()};
}

std::vector<double> relation_feature(const EmbeddingModel& model, RelationId r) {
  auto row = model.view().relation_row(r);
  if (model.family != ScoreFamily::RotatE) return {row.begin(), row.end()};
  std::vector<double> out(2 * row.size());
  for (std::size_t k = 0; k < row.size(); ++k) {
    out[k] = std::cos(double(row[k]));
    out[row.size() + k] = std::sin(double(row[k]));
  }
  return out;
}

void save_embeddings(const EmbeddingModel& model, const std::filesystem::path& path) {
  io::Writer w(path);
  w.magic("KGE1");
  w.u32(static_cast<std::uint32_t>(model.family));
  w.u32(static_cast<std::uint32_t>(model.num_entities()));
  w.u32(static_cast<std::uint32_t>(model.num_relations()));
  w.u32(static_cast<std::uint32_t>(model.d_e));
  w.u32(static_cast<std::uint32_t>(model.d_r));
  w.f32s(model.entity_table);
  w.f32s(model.relation_table);
  w.f32(model.gamma);
  w.close();
}

EmbeddingModel load_embeddings(const std::filesystem::path& path, const KnowledgeGraph* expected) {
  io::Reader r(path);
  r.expect_magic("KGE1");
  EmbeddingModel m;
  const auto code = r.u32();
  if (code > static_cast<std::uint32_t>(ScoreFamily::RotatE)) {
    throw FormatError(r.path() + ": unknown family code " + std::to_string(code));
  }
  m.family = static_cast<ScoreFamily>(code);
  const auto n_ent = r.u32(), n_rel = r.u32();
  m.d_e = r.u32();
  m.d_r = r.u32();
  std::size_t want_dr = 0;
  try {
    want_dr = relation_width(m.family, m.d_e);
  } catch (const ConfigError& e) {
    throw FormatError(r.path() + ": " + e.what());
  }
  if (m.d_r != want_dr) {
    throw FormatError(r.path() + ": relation width " + std::to_string(m.d_r) + " does not match " +
                      std::string(to_string(m.family)) + " with d_e=" + std::to_string(m.d_e));
  }
  if (expected && (n_ent != expected->num_entities() || n_rel != expected->num_relations())) {
    throw FormatError(r.path() + ": header has |E|=" + std::to_string(n_ent) + " |R|=" +
                      std::to_string(n_rel) + " but graph has |E|=" +
                      std::to_string(expected->num_entities()) + " |R|=" +
                      std::to_string(expected->num_relations()));
  }
  const std::size_t payload =
      (std::size_t{n_ent} * m.d_e + std::size_t{n_rel} * m.d_r + 1) * sizeof(float);
  if (r.remaining() < payload) throw FormatError(r.path() + ": truncated table payload");
  m.entity_table.resize(std::size_t{n_ent} * m.d_e);
  m.relation_table.resize(std::size_t{n_rel} * m.d_r);
  r.f32s(m.entity_table);
  r.f32s(m.relation_table);
  m.gamma = r.f32();
  r.expect_end();
  return m;
}

}  // namespace kopa
