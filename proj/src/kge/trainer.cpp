#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "kopa/error.hpp"
#include "kopa/kge.hpp"
#include "kopa/kge_kernels.hpp"
#include "kopa/parallel.hpp"

namespace kopa {

void validate(const TrainConfig& c) {
  if (c.negatives < 1) throw ConfigError("negatives (K) must be >= 1");
  if (!(c.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(c.alpha >= 0.0)) throw ConfigError("adversarial temperature must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.margin_grid.empty()) throw ConfigError("margin grid must not be empty");
}

namespace {

// Lazy Adam: moments and updates only for rows present in the gradient.
struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void apply_rows(std::vector<float>& table, std::size_t width, std::span<const std::uint32_t> rows,
                std::span<const double> grad, const TrainConfig& cfg, AdamState* adam,
                std::size_t step) {
  const double bc1 = 1.0 - std::pow(kBeta1, double(step));
  const double bc2 = 1.0 - std::pow(kBeta2, double(step));
  parallel_for(rows.size(), [&](std::size_t s) {
    const std::size_t base = std::size_t{rows[s]} * width;
    for (std::size_t i = 0; i < width; ++i) {
      const double g = grad[s * width + i];
      double delta;
      if (adam) {
        double& m = adam->m[base + i];
        double& v = adam->v[base + i];
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g * g;
        delta = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
      } else {
        delta = cfg.lr * g;
      }
      table[base + i] = static_cast<float>(double(table[base + i]) - delta);
    }
  });
}

}  // namespace

TrainResult train(const KnowledgeGraph& kg, const TrainConfig& config, ScoreFamily family,
                  double gamma) {
  validate(config);
  if (kg.train().empty()) throw DataError("cannot train embeddings on an empty graph");

  auto init_rng = derive_rng(config.seed, {0});
  TrainResult result{init_embeddings(kg, family, config.dim, gamma, init_rng), {}};
  EmbeddingModel& model = result.model;

  const bool use_adam = config.optimizer == Optimizer::adam;
  AdamState ent_state(use_adam ? model.entity_table.size() : 0);
  AdamState rel_state(use_adam ? model.relation_table.size() : 0);

  const std::size_t n = kg.train().size();
  const std::size_t k = config.negatives;
  std::vector<std::uint32_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0u);
    auto shuffle_rng = derive_rng(config.seed, {1, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n - start);
      NegativeBatch batch;
      batch.k = k;
      batch.positives.resize(b);
      batch.negatives.resize(b * k);
      parallel_for(b, [&](std::size_t j) {
        const auto& pos = kg.train()[order[start + j]];
        batch.positives[j] = pos;
        auto rng = derive_rng(config.seed, {2, epoch, start + j});
        auto negs = sample_negatives(kg, pos, k, rng);
        std::copy(negs.begin(), negs.end(), batch.negatives.begin() + std::ptrdiff_t(j * k));
      });

      const auto view = model.view();
      auto bl = config.parallel ? kernels::loss_parallel(view, batch, gamma, config.alpha)
                                : kernels::loss_serial(view, batch, gamma, config.alpha);
      if (!std::isfinite(bl.loss)) throw TrainingError(epoch, "non-finite loss (gamma=" + std::to_string(gamma) + ")");
      std::span<const Triple> triples(bl.triples);
      std::span<const double> coef(bl.coef);
      auto grad = config.parallel ? kernels::gradient_parallel(view, triples, coef)
                                  : kernels::gradient_serial(view, triples, coef);

      ++step;
      apply_rows(model.entity_table, model.d_e, grad.entity_rows, grad.entity_grad, config,
                 use_adam ? &ent_state : nullptr, step);
      apply_rows(model.relation_table, model.d_r, grad.relation_rows, grad.relation_grad, config,
                 use_adam ? &rel_state : nullptr, step);
      epoch_loss += bl.loss * double(b);
    }
    epoch_loss /= double(n);
    if (!std::isfinite(epoch_loss)) throw TrainingError(epoch, "non-finite epoch loss");
    result.history.push_back(epoch_loss);
    if (epoch % 50 == 0 || epoch + 1 == config.epochs) {
      spdlog::debug("{} gamma={} epoch {} loss {:.6f}", to_string(family), gamma, epoch, epoch_loss);
    }
  }
  return result;
}

}  // namespace kopa
