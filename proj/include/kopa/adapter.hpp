#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "kopa/kge.hpp"
#include "kopa/promptgen.hpp"
#include "kopa/rng.hpp"
#include "kopa/toylm.hpp"

namespace kopa {

enum class PrefixPosition { prefix, infix, suffix };

std::string_view to_string(PrefixPosition p);
PrefixPosition parse_position(std::string_view name);

/// Affine map from structural embedding space (d_in) into the LM's token
/// embedding space (d_model): token = v^T W + b, W stored d_in x d_model.
struct PrefixAdapter {
  std::size_t d_in = 0;
  std::size_t d_model = 0;
  std::vector<double> w;
  std::vector<double> b;

  /// Uniform +-1/sqrt(d_in) weights, zero bias.
  static PrefixAdapter init(std::size_t d_in, std::size_t d_model, Rng& rng);

  std::vector<double> project(std::span<const double> v) const;
  std::size_t size() const noexcept { return w.size() + b.size(); }
};

/// The three virtual knowledge tokens (head, relation, tail) and where they go.
struct VirtualTokenPrefix {
  VirtualVectors tokens;
  PrefixPosition position = PrefixPosition::prefix;

  static constexpr std::size_t length() noexcept { return 3; }
};

VirtualTokenPrefix adapt(const PrefixAdapter& adapter, std::span<const double> h,
                         std::span<const double> r, std::span<const double> t,
                         PrefixPosition position = PrefixPosition::prefix);

struct MixedSequence {
  std::vector<Slot> slots;
  std::size_t virtual_begin = 0;  // first of the three virtual slots
  std::size_t answer_begin = 0;   // == slots.size() when there is no answer
};

/// prefix: [K, I, X, A]; infix: [I, K, X, A]; suffix: [I, X, K, A].
/// Throws DataError if the result exceeds `context_len`.
MixedSequence assemble_sequence(PrefixPosition position, std::span<const int> instruction,
                                std::span<const int> triple, std::span<const int> answer,
                                std::size_t context_len);

enum class LossMode { answer_only, full_sequence };

std::string_view to_string(LossMode m);
LossMode parse_loss_mode(std::string_view name);

/// Next-token targets per position and the loss mask. A position whose next
/// slot is virtual has no target. answer_only keeps the positions that
/// predict answer tokens; full_sequence keeps every position with a target.
struct TargetMask {
  std::vector<int> targets;
  std::vector<bool> mask;
};
TargetMask make_targets(const MixedSequence& seq, LossMode mode);

/// A KoPA instance after tokenization and embedding lookup.
struct KopaExample {
  std::vector<int> instruction;
  std::vector<int> triple;
  bool label = false;
  std::array<std::vector<double>, 3> features;  // h, r, t adapter inputs
};

/// Throws DataError when an instance has no prefix triple or references an
/// index outside the embedding tables.
std::vector<KopaExample> encode_examples(const EmbeddingModel& embeddings, const Tokenizer& tokenizer,
                                         std::span<const PromptInstance> corpus);

/// Loss of one example; gradients accumulate into the two buffers.
double kopa_loss_and_grad(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                          PrefixPosition position, LossMode mode, std::span<double> lm_grad,
                          std::span<double> adapter_grad);

double kopa_loss(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                 PrefixPosition position, LossMode mode);

/// Max relative error of the analytic gradient against central differences
/// over every LM and adapter parameter (absolute error where both are
/// below 1e-6).
double kopa_grad_check(ToyLM lm, PrefixAdapter adapter, const KopaExample& ex,
                       PrefixPosition position, LossMode mode, double eps);

/// Compares the " true" and " false" logits at the answer position.
bool kopa_predict(const ToyLM& lm, const PrefixAdapter& adapter, const KopaExample& ex,
                  PrefixPosition position);
std::vector<bool> kopa_predict_all(const ToyLM& lm, const PrefixAdapter& adapter,
                                   std::span<const KopaExample> examples, PrefixPosition position,
                                   bool parallel = true);

struct AdapterTrainConfig {
  std::size_t epochs = 60;
  double lr = 3e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  PrefixPosition position = PrefixPosition::prefix;
  LossMode loss = LossMode::answer_only;
  bool parallel = true;
};

struct AdapterTrainResult {
  std::vector<double> history;  // mean loss per epoch
  double train_accuracy = 0.0;
  bool embeddings_unchanged = false;
};

/// Adam on the adapter and toy-LM parameters. `frozen` is only read; its
/// tables are compared bitwise before and after.
AdapterTrainResult train_adapter(const EmbeddingModel& frozen, std::span<const PromptInstance> corpus,
                                 ToyLM& lm, PrefixAdapter& adapter, const AdapterTrainConfig& config);

struct ReachReport {
  PrefixPosition position = PrefixPosition::prefix;
  std::size_t virtual_begin = 0;
  std::size_t length = 0;
  std::vector<double> sensitivity;  // max |d logit| per position
  bool passed = false;
};

/// Perturbs the virtual tokens of a random probe sequence and records how
/// much each position's logits move. prefix: every text position must move;
/// infix/suffix: nothing before the virtual tokens may move, and every text
/// position after them must.
ReachReport attention_reach_check(const ToyLM& lm, PrefixPosition position, Rng& rng);

struct CausalityReport {
  std::size_t pairs = 0;
  std::size_t violations = 0;
};

/// For every position j, perturbs slot j and confirms logits at all i < j
/// are bitwise unchanged.
CausalityReport causality_check(const ToyLM& lm, std::span<const Slot> seq,
                                const VirtualVectors& virtual_vectors, Rng& rng);

/// "KPA1", u32 {d_in, d_model}, W row-major f32, b f32.
void save_adapter(const PrefixAdapter& adapter, const std::filesystem::path& path);
PrefixAdapter load_adapter(const std::filesystem::path& path);

}  // namespace kopa
