#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kopa/rng.hpp"
#include "kopa/tokenizer.hpp"

namespace kopa {

/// Named tensors packed into one flat buffer; lets the optimizer, the
/// finite-difference checker and the checkpoint writer treat all parameters
/// uniformly.
class ParamStore {
 public:
  struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t add(std::string name, std::vector<std::size_t> shape);
  std::span<double> view(std::size_t tensor) { return {data_.data() + tensors_[tensor].offset, tensors_[tensor].size}; }
  std::span<const double> view(std::size_t tensor) const {
    return {data_.data() + tensors_[tensor].offset, tensors_[tensor].size};
  }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return data_.size(); }

 private:
  std::vector<double> data_;
  std::vector<Tensor> tensors_;
};

struct ToyLMConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t context_len = 256;
  std::size_t mlp_mult = 4;
};

/// One input slot: a vocabulary token, or virtual slot 0..2 whose embedding is
/// supplied directly.
struct Slot {
  int token = -1;
  int virtual_index = -1;

  bool is_virtual() const noexcept { return virtual_index >= 0; }
};

/// Row-major T x N matrix of doubles.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

using VirtualVectors = std::array<std::vector<double>, 3>;

/// Pre-LN causal transformer: token + learned positional embeddings, n_layers
/// of (multi-head causal self-attention, GELU MLP), final LayerNorm and an
/// untied output head. Position i attends to j <= i only.
class ToyLM {
 public:
  ToyLM() = default;
  ToyLM(const ToyLMConfig& config, Tokenizer tokenizer, Rng& rng);

  const ToyLMConfig& config() const noexcept { return config_; }
  const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
  std::size_t vocab_size() const noexcept { return tokenizer_.size(); }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  /// Logits for every position (T x |vocab|).
  Matrix forward(std::span<const Slot> seq, const VirtualVectors& virtual_vectors) const;

  /// Forward and backward for a loss over selected positions. `dlogits(i)` is
  /// asked for the gradient row of each position in `rows`. Parameter
  /// gradients accumulate into `grad` (same layout as params().data());
  /// gradients w.r.t. the virtual vectors accumulate into `dvirtual`.
  struct LossRows {
    std::vector<std::size_t> rows;
    std::vector<int> targets;
  };
  double loss_and_grad(std::span<const Slot> seq, const VirtualVectors& virtual_vectors,
                       const LossRows& loss, std::span<double> grad, VirtualVectors* dvirtual) const;

  /// Logits restricted to `rows`.
  Matrix forward_rows(std::span<const Slot> seq, const VirtualVectors& virtual_vectors,
                      std::span<const std::size_t> rows) const;

  /// Sectioned binary checkpoint: "TLM1", u32 {d_model, n_layers, n_heads,
  /// context_len, mlp_mult}, u32 token count + length-prefixed tokens, u32
  /// tensor count, then per tensor: name, u32 rank, u32 dims, f32 payload.
  void save(const std::filesystem::path& path) const;
  static ToyLM load(const std::filesystem::path& path);

 private:
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Cache;

  void define_params();
  void forward_impl(std::span<const Slot> seq, const VirtualVectors& virtual_vectors, Cache& cache) const;

  ToyLMConfig config_;
  Tokenizer tokenizer_;
  ParamStore params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_out_ = 0, b_out_ = 0;
  std::vector<Layer> layers_;
};

/// Mean negative log-likelihood of `targets` over positions where `mask` is
/// set. targets[i] is the token expected after position i (-1 for none).
/// Throws DataError when the mask selects nothing.
double lm_loss(const Matrix& logits, std::span<const int> targets, const std::vector<bool>& mask);

}  // namespace kopa
