#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kopa {

/// Whitespace tokenizer with a character fallback. Words seen while building
/// become tokens; an unseen word is spelled out with single-character tokens,
/// and an unseen character maps to <unk>.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;

  Tokenizer();
  /// Vocabulary: <unk>, "true", "false", then words and characters of
  /// `texts` in first-appearance order.
  static Tokenizer build(std::span<const std::string> texts);
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  std::vector<int> encode(std::string_view text) const;
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  int true_id() const { return id("true"); }
  int false_id() const { return id("false"); }

 private:
  int add(std::string_view token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace kopa
