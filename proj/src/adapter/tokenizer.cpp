#include <cctype>

#include "kopa/error.hpp"
#include "kopa/tokenizer.hpp"

namespace kopa {

namespace {

template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) fn(text.substr(i, j - i));
    i = j;
  }
}

}  // namespace

Tokenizer::Tokenizer() {
  add("<unk>");
  add("true");
  add("false");
}

int Tokenizer::add(std::string_view token) {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
  Tokenizer t;
  for (const auto& text : texts) {
    for_each_word(text, [&](std::string_view w) {
      t.add(w);
      for (char c : w) t.add(std::string_view(&c, 1));
    });
  }
  return t;
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 3 || tokens[0] != "<unk>" || tokens[1] != "true" || tokens[2] != "false") {
    throw FormatError("token list must start with <unk>, true, false");
  }
  Tokenizer t;
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (t.add(tokens[i]) != static_cast<int>(i)) throw FormatError("duplicate token '" + tokens[i] + "'");
  }
  return t;
}

int Tokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for_each_word(text, [&](std::string_view w) {
    if (auto it = index_.find(std::string(w)); it != index_.end()) {
      out.push_back(it->second);
      return;
    }
    for (char c : w) out.push_back(id(std::string_view(&c, 1)));
  });
  return out;
}

}  // namespace kopa
