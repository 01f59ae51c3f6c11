#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kopa/kg.hpp"
#include "kopa/rng.hpp"

namespace kopa {

enum class PromptMode { zsr, icl, it, sit, kopa };

std::string_view to_string(PromptMode m);
PromptMode parse_mode(std::string_view name);

/// Canonical classification instruction shared by every mode.
inline constexpr std::string_view kInstruction =
    "Given a triple from a knowledge graph, determine whether it is a correct fact. "
    "Answer with true or false.";

inline constexpr std::string_view kTrue = "true";
inline constexpr std::string_view kFalse = "false";

struct PromptInstance {
  PromptMode mode = PromptMode::zsr;
  std::string instruction;
  std::string demonstration;  // newline-separated lines; empty when absent
  std::string triple_text;
  std::optional<std::string> answer;
  Triple triple;
  std::optional<Triple> prefix;  // kopa mode only

  bool operator==(const PromptInstance&) const = default;

  /// Number of lines in the demonstration block.
  std::size_t demonstration_lines() const;
};

struct DemoSet {
  std::vector<LabeledTriple> items;  // interleaved pos, neg, pos, ...
  std::size_t k = 0;
};

/// Collapses runs of whitespace (tabs, newlines) to single spaces and trims.
std::string normalize_whitespace(std::string_view text);

/// D(h) D(r) D(t); an empty description falls back to the raw id.
std::string verbalize_triple(const KnowledgeGraph& kg, const Triple& t);

PromptInstance build_zsr(const KnowledgeGraph& kg, const Triple& t);

/// ceil(k/2) positives from the neighbourhoods of the query's head and tail,
/// floor(k/2) filtered corruptions of those positives that keep the shared
/// entity. An isolated query falls back to uniform training triples.
DemoSet sample_demos(const KnowledgeGraph& kg, const Triple& t, std::size_t k, Rng& rng);

PromptInstance build_icl(const KnowledgeGraph& kg, const Triple& t, std::size_t k, Rng& rng);

PromptInstance build_it(const KnowledgeGraph& kg, const Triple& t, std::optional<bool> label);

/// Up to m neighbourhood lines: ceil(m/2) from the head side and floor(m/2)
/// from the tail side, unused quota passing to the other side. The query
/// triple is never listed.
PromptInstance build_sit(const KnowledgeGraph& kg, const Triple& t, std::size_t m, Rng& rng,
                         std::optional<bool> label);

PromptInstance build_kopa(const KnowledgeGraph& kg, const Triple& t, std::optional<bool> label);

/// One true instance per training triple plus one filtered corruption
/// labelled false, shuffled. `mode` is it, sit or kopa; `m` is used by sit.
std::vector<PromptInstance> build_training_corpus(const KnowledgeGraph& kg, PromptMode mode,
                                                  std::size_t m, Rng& rng);

/// Vanilla instruction-tuning corpus (2 x |train| instances).
std::vector<PromptInstance> build_it_corpus(const KnowledgeGraph& kg, Rng& rng);

/// One instance per labelled triple, in input order. zsr/icl instances carry
/// no answer; it/sit/kopa instances carry the label as their answer.
std::vector<PromptInstance> build_eval_prompts(const KnowledgeGraph& kg, PromptMode mode,
                                               std::span<const LabeledTriple> triples,
                                               std::size_t k, std::size_t m, Rng& rng);

enum class Answer { yes, no, unknown };

/// First standalone "true"/"false" token, case-insensitive.
Answer parse_answer(std::string_view completion);
std::string_view answer_text(bool label);

/// Single prompt string: instruction, optional demonstration block, the
/// triple, then "Answer:" (followed by the answer when `with_answer`).
std::string serialize_prompt(const PromptInstance& inst, bool with_answer = false);

std::size_t whitespace_token_count(std::string_view text);

/// JSONL with keys mode, instruction, demonstration, input, output, triple,
/// prefix_triple. Triples are [head, relation, tail] index arrays.
void export_jsonl(std::span<const PromptInstance> instances, const std::filesystem::path& path);
std::vector<PromptInstance> import_jsonl(const std::filesystem::path& path);

std::string to_json_line(const PromptInstance& inst);
/// Throws ParseError(line) on malformed JSON or schema violations.
PromptInstance from_json_line(std::string_view line, const std::string& source = "<string>",
                              std::size_t lineno = 0);

}  // namespace kopa
