#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "kopa/error.hpp"
#include "kopa/promptgen.hpp"

namespace kopa {

using ordered_json = nlohmann::ordered_json;

Answer parse_answer(std::string_view completion) {
  std::string token;
  auto flush = [&]() -> Answer {
    Answer a = Answer::unknown;
    if (token == kTrue) a = Answer::yes;
    else if (token == kFalse) a = Answer::no;
    token.clear();
    return a;
  };
  for (unsigned char c : completion) {
    if (std::isalnum(c) || c == '_') {
      token.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (auto a = flush(); a != Answer::unknown) return a;
  }
  return flush();
}

std::string_view answer_text(bool label) { return label ? kTrue : kFalse; }

std::string serialize_prompt(const PromptInstance& inst, bool with_answer) {
  std::string out = inst.instruction;
  out += '\n';
  if (!inst.demonstration.empty()) {
    out += inst.mode == PromptMode::icl ? "Examples:\n" : "Neighborhood facts:\n";
    out += inst.demonstration;
    out += '\n';
  }
  out += "Triple: ";
  out += inst.triple_text;
  out += "\nAnswer:";
  if (with_answer && inst.answer) {
    out += ' ';
    out += *inst.answer;
  }
  return out;
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    bool space = std::isspace(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

namespace {

ordered_json triple_json(const Triple& t) { return ordered_json::array({t.head, t.relation, t.tail}); }

Triple triple_from(const ordered_json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) {
    throw DataError(std::string("'") + key + "' must be an array of 3 indices");
  }
  for (const auto& x : j) {
    if (!x.is_number_unsigned()) throw DataError(std::string("'") + key + "' entries must be unsigned");
  }
  return Triple{j[0].get<EntityId>(), j[1].get<RelationId>(), j[2].get<EntityId>()};
}

std::string required_string(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing '") + key + "'");
  if (!it->is_string()) throw DataError(std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string to_json_line(const PromptInstance& inst) {
  ordered_json j;
  j["mode"] = std::string(to_string(inst.mode));
  j["instruction"] = inst.instruction;
  j["demonstration"] = inst.demonstration;
  j["input"] = inst.triple_text;
  if (inst.answer) j["output"] = *inst.answer;
  j["triple"] = triple_json(inst.triple);
  if (inst.prefix) j["prefix_triple"] = triple_json(*inst.prefix);
  return j.dump();
}

PromptInstance from_json_line(std::string_view line, const std::string& source, std::size_t lineno) {
  try {
    auto j = ordered_json::parse(line);
    if (!j.is_object()) throw DataError("line is not a JSON object");
    static const std::vector<std::string> known = {"mode",   "instruction", "demonstration", "input",
                                                   "output", "triple",      "prefix_triple"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw DataError("unknown key '" + key + "'");
      }
    }
    PromptInstance inst;
    inst.mode = parse_mode(required_string(j, "mode"));
    inst.instruction = required_string(j, "instruction");
    inst.triple_text = required_string(j, "input");
    if (j.contains("demonstration")) inst.demonstration = required_string(j, "demonstration");
    if (j.contains("output") && !j["output"].is_null()) {
      auto out = required_string(j, "output");
      if (out != kTrue && out != kFalse) throw DataError("'output' must be \"true\" or \"false\"");
      inst.answer = out;
    }
    if (!j.contains("triple")) throw DataError("missing 'triple'");
    inst.triple = triple_from(j["triple"], "triple");
    if (j.contains("prefix_triple") && !j["prefix_triple"].is_null()) {
      inst.prefix = triple_from(j["prefix_triple"], "prefix_triple");
    }
    if (inst.mode == PromptMode::kopa && !inst.prefix) throw DataError("kopa instance lacks 'prefix_triple'");
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, lineno, e.what());
  } catch (const Error& e) {
    throw ParseError(source, lineno, e.what());
  }
}

void export_jsonl(std::span<const PromptInstance> instances, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& inst : instances) out << to_json_line(inst) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<PromptInstance> import_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<PromptInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(from_json_line(line, path.string(), lineno));
  }
  return out;
}

}  // namespace kopa
