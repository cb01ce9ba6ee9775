#ifndef PROMPTCLASS_PROMPT_HPP
#define PROMPTCLASS_PROMPT_HPP

#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "promptclass/errors.hpp"
#include "promptclass/tokenizer.hpp"

namespace promptclass {

/// Cloze template: literal text with exactly one "{x}" input slot and
/// exactly one "[MASK]" slot. Validated at load time, not at wrap time.
struct PromptTemplate {
  struct Segment {
    enum Kind { Literal, Mask, Input } kind;
    std::string text;  // only for Literal
  };
  std::string name;
  std::string pattern;
  std::vector<Segment> parts;

  bool mask_before_input() const {
    for (const auto& p : parts) {
      if (p.kind == Segment::Mask) return true;
      if (p.kind == Segment::Input) return false;
    }
    return false;
  }
};

inline PromptTemplate parse_template(const std::string& name, const std::string& pattern) {
  PromptTemplate t;
  t.name = name;
  t.pattern = pattern;
  int masks = 0, inputs = 0;
  std::size_t i = 0;
  std::string lit;
  auto flush = [&] {
    if (!lit.empty()) {
      t.parts.push_back({PromptTemplate::Segment::Literal, lit});
      lit.clear();
    }
  };
  while (i < pattern.size()) {
    if (pattern.compare(i, 6, "[MASK]") == 0) {
      flush();
      t.parts.push_back({PromptTemplate::Segment::Mask, ""});
      ++masks;
      i += 6;
    } else if (pattern.compare(i, 3, "{x}") == 0) {
      flush();
      t.parts.push_back({PromptTemplate::Segment::Input, ""});
      ++inputs;
      i += 3;
    } else {
      lit += pattern[i++];
    }
  }
  flush();
  if (masks != 1)
    throw DataError("template '" + name + "' must contain exactly one [MASK] slot");
  if (inputs != 1)
    throw DataError("template '" + name + "' must contain exactly one {x} input slot");
  return t;
}

/// Substitutes the input slot and renders the mask slot as the literal
/// "[MASK]". No [CLS] here; that is prepended at tokenization time.
inline std::string wrap(const PromptTemplate& t, std::string_view x) {
  std::string out;
  for (const auto& p : t.parts) {
    switch (p.kind) {
      case PromptTemplate::Segment::Literal: out += p.text; break;
      case PromptTemplate::Segment::Mask: out += "[MASK]"; break;
      case PromptTemplate::Segment::Input: out += x; break;
    }
  }
  return out;
}

struct EncodedPrompt {
  std::vector<int> ids;      // length N, [CLS] first
  std::size_t valid_length;
  std::size_t mask_position;
};

/// Tokenizes wrap(t, x) with [CLS] prepended, pads/truncates to N, and
/// locates the single [MASK]. Fails loudly if truncation drops the mask.
inline EncodedPrompt encode_prompt(const Vocabulary& v, const PromptTemplate& t,
                                   std::string_view x, std::size_t n) {
  std::vector<int> ids = tokenize(v, wrap(t, x));
  ids.insert(ids.begin(), kClsId);
  std::size_t mask_count = 0, mask_pos = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kMaskId) {
      ++mask_count;
      mask_pos = i;
    }
  }
  if (mask_count > 1) throw DataError("prompt tokenizes to more than one [MASK]");
  if (mask_count == 0) throw DataError("prompt tokenizes to no [MASK]");
  if (mask_pos >= n)
    throw DataError("mask lost to truncation (position " + std::to_string(mask_pos) +
                    ", N=" + std::to_string(n) +
                    "); use a prefix-style template or a larger max length");
  PaddedIds padded = pad_or_truncate(ids, n);
  return EncodedPrompt{std::move(padded.ids), padded.valid_length, mask_pos};
}

/// 0-based [MASK] index in the padded/truncated sequence ([CLS] at 0).
inline std::size_t mask_position(const Vocabulary& v, const PromptTemplate& t,
                                 std::string_view x, std::size_t n) {
  return encode_prompt(v, t, x, n).mask_position;
}

/// The four built-in template candidates, selectable by name.
inline const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> kTemplates = {
      parse_template("it-was", "It was [MASK] . {x}"),
      parse_template("in-summary", "{x} In summary , it was [MASK] ."),
      parse_template("all-in-all", "{x} All in all , it was [MASK] ."),
      parse_template("just", "Just [MASK] ! {x}"),
  };
  return kTemplates;
}

/// Per-task defaults: code language -> just, code smell -> in-summary,
/// code comment -> it-was, technical debt -> just.
inline const PromptTemplate& default_template_for_task(std::string_view task) {
  const auto& all = builtin_templates();
  auto by_name = [&](std::string_view name) -> const PromptTemplate& {
    for (const auto& t : all)
      if (t.name == name) return t;
    throw UsageError("unknown builtin template");
  };
  if (task == "languages" || task == "toy-languages") return by_name("just");
  if (task == "smell" || task == "toy-smell") return by_name("in-summary");
  if (task == "comments" || task == "toy-comments") return by_name("it-was");
  if (task == "debt" || task == "toy-debt") return by_name("just");
  throw UsageError("no default template for task '" + std::string(task) + "'");
}

/// Resolves a --template argument: a builtin name, or a literal pattern
/// (recognized by containing the "{x}" slot).
inline PromptTemplate resolve_template(const std::string& arg) {
  if (arg.find("{x}") != std::string::npos) return parse_template("custom", arg);
  for (const auto& t : builtin_templates())
    if (t.name == arg) return t;
  throw UsageError("unknown template '" + arg + "' (builtins: it-was, in-summary, all-in-all, just)");
}

/// Template file: one per line, "name<TAB>pattern".
inline std::vector<PromptTemplate> load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open template file: " + path);
  std::vector<PromptTemplate> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("template file line " + std::to_string(lineno) +
                      ": expected name<TAB>pattern");
    out.push_back(parse_template(line.substr(0, tab), line.substr(tab + 1)));
  }
  return out;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_PROMPT_HPP
