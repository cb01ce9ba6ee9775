#ifndef PROMPTCLASS_DATA_HPP
#define PROMPTCLASS_DATA_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "promptclass/errors.hpp"
#include "promptclass/rng.hpp"
#include "promptclass/tokenizer.hpp"

namespace promptclass {

struct LabeledExample {
  std::string text;
  int label = 0;
  std::string id;
};

struct LoadedDataset {
  std::vector<LabeledExample> examples;
  std::vector<std::string> label_names;  // index = dense label id

  std::size_t n_classes() const { return label_names.size(); }
};

namespace detail {

// RFC-4180 CSV: quoted fields may contain commas, quotes ("") and newlines.
// Returns records of fields; line numbers refer to the record's first line.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(
    const std::string& content) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  std::size_t line = 1, record_line = 1;
  bool any = false;
  auto end_field = [&] {
    fields.push_back(field);
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    records.emplace_back(record_line, fields);
    fields.clear();
    record_line = line;
    any = false;
  };
  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
      any = true;
    } else if (c == ',') {
      end_field();
      any = true;
    } else if (c == '\r') {
      // swallow, \n follows in CRLF
    } else if (c == '\n') {
      ++line;
      if (any || !field.empty() || !fields.empty()) end_record();
      record_line = line;
    } else {
      field += c;
      any = true;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field at end of CSV");
  if (any || !field.empty() || !fields.empty()) end_record();
  return records;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline bool is_plain_integer(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

// String labels map to dense ids by first appearance; all-integer labels
// pass through unchanged.
inline LoadedDataset map_labels(std::vector<std::pair<std::string, std::string>> text_label,
                                const std::vector<bool>& label_is_int) {
  LoadedDataset out;
  bool all_int = true;
  for (bool b : label_is_int) all_int = all_int && b;
  if (all_int) {
    int max_label = 0;
    for (const auto& [text, lab] : text_label) max_label = std::max(max_label, std::stoi(lab));
    out.label_names.resize(max_label + 1);
    for (int i = 0; i <= max_label; ++i) out.label_names[i] = std::to_string(i);
    std::size_t idx = 0;
    for (auto& [text, lab] : text_label) {
      out.examples.push_back({std::move(text), std::stoi(lab), "ex-" + std::to_string(idx++)});
    }
  } else {
    std::unordered_map<std::string, int> ids;
    std::size_t idx = 0;
    for (auto& [text, lab] : text_label) {
      auto [it, inserted] = ids.emplace(lab, static_cast<int>(out.label_names.size()));
      if (inserted) out.label_names.push_back(lab);
      out.examples.push_back({std::move(text), it->second, "ex-" + std::to_string(idx++)});
    }
  }
  return out;
}

}  // namespace detail

/// CSV requires the exact header "text,label"; JSONL requires one object per
/// line with "text" and "label" fields.
inline LoadedDataset load_dataset(const std::string& path, const std::string& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string content = buf.str();
  if (content.empty()) throw DataError("empty file: " + path);

  std::vector<std::pair<std::string, std::string>> text_label;
  std::vector<bool> label_is_int;
  if (format == "csv") {
    auto records = detail::parse_csv(content);
    if (records.empty()) throw DataError("empty file: " + path);
    const auto& header = records[0].second;
    if (header.size() != 2 || header[0] != "text" || header[1] != "label")
      throw DataError(path + " line " + std::to_string(records[0].first) +
                      ": CSV header must be exactly 'text,label'");
    if (records.size() < 2) throw DataError(path + ": no data rows");
    for (std::size_t i = 1; i < records.size(); ++i) {
      const auto& [lineno, fields] = records[i];
      if (fields.size() != 2)
        throw DataError(path + " line " + std::to_string(lineno) + ": expected 2 fields, got " +
                        std::to_string(fields.size()));
      text_label.emplace_back(fields[0], fields[1]);
      label_is_int.push_back(detail::is_plain_integer(fields[1]));
    }
  } else if (format == "jsonl") {
    std::istringstream lines(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(path + " line " + std::to_string(lineno) + ": invalid JSON (" +
                        e.what() + ")");
      }
      if (!j.contains("text") || !j["text"].is_string())
        throw DataError(path + " line " + std::to_string(lineno) + ": missing 'text' string");
      if (!j.contains("label"))
        throw DataError(path + " line " + std::to_string(lineno) + ": missing 'label'");
      if (j["label"].is_number_integer()) {
        long v = j["label"].get<long>();
        if (v < 0)
          throw DataError(path + " line " + std::to_string(lineno) + ": negative label");
        text_label.emplace_back(j["text"].get<std::string>(), std::to_string(v));
        label_is_int.push_back(true);
      } else if (j["label"].is_string()) {
        std::string lab = j["label"].get<std::string>();
        text_label.emplace_back(j["text"].get<std::string>(), lab);
        label_is_int.push_back(detail::is_plain_integer(lab));
      } else {
        throw DataError(path + " line " + std::to_string(lineno) +
                        ": 'label' must be a string or an integer");
      }
    }
    if (text_label.empty()) throw DataError("empty file: " + path);
  } else {
    throw UsageError("unknown dataset format '" + format + "' (expected csv or jsonl)");
  }
  return detail::map_labels(std::move(text_label), label_is_int);
}

inline void save_dataset_csv(const std::string& path, const LoadedDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "text,label\n";
  for (const auto& ex : ds.examples)
    out << detail::csv_quote(ex.text) << ',' << detail::csv_quote(ds.label_names[ex.label])
        << '\n';
}

struct SplitResult {
  std::vector<LabeledExample> train, test;
};

/// Per class: shuffle with the seed, cut at round(count * ratio). Exact
/// union/disjointness; per-class train size within one example of
/// count * ratio.
inline SplitResult stratified_split(const std::vector<LabeledExample>& data, double ratio,
                                    std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split ratio must be in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  if (by_class.empty()) throw DataError("cannot split an empty dataset");
  for (const auto& [label, idx] : by_class)
    if (idx.empty()) throw DataError("class " + std::to_string(label) + " has no examples");
  SplitResult out;
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    std::size_t cut = static_cast<std::size_t>(
        std::llround(static_cast<double>(idx.size()) * ratio));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < cut ? out.train : out.test).push_back(data[idx[i]]);
  }
  return out;
}

struct LengthStats {
  std::string unit;      // "tokens" or "words"
  double mean = 0.0;
  std::size_t mode = 0;  // smallest most-frequent length
  double median = 0.0;   // lower median
  std::map<std::size_t, double> below;  // threshold -> fraction in [0,1]
};

struct DatasetStats {
  std::vector<std::size_t> class_counts;
  LengthStats tokens;
  LengthStats words;
};

namespace detail {

inline LengthStats length_stats(std::vector<std::size_t> lengths, std::string unit) {
  LengthStats s;
  s.unit = std::move(unit);
  const std::size_t n = lengths.size();
  double sum = 0.0;
  std::map<std::size_t, std::size_t> freq;
  for (std::size_t l : lengths) {
    sum += static_cast<double>(l);
    ++freq[l];
  }
  s.mean = sum / static_cast<double>(n);
  std::size_t best_count = 0;
  for (const auto& [len, count] : freq) {
    if (count > best_count) {  // first wins: smallest length on ties
      best_count = count;
      s.mode = len;
    }
  }
  std::sort(lengths.begin(), lengths.end());
  s.median = static_cast<double>(lengths[(n - 1) / 2]);
  for (std::size_t thr : {32u, 64u, 128u, 256u, 300u}) {
    std::size_t below = 0;
    for (std::size_t l : lengths)
      if (l < thr) ++below;
    s.below[thr] = static_cast<double>(below) / static_cast<double>(n);
  }
  return s;
}

}  // namespace detail

/// Table-style corpus statistics. Lengths are reported both in tokenizer
/// tokens and in whitespace words, with the unit labeled.
inline DatasetStats compute_stats(const LoadedDataset& ds, const Vocabulary& vocab) {
  if (ds.examples.empty()) throw DataError("compute_stats: empty dataset");
  DatasetStats out;
  out.class_counts.assign(ds.n_classes(), 0);
  std::vector<std::size_t> tok_lens, word_lens;
  tok_lens.reserve(ds.examples.size());
  for (const auto& ex : ds.examples) {
    ++out.class_counts[ex.label];
    tok_lens.push_back(tokenize(vocab, ex.text).size());
    std::istringstream ws(ex.text);
    std::string w;
    std::size_t words = 0;
    while (ws >> w) ++words;
    word_lens.push_back(words);
  }
  out.tokens = detail::length_stats(std::move(tok_lens), "tokens");
  out.words = detail::length_stats(std::move(word_lens), "words");
  return out;
}

// ---- synthetic desk-scale corpora ---------------------------------------

namespace toy {

struct ClassSpec {
  std::string name;
  std::vector<std::string> keywords;
};

inline const std::vector<std::string>& shared_pool() {
  static const std::vector<std::string> kShared = {
      "foo", "bar", "baz", "qux",  "v0", "v1", "v2",  "x", "y",  "z",
      "0",   "1",   "42",  "100",  "(",  ")",  "{",   "}", ";",  "=",
      ",",   "+",   "-",   "item", "n",  "i",  "data"};
  return kShared;
}

inline std::vector<ClassSpec> classes_for_shape(const std::string& shape) {
  if (shape == "languages")
    return {
        {"pythonic", {"def", "elif", "lambda", "yield", "self", "import", "pass", "print"}},
        {"cish", {"int", "void", "struct", "malloc", "sizeof", "printf", "char", "const"}},
        {"mlish", {"let", "match", "fun", "rec", "val", "module", "type", "begin"}},
        {"lispish", {"defun", "cons", "car", "cdr", "setq", "progn", "quote", "cond"}},
    };
  if (shape == "binary_smell")
    return {
        {"clean", {"final", "private", "assert", "returns", "pure", "small", "single", "clear"}},
        {"smelly", {"globalTemp", "doStuff", "misc2", "copyPaste", "magic99", "hack", "tmpObj", "megaBlob"}},
    };
  if (shape == "comments")
    return {
        {"todo", {"todo", "later", "implement", "missing", "pending", "soon"}},
        {"fixme", {"fixme", "broken", "crash", "wrong", "bug", "workaround"}},
        {"doc", {"returns", "param", "describes", "usage", "example", "see"}},
        {"license", {"copyright", "license", "apache", "permission", "notice", "rights"}},
        {"question", {"why", "should", "unclear", "maybe", "wonder", "really"}},
        {"note", {"note", "remember", "careful", "important", "warning", "beware"}},
    };
  if (shape == "debt")
    return {
        {"no-debt", {"verify", "checks", "handles", "correct", "stable", "final", "done", "ready"}},
        {"debt", {"hack", "temporary", "ugly", "workaround", "quickfix", "refactor", "kludge", "shortcut"}},
    };
  throw UsageError("unknown toy corpus shape '" + shape +
                   "' (expected languages, binary_smell, comments, debt)");
}

}  // namespace toy

/// Synthetic corpus whose classes are separable by disjoint keyword pools,
/// with a 5% token noise rate drawn from the union of all pools.
inline LoadedDataset make_toy_corpus(const std::string& shape, std::size_t n_per_class,
                                     std::uint64_t seed) {
  if (n_per_class < 10) throw UsageError("make_toy_corpus: n_per_class must be >= 10");
  const auto classes = toy::classes_for_shape(shape);
  std::vector<std::string> union_pool = toy::shared_pool();
  for (const auto& c : classes)
    union_pool.insert(union_pool.end(), c.keywords.begin(), c.keywords.end());

  LoadedDataset out;
  Rng rng(seed);
  for (const auto& c : classes) out.label_names.push_back(c.name);
  for (std::size_t label = 0; label < classes.size(); ++label) {
    const auto& kws = classes[label].keywords;
    const auto& shared = toy::shared_pool();
    for (std::size_t k = 0; k < n_per_class; ++k) {
      std::size_t len = 8 + rng.uniform_int(11);
      std::string text;
      for (std::size_t t = 0; t < len; ++t) {
        std::string tok;
        if (rng.uniform() < 0.55)
          tok = kws[rng.uniform_int(kws.size())];
        else
          tok = shared[rng.uniform_int(shared.size())];
        if (rng.uniform() < 0.05)  // controlled noise
          tok = union_pool[rng.uniform_int(union_pool.size())];
        if (!text.empty()) text += ' ';
        text += tok;
      }
      out.examples.push_back({std::move(text), static_cast<int>(label),
                              shape + "-" + std::to_string(label) + "-" + std::to_string(k)});
    }
  }
  return out;
}

// ---- sidecar files -------------------------------------------------------

inline void save_label_map(const std::string& path, const std::vector<std::string>& names) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = i;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

inline void save_split_manifest(const std::string& path, const SplitResult& split, double ratio,
                                std::uint64_t seed) {
  nlohmann::json j;
  j["ratio"] = ratio;
  j["seed"] = seed;
  auto ids = [](const std::vector<LabeledExample>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(e.id);
    return out;
  };
  j["train_ids"] = ids(split.train);
  j["test_ids"] = ids(split.test);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace promptclass

#endif  // PROMPTCLASS_DATA_HPP
