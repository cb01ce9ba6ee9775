#ifndef PROMPTCLASS_TOKENIZER_HPP
#define PROMPTCLASS_TOKENIZER_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "promptclass/errors.hpp"

namespace promptclass {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kUnkId = 4;
inline constexpr std::size_t kNumSpecials = 5;

inline const char* special_token_string(int id) {
  switch (id) {
    case kPadId: return "[PAD]";
    case kClsId: return "[CLS]";
    case kMaskId: return "[MASK]";
    case kSepId: return "[SEP]";
    case kUnkId: return "[UNK]";
  }
  return "";
}

/// Subword vocabulary. Ids are dense, [PAD]=0 and the other specials occupy
/// ids 1..4; specials are never produced by merges. Immutable once built.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds a vocabulary from an ordered token list (specials are prepended
  /// automatically; the list must not contain them).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (std::size_t i = 0; i < kNumSpecials; ++i)
      v.append(special_token_string(static_cast<int>(i)));
    for (const auto& t : tokens) v.append(t);
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }

  int id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? -1 : it->second;
  }

  const std::string& token_of(int id) const { return id_to_token_[id]; }

  std::size_t max_token_length() const { return max_token_len_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open vocabulary file for writing: " + path);
    for (const auto& tok : id_to_token_) out << escape(tok) << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.append(unescape(line));
    if (v.size() < kNumSpecials) throw DataError("vocabulary file too short: " + path);
    for (std::size_t i = 0; i < kNumSpecials; ++i)
      if (v.id_to_token_[i] != special_token_string(static_cast<int>(i)))
        throw DataError("vocabulary file does not reserve the special tokens: " + path);
    return v;
  }

  void append(std::string token) {
    int id = static_cast<int>(id_to_token_.size());
    max_token_len_ = std::max(max_token_len_, token.size());
    auto [it, inserted] = token_to_id_.emplace(token, id);
    if (!inserted) throw DataError("duplicate token in vocabulary: " + token);
    id_to_token_.push_back(std::move(token));
  }

 private:
  // Tokens can contain newlines (code corpora do); escape just enough to keep
  // the one-token-per-line file format intact.
  static std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
      if (c == '\\')
        out += "\\\\";
      else if (c == '\n')
        out += "\\n";
      else if (c == '\r')
        out += "\\r";
      else
        out += c;
    }
    return out;
  }

  static std::string unescape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '\\' && i + 1 < s.size()) {
        char n = s[++i];
        out += n == 'n' ? '\n' : n == 'r' ? '\r' : n;
      } else {
        out += s[i];
      }
    }
    return out;
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::size_t max_token_len_ = 6;  // at least the special literals
};

namespace detail {

// Initial symbolization: a space fuses with the following non-space character
// so tokens carry their leading-space marker (code semantics depend on
// spacing).
inline std::vector<std::string> symbolize(std::string_view text) {
  std::vector<std::string> syms;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ' && i + 1 < text.size() && text[i + 1] != ' ') {
      syms.push_back(std::string(text.substr(i, 2)));
      i += 2;
    } else {
      syms.push_back(std::string(1, text[i]));
      ++i;
    }
  }
  return syms;
}

}  // namespace detail

/// Greedy frequency-based subword merge training. Deterministic: ties on
/// pair frequency break to the lexicographically smallest (left, right) pair.
/// Stops at target_size or when no adjacent pair occurs at least twice.
inline Vocabulary train_vocab(const std::vector<std::string>& corpus,
                              std::size_t target_size) {
  if (corpus.empty()) throw DataError("empty corpus");
  std::vector<std::vector<std::string>> seqs;
  seqs.reserve(corpus.size());
  std::vector<std::string> alphabet;  // first-appearance order
  std::unordered_map<std::string, int> seen;
  for (const auto& text : corpus) {
    seqs.push_back(detail::symbolize(text));
    for (const auto& s : seqs.back())
      if (seen.emplace(s, 1).second) alphabet.push_back(s);
  }
  if (alphabet.empty()) throw DataError("empty corpus");
  std::size_t min_size = kNumSpecials + alphabet.size();
  if (target_size < min_size)
    throw DataError("target_size " + std::to_string(target_size) +
                    " too small; minimum feasible size is " + std::to_string(min_size));

  Vocabulary vocab = Vocabulary::from_tokens(alphabet);
  while (vocab.size() < target_size) {
    // std::map keys are ordered, so max_element's first-wins tie-break is the
    // lexicographically smallest pair.
    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    for (const auto& seq : seqs)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        ++pair_freq[{seq[i], seq[i + 1]}];
    auto best = pair_freq.end();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it)
      if (best == pair_freq.end() || it->second > best->second) best = it;
    if (best == pair_freq.end() || best->second < 2) break;
    const std::string merged = best->first.first + best->first.second;
    for (auto& seq : seqs) {
      std::vector<std::string> out;
      out.reserve(seq.size());
      std::size_t i = 0;
      while (i < seq.size()) {
        if (i + 1 < seq.size() && seq[i] == best->first.first &&
            seq[i + 1] == best->first.second) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(out);
    }
    vocab.append(merged);
  }
  return vocab;
}

/// Greedy longest-match segmentation. Special-token literals (optionally
/// preceded by one space, which they absorb) are matched first; spans with no
/// vocabulary match collapse to a single UNK. Total on any input.
inline std::vector<int> tokenize(const Vocabulary& v, std::string_view text) {
  std::vector<int> ids;
  std::size_t i = 0;
  bool in_unknown = false;
  auto match_special = [&](std::size_t pos, std::size_t* consumed) -> int {
    for (int sid : {kMaskId, kClsId, kSepId, kPadId, kUnkId}) {
      std::string_view lit = special_token_string(sid);
      // leading-space form first (longest match wins)
      if (pos + 1 + lit.size() <= text.size() && text[pos] == ' ' &&
          text.substr(pos + 1, lit.size()) == lit) {
        *consumed = lit.size() + 1;
        return sid;
      }
      if (text.substr(pos, lit.size()) == lit) {
        *consumed = lit.size();
        return sid;
      }
    }
    return -1;
  };
  while (i < text.size()) {
    std::size_t consumed = 0;
    int sid = match_special(i, &consumed);
    if (sid >= 0) {
      ids.push_back(sid);
      i += consumed;
      in_unknown = false;
      continue;
    }
    std::size_t maxlen = std::min(v.max_token_length(), text.size() - i);
    int found = -1;
    std::size_t found_len = 0;
    for (std::size_t len = maxlen; len >= 1; --len) {
      int id = v.id_of(text.substr(i, len));
      if (id >= 0) {
        found = id;
        found_len = len;
        break;
      }
    }
    if (found >= 0) {
      ids.push_back(found);
      i += found_len;
      in_unknown = false;
    } else {
      if (!in_unknown) ids.push_back(kUnkId);
      in_unknown = true;
      ++i;
    }
  }
  return ids;
}

/// Inverse of tokenize on matched spans; UNK and PAD decode to nothing.
inline std::string decode(const Vocabulary& v, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id == kUnkId || id == kPadId) continue;
    out += v.token_of(id);
  }
  return out;
}

struct PaddedIds {
  std::vector<int> ids;       // length exactly N
  std::size_t valid_length;   // min(len(input), N)
};

/// Pads with literal 0 at the end, or truncates at the end.
inline PaddedIds pad_or_truncate(const std::vector<int>& ids, std::size_t n) {
  if (n < 1) throw UsageError("pad_or_truncate: N must be >= 1");
  PaddedIds out;
  out.valid_length = std::min(ids.size(), n);
  out.ids.assign(ids.begin(), ids.begin() + out.valid_length);
  out.ids.resize(n, kPadId);
  return out;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_TOKENIZER_HPP
