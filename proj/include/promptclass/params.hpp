#ifndef PROMPTCLASS_PARAMS_HPP
#define PROMPTCLASS_PARAMS_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promptclass/errors.hpp"
#include "promptclass/graph.hpp"
#include "promptclass/rng.hpp"
#include "promptclass/tensor.hpp"

namespace promptclass {

struct EncoderConfig {
  std::size_t vocab_size = 2000;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t max_len = 128;
  double dropout_rate = 0.1;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw UsageError("d_model must be divisible by n_heads");
    if (max_len < 2) throw UsageError("max_len must be >= 2");
    if (n_layers < 1) throw UsageError("n_layers must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw UsageError("dropout_rate must be in [0,1)");
  }
};

enum class Variant { kFull, kNoAttention, kNoAttentionNoPrompt, kWithBilstm };

inline Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_attention") return Variant::kNoAttention;
  if (name == "no_attention_no_prompt") return Variant::kNoAttentionNoPrompt;
  if (name == "with_bilstm") return Variant::kWithBilstm;
  throw UsageError("unknown variant '" + name +
                   "' (expected full, no_attention, no_attention_no_prompt, with_bilstm)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoAttention: return "no_attention";
    case Variant::kNoAttentionNoPrompt: return "no_attention_no_prompt";
    case Variant::kWithBilstm: return "with_bilstm";
  }
  return "?";
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order used for checkpoints and gradient accumulation.
template <typename T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> t) {
    auto [it, inserted] = index_.emplace(name, items_.size());
    if (!inserted) throw UsageError("duplicate parameter name: " + name);
    items_.emplace_back(std::move(name), std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return items_[it->second].second;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
  std::size_t count() const { return items_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : items_) out.add(name, t.template cast<U>());
    return out;
  }

  /// Same names, all-zero tensors. Used for gradient accumulators.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : items_) out.add(name, Tensor<T>::zeros_like(t));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct NamedShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }
};

/// Width of the vector the classifier consumes for a variant.
inline std::size_t head_feature_width(const EncoderConfig& cfg, Variant v) {
  return v == Variant::kWithBilstm ? 2 * cfg.d_model : cfg.d_model;
}

/// The complete trainable-tensor layout of a model. Single source of truth:
/// parameter initialization, checkpoints, and the cost profiler all walk
/// this list.
inline std::vector<NamedShape> model_tensor_shapes(const EncoderConfig& cfg, Variant variant,
                                                   std::size_t n_classes,
                                                   bool attn_projection = false) {
  cfg.validate();
  std::vector<NamedShape> out;
  const std::size_t d = cfg.d_model;
  out.push_back({"embed.token", {cfg.vocab_size, d}});
  out.push_back({"embed.position", {cfg.max_len, d}});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    std::string p = "enc.l" + std::to_string(i) + ".";
    out.push_back({p + "attn.wq", {d, d}});
    out.push_back({p + "attn.bq", {d}});
    out.push_back({p + "attn.wk", {d, d}});
    out.push_back({p + "attn.bk", {d}});
    out.push_back({p + "attn.wv", {d, d}});
    out.push_back({p + "attn.bv", {d}});
    out.push_back({p + "attn.wo", {d, d}});
    out.push_back({p + "attn.bo", {d}});
    out.push_back({p + "ln1.g", {d}});
    out.push_back({p + "ln1.b", {d}});
    out.push_back({p + "ffn.w1", {cfg.d_ffn, d}});
    out.push_back({p + "ffn.b1", {cfg.d_ffn}});
    out.push_back({p + "ffn.w2", {d, cfg.d_ffn}});
    out.push_back({p + "ffn.b2", {d}});
    out.push_back({p + "ln2.g", {d}});
    out.push_back({p + "ln2.b", {d}});
  }
  out.push_back({"mlm.head", {cfg.vocab_size, d}});

  const std::size_t da = head_feature_width(cfg, variant);
  switch (variant) {
    case Variant::kFull:
    case Variant::kWithBilstm: {
      if (variant == Variant::kWithBilstm) {
        // 2-layer bidirectional recurrent stage, hidden width d per direction
        const std::size_t h = d;
        for (std::size_t l = 0; l < 2; ++l) {
          std::size_t in = l == 0 ? d : 2 * h;
          for (const char* dir : {"f", "b"}) {
            std::string p = "head.lstm.l" + std::to_string(l) + "." + dir + ".";
            out.push_back({p + "w_ih", {4 * h, in}});
            out.push_back({p + "w_hh", {4 * h, h}});
            out.push_back({p + "bias", {4 * h}});
          }
        }
      }
      if (attn_projection) {
        out.push_back({"head.proj.w", {da, da}});
        out.push_back({"head.proj.b", {da}});
      }
      out.push_back({"head.context", {da}});
      out.push_back({"head.clf.w", {n_classes, da}});
      out.push_back({"head.clf.b", {n_classes}});
      break;
    }
    case Variant::kNoAttention:
    case Variant::kNoAttentionNoPrompt: {
      out.push_back({"head.fc.w", {d, d}});
      out.push_back({"head.fc.b", {d}});
      out.push_back({"head.clf.w", {n_classes, d}});
      out.push_back({"head.clf.b", {n_classes}});
      break;
    }
  }
  return out;
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Deterministic initialization: embeddings and context vector N(0, 0.02),
/// norm gains 1, biases 0, matrices Xavier-uniform.
template <typename T>
ParamStore<T> init_params(const EncoderConfig& cfg, Variant variant, std::size_t n_classes,
                          Rng& rng, bool attn_projection = false) {
  ParamStore<T> store;
  for (const NamedShape& s : model_tensor_shapes(cfg, variant, n_classes, attn_projection)) {
    Tensor<T> t;
    if (s.dims.size() == 2)
      t = Tensor<T>::mat(s.dims[0], s.dims[1]);
    else
      t = Tensor<T>::vec(s.dims[0]);
    bool is_embedding = s.name.rfind("embed.", 0) == 0;
    bool is_context = s.name == "head.context";
    bool is_norm_gain = detail::ends_with(s.name, ".g");
    bool is_bias = s.dims.size() == 1 && !is_norm_gain && !is_context;
    if (is_embedding || is_context) {
      for (auto& x : t.v) x = static_cast<T>(rng.normal(0.0, 0.02));
    } else if (is_norm_gain) {
      t.fill(T(1));
    } else if (is_bias) {
      // zeros
    } else {
      double a = std::sqrt(6.0 / static_cast<double>(s.dims[0] + s.dims[1]));
      for (auto& x : t.v) x = static_cast<T>(rng.uniform(-a, a));
    }
    store.add(s.name, std::move(t));
  }
  return store;
}

/// Leaf ids of a ParamStore registered on a graph. Tensors whose name starts
/// with a prefix in frozen_prefixes join as constants.
template <typename T>
class GraphParams {
 public:
  GraphParams(Graph<T>& g, const ParamStore<T>& store,
              const std::vector<std::string>& frozen_prefixes = {}) {
    for (const auto& [name, tensor] : store.items()) {
      bool frozen = false;
      for (const auto& p : frozen_prefixes)
        if (name.rfind(p, 0) == 0) frozen = true;
      ids_.emplace(name, g.leaf(tensor, !frozen));
    }
  }

  typename Graph<T>::Id operator()(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw UsageError("parameter not registered on graph: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return ids_.count(name) != 0; }

  const std::unordered_map<std::string, typename Graph<T>::Id>& ids() const { return ids_; }

 private:
  std::unordered_map<std::string, typename Graph<T>::Id> ids_;
};

}  // namespace promptclass

#endif  // PROMPTCLASS_PARAMS_HPP
