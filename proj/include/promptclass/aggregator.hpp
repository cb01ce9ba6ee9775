#ifndef PROMPTCLASS_AGGREGATOR_HPP
#define PROMPTCLASS_AGGREGATOR_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "promptclass/encoder.hpp"
#include "promptclass/errors.hpp"
#include "promptclass/graph.hpp"
#include "promptclass/kernels.hpp"
#include "promptclass/params.hpp"
#include "promptclass/prompt.hpp"
#include "promptclass/tokenizer.hpp"

namespace promptclass {

/// Inclusive layer index range into a hidden stack; 0 is the embedding layer.
struct LayerRange {
  std::size_t start = 2;
  std::size_t end = 12;

  std::size_t count() const { return end - start + 1; }

  void validate(std::size_t n_layers) const {
    if (start > end) throw UsageError("empty layer range");
    if (end > n_layers)
      throw UsageError("layer range " + std::to_string(start) + ".." + std::to_string(end) +
                       " exceeds the " + std::to_string(n_layers) + "-layer encoder");
  }

  std::vector<std::size_t> layer_ids() const {
    std::vector<std::size_t> out;
    for (std::size_t l = start; l <= end; ++l) out.push_back(l);
    return out;
  }
};

inline LayerRange parse_layer_range(const std::string& s) {
  auto dots = s.find("..");
  if (dots == std::string::npos)
    throw UsageError("layer range must look like A..B, got '" + s + "'");
  try {
    LayerRange r;
    r.start = std::stoul(s.substr(0, dots));
    r.end = std::stoul(s.substr(dots + 2));
    if (r.start > r.end) throw UsageError("empty layer range '" + s + "'");
    return r;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("layer range must look like A..B, got '" + s + "'");
  }
}

/// The stacked [MASK]-position vectors from the selected layer range.
template <typename T>
struct KnowledgeFeatures {
  Tensor<T> rows;                     // K x d
  std::vector<std::size_t> layer_ids; // strictly increasing
};

template <typename T>
KnowledgeFeatures<T> extract_knowledge(const HiddenStack<T>& stack, std::size_t mask_pos,
                                       LayerRange range) {
  range.validate(stack.n_layers());
  if (mask_pos >= stack.valid_length)
    throw UsageError("mask position " + std::to_string(mask_pos) +
                     " outside the valid sequence (length " +
                     std::to_string(stack.valid_length) + ")");
  const std::size_t k = range.count();
  const std::size_t d = stack.states[0].cols();
  KnowledgeFeatures<T> out;
  out.rows = Tensor<T>::mat(k, d);
  out.layer_ids = range.layer_ids();
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor<T>& s = stack.states[range.start + i];
    std::copy(s.row_ptr(mask_pos), s.row_ptr(mask_pos) + d, out.rows.row_ptr(i));
  }
  return out;
}

/// Per-row scores: dot(tanh(row_i), context).
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& context, const Tensor<T>& rows) {
  const std::size_t k = rows.rows(), d = rows.cols();
  Tensor<T> scores = Tensor<T>::vec(k);
  for (std::size_t i = 0; i < k; ++i) {
    const T* r = rows.row_ptr(i);
    T s = T(0);
    for (std::size_t j = 0; j < d; ++j) s += std::tanh(r[j]) * context.v[j];
    scores.v[i] = s;
  }
  return scores;
}

template <typename T>
struct AttendResult {
  Tensor<T> alphas;  // K, simplex
  Tensor<T> pooled;  // d
};

/// tanh-scored, softmax-weighted pooling. The weights apply to the raw rows,
/// not to their tanh images.
template <typename T>
AttendResult<T> attend(const Tensor<T>& context, const KnowledgeFeatures<T>& k) {
  const std::size_t n = k.rows.rows(), d = k.rows.cols();
  if (n == 0) throw UsageError("attend: no knowledge rows");
  AttendResult<T> out;
  out.alphas = attention_scores(context, k.rows);
  kernels::softmax(out.alphas.data(), n);
  out.pooled = Tensor<T>::vec(d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = k.rows.row_ptr(i);
    const T a = out.alphas.v[i];
    for (std::size_t j = 0; j < d; ++j) out.pooled.v[j] += a * r[j];
  }
  return out;
}

/// logits = W * ReLU(pooled) + b, with ReLU applied before the linear map.
template <typename T>
Tensor<T> classify(const Tensor<T>& clf_w, const Tensor<T>& clf_b, const Tensor<T>& pooled) {
  const std::size_t c = clf_w.rows(), d = clf_w.cols();
  Tensor<T> logits = Tensor<T>::vec(c);
  for (std::size_t i = 0; i < c; ++i) {
    const T* w = clf_w.row_ptr(i);
    T s = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      T x = pooled.v[j] > T(0) ? pooled.v[j] : T(0);
      s += w[j] * x;
    }
    logits.v[i] = s + clf_b.v[i];  // bias last, matching the graph path bit for bit
  }
  return logits;
}

/// argmax; ties break to the lowest index.
template <typename T>
std::size_t predict(const Tensor<T>& logits) {
  if (logits.size() < 2) throw UsageError("predict: need at least 2 classes");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits.v[i] > logits.v[best]) best = i;
  return best;
}

// ---- graph builders (training path) -----------------------------------

/// Knowledge rows node: [K x d] of mask-position vectors.
template <typename T>
typename Graph<T>::Id build_knowledge_rows(Graph<T>& g, const EncoderNodes<T>& enc,
                                           std::size_t mask_pos, LayerRange range) {
  range.validate(enc.states.size() - 1);
  std::vector<typename Graph<T>::Id> rows;
  for (std::size_t l = range.start; l <= range.end; ++l)
    rows.push_back(g.row(enc.states[l], mask_pos));
  return g.stack_rows(rows);
}

template <typename T>
struct HeadNodes {
  typename Graph<T>::Id logits;
  typename Graph<T>::Id alphas = 0;
  bool has_alphas = false;
};

/// tanh/softmax attention pooling + classifier on the graph.
template <typename T>
HeadNodes<T> build_attention_head(Graph<T>& g, const GraphParams<T>& P,
                                  typename Graph<T>::Id rows, bool attn_projection) {
  using Id = typename Graph<T>::Id;
  Id scored_input = rows;
  if (attn_projection)
    scored_input = g.add_row_broadcast(g.matmul_nt(rows, P("head.proj.w")), P("head.proj.b"));
  Id u = g.tanh_(scored_input);
  Id scores = g.matvec(u, P("head.context"));
  Id alphas = g.softmax_vec(scores);
  Id pooled = g.weighted_sum_rows(alphas, rows);
  Id logits = g.add(g.matvec(P("head.clf.w"), g.relu_(pooled)), P("head.clf.b"));
  return HeadNodes<T>{logits, alphas, true};
}

/// Mean-pool + one fully connected layer + classifier (the "w/o attention"
/// ablation head).
template <typename T>
HeadNodes<T> build_fc_head(Graph<T>& g, const GraphParams<T>& P, typename Graph<T>::Id pooled_vec) {
  using Id = typename Graph<T>::Id;
  Id fc = g.add(g.matvec(P("head.fc.w"), pooled_vec), P("head.fc.b"));
  Id logits = g.add(g.matvec(P("head.clf.w"), g.relu_(fc)), P("head.clf.b"));
  return HeadNodes<T>{logits, 0, false};
}

/// 2-layer bidirectional LSTM over the K knowledge rows; returns [K x 2H].
template <typename T>
typename Graph<T>::Id build_bilstm(Graph<T>& g, const GraphParams<T>& P,
                                   typename Graph<T>::Id rows, std::size_t hidden) {
  using Id = typename Graph<T>::Id;
  const std::size_t k = g.value(rows).rows();
  Id input = rows;
  for (std::size_t layer = 0; layer < 2; ++layer) {
    std::vector<Id> fwd(k), bwd(k);
    for (int dir = 0; dir < 2; ++dir) {
      const std::string p =
          "head.lstm.l" + std::to_string(layer) + "." + (dir == 0 ? "f" : "b") + ".";
      Id h = g.leaf(Tensor<T>::vec(hidden), false);
      Id c = g.leaf(Tensor<T>::vec(hidden), false);
      for (std::size_t step = 0; step < k; ++step) {
        std::size_t t = dir == 0 ? step : k - 1 - step;
        Id xt = g.row(input, t);
        Id gates = g.add(g.add(g.matvec(P(p + "w_ih"), xt), g.matvec(P(p + "w_hh"), h)),
                         P(p + "bias"));
        Id gi = g.sigmoid_(g.slice_vec(gates, 0, hidden));
        Id gf = g.sigmoid_(g.slice_vec(gates, hidden, 2 * hidden));
        Id gg = g.tanh_(g.slice_vec(gates, 2 * hidden, 3 * hidden));
        Id go = g.sigmoid_(g.slice_vec(gates, 3 * hidden, 4 * hidden));
        c = g.add(g.mul(gf, c), g.mul(gi, gg));
        h = g.mul(go, g.tanh_(c));
        (dir == 0 ? fwd : bwd)[t] = h;
      }
    }
    std::vector<Id> merged(k);
    for (std::size_t t = 0; t < k; ++t) merged[t] = g.concat_vecs({fwd[t], bwd[t]});
    input = g.stack_rows(merged);
  }
  return input;
}

/// Variant dispatch on the graph. For kNoAttentionNoPrompt the caller must
/// pass ids of the unwrapped input; cls_pos is then used instead of the mask.
template <typename T>
HeadNodes<T> build_variant_head(Graph<T>& g, const GraphParams<T>& P, const EncoderConfig& cfg,
                                Variant variant, const EncoderNodes<T>& enc,
                                std::size_t mask_pos, LayerRange range,
                                bool attn_projection = false) {
  using Id = typename Graph<T>::Id;
  switch (variant) {
    case Variant::kFull: {
      Id rows = build_knowledge_rows(g, enc, mask_pos, range);
      return build_attention_head(g, P, rows, attn_projection);
    }
    case Variant::kNoAttention: {
      Id rows = build_knowledge_rows(g, enc, mask_pos, range);
      return build_fc_head(g, P, g.mean_rows(rows));
    }
    case Variant::kNoAttentionNoPrompt: {
      // final-layer [CLS] vector of the unwrapped input
      Id cls = g.row(enc.states.back(), 0);
      return build_fc_head(g, P, cls);
    }
    case Variant::kWithBilstm: {
      Id rows = build_knowledge_rows(g, enc, mask_pos, range);
      Id lstm_out = build_bilstm(g, P, rows, cfg.d_model);
      return build_attention_head(g, P, lstm_out, attn_projection);
    }
  }
  throw UsageError("unknown variant");
}

// ---- whole-pipeline evaluation -----------------------------------------

template <typename T>
struct PipelineOutput {
  Tensor<T> logits;
  Tensor<T> alphas;  // empty for heads without attention
  std::size_t predicted = 0;
};

/// Runs the complete classification pipeline for one input text in
/// evaluation mode.
template <typename T>
PipelineOutput<T> forward_variant(const ParamStore<T>& params, const EncoderConfig& cfg,
                                  const Vocabulary& vocab, const PromptTemplate& tpl,
                                  Variant variant, std::string_view text, LayerRange range,
                                  std::size_t max_len, bool attn_projection = false) {
  std::vector<int> ids;
  std::size_t mask_pos = 0;
  if (variant == Variant::kNoAttentionNoPrompt) {
    ids = tokenize(vocab, text);
    ids.insert(ids.begin(), kClsId);
    if (ids.size() > max_len) ids.resize(max_len);
  } else {
    EncodedPrompt ep = encode_prompt(vocab, tpl, text, max_len);
    ids.assign(ep.ids.begin(), ep.ids.begin() + ep.valid_length);  // drop padding
    mask_pos = ep.mask_position;
  }
  Graph<T> g;
  GraphParams<T> P(g, params, {""});
  EncoderNodes<T> enc = build_encoder<T>(g, P, cfg, ids, ids.size(), nullptr);
  HeadNodes<T> head = build_variant_head(g, P, cfg, variant, enc, mask_pos, range, attn_projection);
  PipelineOutput<T> out;
  out.logits = g.value(head.logits);
  if (head.has_alphas) out.alphas = g.value(head.alphas);
  out.predicted = predict(out.logits);
  return out;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_AGGREGATOR_HPP
