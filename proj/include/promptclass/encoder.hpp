#ifndef PROMPTCLASS_ENCODER_HPP
#define PROMPTCLASS_ENCODER_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "promptclass/errors.hpp"
#include "promptclass/graph.hpp"
#include "promptclass/params.hpp"
#include "promptclass/rng.hpp"

namespace promptclass {

inline constexpr double kLayerNormEps = 1e-5;

/// All per-layer hidden states of one sequence: states[0] is the embedding
/// output, states[L] the final layer. n_layers+1 entries of [N x d_model].
template <typename T>
struct HiddenStack {
  std::vector<Tensor<T>> states;
  std::size_t valid_length = 0;

  std::size_t n_layers() const { return states.size() - 1; }
};

/// Inverted dropout driven by the shared run RNG; nullptr means evaluation
/// mode (no dropout anywhere).
template <typename T>
struct Dropout {
  Rng* rng;
  double rate;

  typename Graph<T>::Id apply(Graph<T>& g, typename Graph<T>::Id x) {
    if (rate <= 0.0) return x;
    Tensor<T> mask = Tensor<T>::zeros_like(g.value(x));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask.v) m = rng->uniform() < rate ? T(0) : keep_scale;
    return g.mul(x, g.leaf(std::move(mask), false));
  }
};

template <typename T>
struct EncoderNodes {
  std::vector<typename Graph<T>::Id> states;  // L+1 ids
};

/// Post-layer-norm transformer encoder block stack on the graph. Positions
/// >= valid_length are masked out of attention (keys/values); their query
/// rows are still computed but never read downstream.
template <typename T>
EncoderNodes<T> build_encoder(Graph<T>& g, const GraphParams<T>& P, const EncoderConfig& cfg,
                              const std::vector<int>& ids, std::size_t valid_length,
                              Dropout<T>* dropout = nullptr) {
  using Id = typename Graph<T>::Id;
  const std::size_t n = ids.size();
  if (n == 0) throw UsageError("encode: empty id sequence");
  if (n > cfg.max_len)
    throw UsageError("encode: sequence length " + std::to_string(n) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  if (valid_length == 0 || valid_length > n) valid_length = n;

  EncoderNodes<T> out;
  Id x = g.add(g.gather_rows(P("embed.token"), ids), g.slice_rows(P("embed.position"), 0, n));
  out.states.push_back(x);  // layer 0: exactly the embedding output
  if (dropout) x = dropout->apply(g, x);

  const std::size_t d = cfg.d_model;
  const std::size_t dh = d / cfg.n_heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    Id q = g.linear(x, P(p + "attn.wq"), P(p + "attn.bq"));
    Id k = g.linear(x, P(p + "attn.wk"), P(p + "attn.bk"));
    Id v = g.linear(x, P(p + "attn.wv"), P(p + "attn.bv"));
    std::vector<Id> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Id qh = g.slice_cols(q, h * dh, (h + 1) * dh);
      Id kh = g.slice_cols(k, h * dh, (h + 1) * dh);
      Id vh = g.slice_cols(v, h * dh, (h + 1) * dh);
      Id scores = g.matmul_nt(qh, kh);
      Id alphas = g.softmax_rows_masked(scores, valid_length, scale);
      heads.push_back(g.matmul(alphas, vh));
    }
    Id ctx = cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    Id attn_out = g.linear(ctx, P(p + "attn.wo"), P(p + "attn.bo"));
    if (dropout) attn_out = dropout->apply(g, attn_out);
    x = g.layer_norm(g.add(x, attn_out), P(p + "ln1.g"), P(p + "ln1.b"),
                     static_cast<T>(kLayerNormEps));
    Id ffn = g.linear(g.gelu_(g.linear(x, P(p + "ffn.w1"), P(p + "ffn.b1"))),
                      P(p + "ffn.w2"), P(p + "ffn.b2"));
    if (dropout) ffn = dropout->apply(g, ffn);
    x = g.layer_norm(g.add(x, ffn), P(p + "ln2.g"), P(p + "ln2.b"),
                     static_cast<T>(kLayerNormEps));
    g.check_finite(x, "encoder layer " + std::to_string(l + 1));
    out.states.push_back(x);
  }
  return out;
}

/// Token embedding + absolute positional encoding. Padded positions still
/// receive embeddings; downstream attention masks them out.
template <typename T>
Tensor<T> embed(const ParamStore<T>& params, const EncoderConfig& cfg,
                const std::vector<int>& ids) {
  if (ids.size() > cfg.max_len)
    throw UsageError("embed: sequence longer than max_len");
  const Tensor<T>& tok = params.get("embed.token");
  const Tensor<T>& pos = params.get("embed.position");
  Tensor<T> out = Tensor<T>::mat(ids.size(), cfg.d_model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size)
      throw DataError("embed: token id " + std::to_string(ids[i]) + " out of range");
    const T* tr = tok.row_ptr(ids[i]);
    const T* pr = pos.row_ptr(i);
    T* dst = out.row_ptr(i);
    for (std::size_t j = 0; j < cfg.d_model; ++j) dst[j] = tr[j] + pr[j];
  }
  return out;
}

/// Evaluation-mode forward pass returning every layer's states.
/// Deterministic: no dropout, single code path shared with training.
template <typename T>
HiddenStack<T> encode(const ParamStore<T>& params, const EncoderConfig& cfg,
                      const std::vector<int>& ids, std::size_t valid_length) {
  Graph<T> g;
  GraphParams<T> P(g, params, {""});  // all frozen: pure forward
  EncoderNodes<T> nodes = build_encoder<T>(g, P, cfg, ids, valid_length, nullptr);
  HiddenStack<T> stack;
  stack.valid_length = valid_length == 0 || valid_length > ids.size() ? ids.size() : valid_length;
  stack.states.reserve(nodes.states.size());
  for (auto id : nodes.states) stack.states.push_back(g.value(id));
  return stack;
}

/// Final-layer hidden states projected to vocabulary logits. Pretraining
/// only.
template <typename T>
Tensor<T> mlm_logits(const ParamStore<T>& params, const HiddenStack<T>& stack) {
  const Tensor<T>& head = params.get("mlm.head");
  const Tensor<T>& last = stack.states.back();
  if (last.cols() != head.cols())
    throw UsageError("mlm_logits: hidden width " + std::to_string(last.cols()) +
                     " does not match head width " + std::to_string(head.cols()));
  Tensor<T> out = Tensor<T>::mat(last.rows(), head.rows());
  kernels::mm_nt<false>(out.data(), last.data(), head.data(), last.rows(), last.cols(),
                        head.rows());
  return out;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_ENCODER_HPP
