#ifndef PROMPTCLASS_TRAINING_HPP
#define PROMPTCLASS_TRAINING_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "promptclass/aggregator.hpp"
#include "promptclass/data.hpp"
#include "promptclass/encoder.hpp"
#include "promptclass/errors.hpp"
#include "promptclass/metrics.hpp"
#include "promptclass/params.hpp"
#include "promptclass/prompt.hpp"
#include "promptclass/rng.hpp"

namespace promptclass {

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  std::size_t epochs = 12;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  bool freeze_backbone = false;
  Variant variant = Variant::kFull;
  std::size_t n_seeds = 5;          // five independent runs by default
  double warmup_fraction = 0.1;     // linear warmup over the first 10% of steps
  double stop_at_train_accuracy = 1.0;  // early exit; set > 1 to disable
  std::size_t threads = 1;
  bool attn_projection = false;

  void validate() const {
    if (learning_rate <= 0.0 && learning_rate != 0.0)
      throw UsageError("learning_rate must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (n_seeds < 1) throw UsageError("n_seeds must be >= 1");
  }
};

/// Worker count: min(requested, PROMPTCLASS_THREADS) with a floor of 1.
inline std::size_t resolve_threads(std::size_t requested) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("PROMPTCLASS_THREADS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v > 0) cap = static_cast<std::size_t>(v);
  }
  std::size_t t = requested == 0 ? 1 : requested;
  if (cap > 0) t = std::min(t, cap);
  return std::max<std::size_t>(1, t);
}

/// Reverse-mode gradients of a scalar loss built by `build`. Returns a store
/// with the same names/shapes as the trainable parameters. Throws
/// NumericError naming the tensor if any gradient is non-finite.
template <typename T, typename BuildFn>
ParamStore<T> grad(const ParamStore<T>& params, BuildFn&& build,
                   const std::vector<std::string>& frozen_prefixes = {}) {
  Graph<T> g;
  GraphParams<T> P(g, params, frozen_prefixes);
  typename Graph<T>::Id loss = build(g, P);
  g.backward(loss);
  ParamStore<T> grads;
  for (const auto& [name, tensor] : params.items()) {
    if (!g.needs_grad(P(name))) continue;
    Tensor<T> gt = g.grad(P(name));
    if (!gt.all_finite()) throw NumericError("non-finite gradient in tensor '" + name + "'");
    grads.add(name, std::move(gt));
  }
  return grads;
}

namespace detail {

// Per-example gradient buffers summed in ascending example order, so the
// result does not depend on the number of workers.
template <typename T, typename BuildFn>
std::pair<ParamStore<T>, std::vector<double>> batch_gradients(
    const ParamStore<T>& params, std::size_t count, BuildFn&& build,
    const std::vector<std::string>& frozen_prefixes, std::size_t threads) {
  std::vector<ParamStore<T>> slots(count);
  std::vector<std::string> first_error(count);
  std::vector<double> loss_out(count, 0.0);
  auto worker_body = [&](std::size_t i) {
    try {
      Graph<T> g;
      GraphParams<T> P(g, params, frozen_prefixes);
      typename Graph<T>::Id loss = build(g, P, i);
      g.backward(loss);
      loss_out[i] = static_cast<double>(g.value(loss).v[0]);
      ParamStore<T> gs;
      for (const auto& [name, tensor] : params.items()) {
        if (!g.needs_grad(P(name))) continue;
        gs.add(name, g.grad(P(name)));
      }
      slots[i] = std::move(gs);
    } catch (const std::exception& e) {
      first_error[i] = e.what();
    }
  };

  std::size_t workers = std::min(resolve_threads(threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) worker_body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= count) break;
          worker_body(i);
        }
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < count; ++i)
    if (!first_error[i].empty()) throw NumericError(first_error[i]);

  ParamStore<T> total = slots[0].zeros_like();
  for (std::size_t i = 0; i < count; ++i) {
    auto& dst = total.items();
    const auto& src = slots[i].items();
    for (std::size_t t = 0; t < dst.size(); ++t)
      for (std::size_t j = 0; j < dst[t].second.size(); ++j)
        dst[t].second.v[j] += src[t].second.v[j];
  }
  for (auto& [name, tensor] : total.items()) {
    if (!tensor.all_finite()) throw NumericError("non-finite gradient in tensor '" + name + "'");
  }
  return {std::move(total), std::move(loss_out)};
}

// Decoupled weight decay: p -= lr*g; matrices additionally p -= lr*wd*p.
template <typename T>
void sgdw_step(ParamStore<T>& params, const ParamStore<T>& grads, double lr, double wd) {
  for (auto& [name, p] : params.items()) {
    if (!grads.has(name)) continue;
    const Tensor<T>& g = grads.get(name);
    const T flr = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) p.v[i] -= flr * g.v[i];
    if (wd > 0.0 && p.rank() == 2) {
      const T decay = static_cast<T>(lr * wd);
      for (std::size_t i = 0; i < p.size(); ++i) p.v[i] -= decay * p.v[i];
    }
  }
}

inline double warmup_lr(double base, std::size_t step, std::size_t total_steps,
                        double warmup_fraction) {
  std::size_t warmup = static_cast<std::size_t>(warmup_fraction * static_cast<double>(total_steps));
  if (warmup == 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace detail

// ---- masked language model pretraining -----------------------------------

struct MlmResult {
  std::vector<double> epoch_losses;
  std::size_t skipped_sequences = 0;  // sequences with zero maskable positions
};

/// 15% of non-pad, non-special positions replaced by [MASK]; cross-entropy on
/// the selected positions only.
template <typename T>
MlmResult pretrain_mlm(ParamStore<T>& params, const EncoderConfig& cfg,
                       const std::vector<std::string>& corpus, const Vocabulary& vocab,
                       const TrainConfig& tc) {
  tc.validate();
  MlmResult result;
  std::vector<std::vector<int>> seqs;
  for (const auto& text : corpus) {
    std::vector<int> ids = tokenize(vocab, text);
    if (ids.size() > cfg.max_len) ids.resize(cfg.max_len);
    seqs.push_back(std::move(ids));
  }
  Rng rng(tc.seed);
  const std::size_t steps_per_epoch = (seqs.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_examples = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      std::size_t bend = std::min(order.size(), b + tc.batch_size);
      // deterministic per-batch masking, drawn before any parallel work
      struct MaskedSeq {
        std::vector<int> ids;
        std::vector<std::size_t> positions;
        std::vector<int> originals;
      };
      std::vector<MaskedSeq> batch;
      for (std::size_t i = b; i < bend; ++i) {
        const std::vector<int>& ids = seqs[order[i]];
        std::vector<std::size_t> maskable;
        for (std::size_t p = 0; p < ids.size(); ++p)
          if (ids[p] >= static_cast<int>(kNumSpecials)) maskable.push_back(p);
        if (maskable.empty()) {
          ++result.skipped_sequences;
          continue;
        }
        std::size_t n_mask = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(maskable.size()))));
        auto chosen = rng.sample_without_replacement(maskable.size(), n_mask);
        MaskedSeq ms;
        ms.ids = ids;
        for (std::size_t c : chosen) {
          ms.positions.push_back(maskable[c]);
          ms.originals.push_back(ids[maskable[c]]);
          ms.ids[maskable[c]] = kMaskId;
        }
        batch.push_back(std::move(ms));
      }
      if (batch.empty()) continue;
      auto [grads, losses] = detail::batch_gradients(
          params, batch.size(),
          [&](Graph<T>& g, GraphParams<T>& P, std::size_t i) {
            const MaskedSeq& ms = batch[i];
            EncoderNodes<T> enc = build_encoder<T>(g, P, cfg, ms.ids, ms.ids.size(), nullptr);
            auto logits_all = g.matmul_nt(enc.states.back(), P("mlm.head"));
            std::vector<typename Graph<T>::Id> ces;
            for (std::size_t j = 0; j < ms.positions.size(); ++j)
              ces.push_back(g.cross_entropy_logits(g.row(logits_all, ms.positions[j]),
                                                   static_cast<std::size_t>(ms.originals[j])));
            return g.mean_of(ces);
          },
          {}, tc.threads);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto& [name, t] : grads.items())
        for (auto& x : t.v) x *= static_cast<T>(scale);
      double lr = detail::warmup_lr(tc.learning_rate, step, total_steps, tc.warmup_fraction);
      detail::sgdw_step(params, grads, lr, tc.weight_decay);
      ++step;
      for (double l : losses) epoch_loss += l;
      epoch_examples += losses.size();
    }
    result.epoch_losses.push_back(epoch_examples ? epoch_loss / epoch_examples : 0.0);
  }
  return result;
}

/// Fraction of masked tokens recovered by argmax over the MLM logits.
template <typename T>
double mlm_recovery_accuracy(const ParamStore<T>& params, const EncoderConfig& cfg,
                             const std::vector<std::string>& corpus, const Vocabulary& vocab,
                             std::uint64_t seed) {
  Rng rng(seed);
  std::size_t hits = 0, total = 0;
  for (const auto& text : corpus) {
    std::vector<int> ids = tokenize(vocab, text);
    if (ids.size() > cfg.max_len) ids.resize(cfg.max_len);
    std::vector<std::size_t> maskable;
    for (std::size_t p = 0; p < ids.size(); ++p)
      if (ids[p] >= static_cast<int>(kNumSpecials)) maskable.push_back(p);
    if (maskable.empty()) continue;
    std::size_t n_mask = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(maskable.size()))));
    auto chosen = rng.sample_without_replacement(maskable.size(), n_mask);
    std::vector<int> masked = ids;
    for (std::size_t c : chosen) masked[maskable[c]] = kMaskId;
    HiddenStack<T> stack = encode(params, cfg, masked, masked.size());
    Tensor<T> logits = mlm_logits(params, stack);
    for (std::size_t c : chosen) {
      std::size_t pos = maskable[c];
      const T* row = logits.row_ptr(pos);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (row[j] > row[best]) best = j;
      if (static_cast<int>(best) == ids[pos]) ++hits;
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

// ---- classification fine-tuning -------------------------------------------

struct HistoryRow {
  std::size_t epoch = 0;
  std::string split;  // "train" or "eval"
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_p = 0.0;
  double macro_r = 0.0;
  double macro_f1 = 0.0;
};

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "epoch,split,loss,accuracy,macro_p,macro_r,macro_f1\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << ',' << r.macro_p
        << ',' << r.macro_r << ',' << r.macro_f1 << '\n';
}

struct TrainOutput {
  std::vector<HistoryRow> history;
  MetricsReport final_eval;
};

namespace detail {

template <typename T>
struct CachedInput {
  std::vector<int> ids;  // truncated to the valid length, [CLS] first
  std::size_t mask_pos = 0;
};

template <typename T>
CachedInput<T> cache_input(const Vocabulary& vocab, const PromptTemplate& tpl, Variant variant,
                           const LabeledExample& ex, std::size_t max_len) {
  CachedInput<T> ci;
  if (variant == Variant::kNoAttentionNoPrompt) {
    ci.ids = tokenize(vocab, ex.text);
    ci.ids.insert(ci.ids.begin(), kClsId);
    if (ci.ids.size() > max_len) ci.ids.resize(max_len);
  } else {
    try {
      EncodedPrompt ep = encode_prompt(vocab, tpl, ex.text, max_len);
      ci.ids.assign(ep.ids.begin(), ep.ids.begin() + ep.valid_length);
      ci.mask_pos = ep.mask_position;
    } catch (const DataError& e) {
      throw DataError("example '" + ex.id + "': " + e.what());
    }
  }
  return ci;
}

}  // namespace detail

/// Single-stage training: cross-entropy over the variant head's logits,
/// backbone and head updated jointly unless freeze_backbone.
template <typename T>
TrainOutput train_classifier(ParamStore<T>& params, const EncoderConfig& cfg,
                             const Vocabulary& vocab, const PromptTemplate& tpl,
                             const std::vector<LabeledExample>& train_set,
                             const std::vector<LabeledExample>& eval_set,
                             std::size_t n_classes, LayerRange range, const TrainConfig& tc) {
  tc.validate();
  range.validate(cfg.n_layers);
  for (const auto& ex : train_set)
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes)
      throw DataError("example '" + ex.id + "' has label " + std::to_string(ex.label) +
                      " outside [0," + std::to_string(n_classes) + ")");

  std::vector<detail::CachedInput<T>> cache;
  cache.reserve(train_set.size());
  for (const auto& ex : train_set)
    cache.push_back(detail::cache_input<T>(vocab, tpl, tc.variant, ex, cfg.max_len));

  std::vector<std::string> frozen;
  if (tc.freeze_backbone) frozen = {"embed.", "enc.", "mlm."};

  Rng rng(tc.seed);
  Dropout<T> dropout{&rng, cfg.dropout_rate};

  TrainOutput out;
  const std::size_t steps_per_epoch = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;
  std::size_t step = 0;

  auto evaluate = [&](const std::vector<LabeledExample>& set) -> MetricsReport {
    std::vector<int> gold, pred;
    gold.reserve(set.size());
    for (const auto& ex : set) {
      PipelineOutput<T> po = forward_variant(params, cfg, vocab, tpl, tc.variant, ex.text, range,
                                             cfg.max_len, tc.attn_projection);
      gold.push_back(ex.label);
      pred.push_back(static_cast<int>(po.predicted));
    }
    return promptclass::score(gold, pred, n_classes);
  };

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      std::size_t bend = std::min(order.size(), b + tc.batch_size);
      std::vector<std::size_t> batch(order.begin() + b, order.begin() + bend);
      std::vector<char> corrects(batch.size(), 0);
      Dropout<T>* drop = cfg.dropout_rate > 0.0 ? &dropout : nullptr;
      // Dropout masks come from the shared run RNG, so graphs must build in
      // example order; parallel workers are only used when dropout is off.
      std::size_t threads = drop ? 1 : tc.threads;
      auto [grads, losses] = detail::batch_gradients(
          params, batch.size(),
          [&](Graph<T>& g, GraphParams<T>& P, std::size_t i) {
            const auto& ci = cache[batch[i]];
            EncoderNodes<T> enc = build_encoder(g, P, cfg, ci.ids, ci.ids.size(), drop);
            HeadNodes<T> head = build_variant_head(g, P, cfg, tc.variant, enc, ci.mask_pos, range,
                                                   tc.attn_projection);
            const Tensor<T>& lv = g.value(head.logits);
            std::size_t argmax = 0;
            for (std::size_t j = 1; j < lv.size(); ++j)
              if (lv.v[j] > lv.v[argmax]) argmax = j;
            corrects[i] =
                static_cast<int>(argmax) == train_set[batch[i]].label ? 1 : 0;
            return g.cross_entropy_logits(
                head.logits, static_cast<std::size_t>(train_set[batch[i]].label));
          },
          frozen, threads);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto& [name, t] : grads.items())
        for (auto& x : t.v) x *= static_cast<T>(scale);
      double lr = detail::warmup_lr(tc.learning_rate, step, total_steps, tc.warmup_fraction);
      detail::sgdw_step(params, grads, lr, tc.weight_decay);
      ++step;
      for (double l : losses) epoch_loss += l;
      for (char c : corrects) correct += c;
      seen += batch.size();
    }
    double train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    MetricsReport eval_report = evaluate(eval_set);
    out.history.push_back({epoch + 1, "train", seen ? epoch_loss / seen : 0.0, train_acc, 0.0,
                           0.0, 0.0});
    out.history.push_back({epoch + 1, "eval", 0.0, eval_report.accuracy, eval_report.macro_p,
                           eval_report.macro_r, eval_report.macro_f1});
    out.final_eval = eval_report;
    if (train_acc >= tc.stop_at_train_accuracy) break;
  }
  if (out.history.empty()) out.final_eval = evaluate(eval_set);
  return out;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_TRAINING_HPP
