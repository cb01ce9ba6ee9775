#ifndef PROMPTCLASS_PROFILER_HPP
#define PROMPTCLASS_PROFILER_HPP

#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "promptclass/aggregator.hpp"
#include "promptclass/encoder.hpp"
#include "promptclass/errors.hpp"
#include "promptclass/params.hpp"

namespace promptclass {

struct StageValue {
  std::string stage;
  double value = 0.0;
};

struct CostReport {
  double params_millions = 0.0;  // non-embedding parameters
  double macs_giga = 0.0;        // multiply-accumulates in parameter-bearing linear maps
  std::vector<StageValue> param_breakdown;
  std::vector<StageValue> mac_breakdown;
};

/// Non-embedding parameter count: attention, FFN, normalization and head
/// tensors; token/position embedding tables and the MLM head are excluded
/// (the deployed classification pipeline does not carry them).
inline CostReport count_params(const EncoderConfig& cfg, Variant variant, std::size_t n_classes,
                               bool attn_projection = false) {
  CostReport r;
  double attn = 0, ffn = 0, norm = 0, head = 0, recurrent = 0;
  for (const NamedShape& s : model_tensor_shapes(cfg, variant, n_classes, attn_projection)) {
    if (s.name.rfind("embed.", 0) == 0 || s.name == "mlm.head") continue;
    double c = static_cast<double>(s.count());
    if (s.name.find(".attn.") != std::string::npos)
      attn += c;
    else if (s.name.find(".ffn.") != std::string::npos)
      ffn += c;
    else if (s.name.find(".ln") != std::string::npos)
      norm += c;
    else if (s.name.rfind("head.lstm.", 0) == 0)
      recurrent += c;
    else
      head += c;
  }
  r.param_breakdown = {{"attention", attn},
                       {"ffn", ffn},
                       {"normalization", norm},
                       {"recurrent", recurrent},
                       {"head", head}};
  r.params_millions = (attn + ffn + norm + head + recurrent) / 1e6;
  return r;
}

/// MAC convention: one unit per multiply-accumulate in parameter-bearing
/// linear maps times the positions processed. Attention score/value products,
/// embedding lookups and biases are excluded. The recurrent stage processes K
/// timesteps (one per selected layer), not seq_len.
inline CostReport count_macs(const EncoderConfig& cfg, Variant variant, std::size_t n_classes,
                             std::size_t seq_len, std::size_t k_rows,
                             bool attn_projection = false) {
  if (seq_len > cfg.max_len) throw UsageError("count_macs: seq_len exceeds max_len");
  CostReport r;
  if (seq_len == 0) {
    r.mac_breakdown = {{"encoder", 0.0}, {"recurrent", 0.0}, {"head", 0.0}};
    return r;
  }
  const double d = static_cast<double>(cfg.d_model);
  const double f = static_cast<double>(cfg.d_ffn);
  const double n = static_cast<double>(seq_len);
  const double kk = static_cast<double>(k_rows);
  const double c = static_cast<double>(n_classes);
  double encoder = static_cast<double>(cfg.n_layers) * (4.0 * d * d + 2.0 * d * f) * n;
  double recurrent = 0.0;
  double head = 0.0;
  const double da = static_cast<double>(head_feature_width(cfg, variant));
  switch (variant) {
    case Variant::kFull:
    case Variant::kWithBilstm: {
      if (variant == Variant::kWithBilstm) {
        const double h = d;
        // per timestep per direction: 4H*(in+H); layer 0 in=d, layer 1 in=2H
        double per_t = (4.0 * h * (d + h)) + (4.0 * h * (2.0 * h + h));
        recurrent = 2.0 * per_t * kk;
      }
      if (attn_projection) head += kk * da * da;
      head += kk * da;  // context-vector scores
      head += c * da;   // classifier
      break;
    }
    case Variant::kNoAttention:
    case Variant::kNoAttentionNoPrompt:
      head += d * d;  // fully connected layer
      head += c * d;
      break;
  }
  r.mac_breakdown = {{"encoder", encoder}, {"recurrent", recurrent}, {"head", head}};
  r.macs_giga = (encoder + recurrent + head) / 1e9;
  return r;
}

/// (reference - value) / reference, in percent.
inline double reduction_pct(double reference, double value) {
  return (reference - value) / reference * 100.0;
}

struct TimeBreakdown {
  double tokenize_ms = 0.0;  // wrap + tokenize + mask location, mean per inference
  double encode_ms = 0.0;
  double recurrent_ms = 0.0;
  double head_ms = 0.0;      // attend + classify
  double total_ms = 0.0;
  double recurrent_share = 0.0;
  double recurrent_share_cv = 0.0;  // coefficient of variation across groups
  std::size_t groups = 0;
  std::size_t repeats = 0;
};

namespace detail {

inline void check_timer_resolution(double per_repeat_seconds, double resolution_seconds,
                                   std::size_t repeats) {
  if (per_repeat_seconds < resolution_seconds)
    throw UsageError("timer resolution (" + std::to_string(resolution_seconds) +
                     "s) is coarser than one repeat (" + std::to_string(per_repeat_seconds) +
                     "s); increase repeats beyond " + std::to_string(repeats));
}

inline double steady_clock_resolution_seconds() {
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  auto t1 = clock::now();
  for (int i = 0; i < 64 && t1 == t0; ++i) t1 = clock::now();
  double d = std::chrono::duration<double>(t1 - t0).count();
  return d > 0.0 ? d : 1e-9;
}

}  // namespace detail

/// Wall-clock attribution per pipeline stage: groups x repeats forward
/// passes after warmup, single worker. Stage boundaries: tokenize+wrap,
/// encode, recurrent stage (if present), attend+classify.
template <typename T>
TimeBreakdown time_breakdown(const ParamStore<T>& params, const EncoderConfig& cfg,
                             const Vocabulary& vocab, const PromptTemplate& tpl, Variant variant,
                             LayerRange range, const std::string& text, std::size_t groups,
                             std::size_t repeats) {
  if (groups < 1 || repeats < 1) throw UsageError("time: groups and repeats must be >= 1");
  if (variant != Variant::kFull && variant != Variant::kWithBilstm)
    throw UsageError("time: stage attribution applies to the full and with_bilstm variants");
  using clock = std::chrono::steady_clock;

  auto run_once = [&](double* stage_s) {
    auto t0 = clock::now();
    EncodedPrompt ep = encode_prompt(vocab, tpl, text, cfg.max_len);
    std::vector<int> ids(ep.ids.begin(), ep.ids.begin() + ep.valid_length);
    auto t1 = clock::now();
    HiddenStack<T> stack = encode(params, cfg, ids, ids.size());
    auto t2 = clock::now();
    KnowledgeFeatures<T> know = extract_knowledge(stack, ep.mask_position, range);
    Tensor<T> pooled_input = know.rows;
    auto t3 = t2;
    if (variant == Variant::kWithBilstm) {
      Graph<T> g;
      GraphParams<T> P(g, params, {""});
      auto rows_leaf = g.leaf(know.rows, false);
      auto lstm_out = build_bilstm(g, P, rows_leaf, cfg.d_model);
      pooled_input = g.value(lstm_out);
      t3 = clock::now();
    }
    KnowledgeFeatures<T> pooled_features{pooled_input, know.layer_ids};
    AttendResult<T> att = attend(params.get("head.context"), pooled_features);
    Tensor<T> logits = classify(params.get("head.clf.w"), params.get("head.clf.b"), att.pooled);
    (void)predict(logits);
    auto t4 = clock::now();
    stage_s[0] += std::chrono::duration<double>(t1 - t0).count();
    stage_s[1] += std::chrono::duration<double>(t2 - t1).count();
    stage_s[2] += std::chrono::duration<double>(t3 - t2).count();
    stage_s[3] += std::chrono::duration<double>(t4 - t3).count();
  };

  // warmup
  double sink[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < repeats / 10 + 1; ++i) run_once(sink);

  std::vector<double> group_total(groups, 0.0), group_recurrent(groups, 0.0);
  double stages[4] = {0, 0, 0, 0};
  const double resolution = detail::steady_clock_resolution_seconds();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double s[4] = {0, 0, 0, 0};
    for (std::size_t r = 0; r < repeats; ++r) run_once(s);
    double total = s[0] + s[1] + s[2] + s[3];
    detail::check_timer_resolution(total / static_cast<double>(repeats), resolution, repeats);
    group_total[gi] = total;
    group_recurrent[gi] = s[2];
    for (int j = 0; j < 4; ++j) stages[j] += s[j];
  }

  const double n_runs = static_cast<double>(groups * repeats);
  TimeBreakdown tb;
  tb.groups = groups;
  tb.repeats = repeats;
  tb.tokenize_ms = stages[0] / n_runs * 1e3;
  tb.encode_ms = stages[1] / n_runs * 1e3;
  tb.recurrent_ms = stages[2] / n_runs * 1e3;
  tb.head_ms = stages[3] / n_runs * 1e3;
  tb.total_ms = tb.tokenize_ms + tb.encode_ms + tb.recurrent_ms + tb.head_ms;
  double total_all = stages[0] + stages[1] + stages[2] + stages[3];
  tb.recurrent_share = total_all > 0.0 ? stages[2] / total_all : 0.0;
  if (variant == Variant::kWithBilstm && groups > 1) {
    double mean = 0.0;
    std::vector<double> shares(groups);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      shares[gi] = group_total[gi] > 0.0 ? group_recurrent[gi] / group_total[gi] : 0.0;
      mean += shares[gi];
    }
    mean /= static_cast<double>(groups);
    double var = 0.0;
    for (double s : shares) var += (s - mean) * (s - mean);
    var /= static_cast<double>(groups);
    tb.recurrent_share_cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  }
  return tb;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_PROFILER_HPP
