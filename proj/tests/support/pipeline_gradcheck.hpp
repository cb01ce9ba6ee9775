#ifndef PROMPTCLASS_TESTS_PIPELINE_GRADCHECK_HPP
#define PROMPTCLASS_TESTS_PIPELINE_GRADCHECK_HPP

#include <string>
#include <vector>

#include "promptclass/aggregator.hpp"
#include "promptclass/encoder.hpp"
#include "promptclass/params.hpp"
#include "promptclass/rng.hpp"
#include "support/gradcheck.hpp"

namespace promptclass::testsupport {

struct PipelineCheckStats {
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "variant/tensor"
};

// Random tiny full-pipeline instances (encoder + variant head +
// cross-entropy), gradient-checked against central finite differences in
// 64-bit. Shared by the unit suite and the acceptance suite.
inline PipelineCheckStats check_pipeline_gradients(std::size_t instances_per_variant,
                                                   std::uint64_t seed, bool include_mlm = true) {
  PipelineCheckStats stats;
  Rng rng(seed);
  const Variant variants[] = {Variant::kFull, Variant::kNoAttention,
                              Variant::kNoAttentionNoPrompt, Variant::kWithBilstm};
  for (Variant variant : variants) {
    for (std::size_t inst = 0; inst < instances_per_variant; ++inst) {
      EncoderConfig cfg;
      cfg.n_heads = 1 + rng.uniform_int(2);
      cfg.d_model = cfg.n_heads * (2 + rng.uniform_int(3));
      cfg.n_layers = 1 + rng.uniform_int(3);
      cfg.d_ffn = 4 + rng.uniform_int(8);
      cfg.max_len = 10;
      cfg.vocab_size = 16;
      cfg.dropout_rate = 0.0;
      std::size_t n_classes = 2 + rng.uniform_int(3);
      std::size_t n = 3 + rng.uniform_int(4);
      std::size_t end = cfg.n_layers;
      std::size_t start = rng.uniform_int(end + 1);
      LayerRange range{start, end};
      std::vector<int> ids(n);
      for (auto& x : ids) x = 5 + static_cast<int>(rng.uniform_int(cfg.vocab_size - 5));
      std::size_t mask_pos = rng.uniform_int(n);
      std::size_t target = rng.uniform_int(n_classes);
      bool attn_projection = variant == Variant::kFull && rng.bernoulli(0.3);

      ParamStore<double> params =
          init_params<double>(cfg, variant, n_classes, rng, attn_projection);
      auto res = gradcheck(
          params,
          [&](Graph<double>& g, GraphParams<double>& P) {
            EncoderNodes<double> enc = build_encoder<double>(g, P, cfg, ids, n, nullptr);
            HeadNodes<double> head =
                build_variant_head(g, P, cfg, variant, enc, mask_pos, range, attn_projection);
            return g.cross_entropy_logits(head.logits, target);
          },
          rng, 3);
      ++stats.instances;
      if (res.max_rel_error > stats.max_rel_error) {
        stats.max_rel_error = res.max_rel_error;
        stats.worst = std::string(variant_name(variant)) + "/" + res.worst_tensor;
      }
    }
  }
  if (include_mlm) {
    for (std::size_t inst = 0; inst < 2; ++inst) {
      EncoderConfig cfg;
      cfg.n_heads = 2;
      cfg.d_model = 6;
      cfg.n_layers = 2;
      cfg.d_ffn = 8;
      cfg.max_len = 8;
      cfg.vocab_size = 14;
      cfg.dropout_rate = 0.0;
      std::vector<int> ids = {6, 7, kMaskId, 9, kMaskId};
      std::vector<std::size_t> positions = {2, 4};
      std::vector<std::size_t> originals = {8, 10};
      ParamStore<double> params = init_params<double>(cfg, Variant::kFull, 2, rng);
      auto res = gradcheck(
          params,
          [&](Graph<double>& g, GraphParams<double>& P) {
            EncoderNodes<double> enc =
                build_encoder<double>(g, P, cfg, ids, ids.size(), nullptr);
            auto logits_all = g.matmul_nt(enc.states.back(), P("mlm.head"));
            std::vector<Graph<double>::Id> ces;
            for (std::size_t j = 0; j < positions.size(); ++j)
              ces.push_back(
                  g.cross_entropy_logits(g.row(logits_all, positions[j]), originals[j]));
            return g.mean_of(ces);
          },
          rng, 3);
      ++stats.instances;
      if (res.max_rel_error > stats.max_rel_error) {
        stats.max_rel_error = res.max_rel_error;
        stats.worst = "mlm/" + res.worst_tensor;
      }
    }
  }
  return stats;
}

}  // namespace promptclass::testsupport

#endif  // PROMPTCLASS_TESTS_PIPELINE_GRADCHECK_HPP
