#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "promptclass/data.hpp"
#include "promptclass/training.hpp"
#include "support/pipeline_gradcheck.hpp"

using namespace promptclass;

namespace {

EncoderConfig toy_cfg() {
  EncoderConfig cfg;
  cfg.vocab_size = 160;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.max_len = 32;
  cfg.dropout_rate = 0.0;
  return cfg;
}

// two trivially separable classes
std::vector<LabeledExample> separable_set() {
  std::vector<LabeledExample> out;
  const char* a_words[] = {"alpha beta", "beta alpha alpha", "alpha alpha", "beta beta alpha",
                           "alpha beta beta"};
  const char* b_words[] = {"gamma delta", "delta gamma gamma", "gamma gamma", "delta delta gamma",
                           "gamma delta delta"};
  for (int i = 0; i < 5; ++i) {
    out.push_back({a_words[i], 0, "a" + std::to_string(i)});
    out.push_back({b_words[i], 1, "b" + std::to_string(i)});
  }
  return out;
}

Vocabulary toy_vocab() {
  return train_vocab({"alpha beta gamma delta alpha beta gamma delta", "Just ! It was ."}, 80);
}

}  // namespace

TEST_CASE("full-pipeline gradients match finite differences across variants") {
  auto stats = testsupport::check_pipeline_gradients(3, 21);
  INFO("worst: " << stats.worst);
  CHECK(stats.instances >= 12);
  CHECK(stats.max_rel_error <= 1e-4);
}

TEST_CASE("one small-step update does not increase the loss") {
  Rng seeds(33);
  for (int trial = 0; trial < 20; ++trial) {
    EncoderConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 6;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ffn = 8;
    cfg.max_len = 8;
    cfg.dropout_rate = 0.0;
    Rng rng(seeds.next_u64());
    ParamStore<double> params = init_params<double>(cfg, Variant::kFull, 2, rng);
    std::vector<int> ids = {5, 9, 11, 6};
    std::size_t target = rng.uniform_int(2);
    LayerRange range{0, 1};
    auto build = [&](Graph<double>& g, GraphParams<double>& P) {
      EncoderNodes<double> enc = build_encoder<double>(g, P, cfg, ids, ids.size(), nullptr);
      HeadNodes<double> head = build_variant_head(g, P, cfg, Variant::kFull, enc, 1, range);
      return g.cross_entropy_logits(head.logits, target);
    };
    auto loss_at = [&](const ParamStore<double>& p) {
      Graph<double> g;
      GraphParams<double> P(g, p, {""});
      return g.value(build(g, P)).v[0];
    };
    double before = loss_at(params);
    ParamStore<double> grads = grad(params, build);
    detail::sgdw_step(params, grads, 1e-4, 0.0);
    double after = loss_at(params);
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("learning_rate zero leaves parameters unchanged") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  Rng rng(1);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  ParamStore<float> before = params;
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.weight_decay = 0.0;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.stop_at_train_accuracy = 2.0;
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  train_classifier(params, cfg, vocab, tpl, data, data, 2, LayerRange{1, 2}, tc);
  for (std::size_t i = 0; i < params.items().size(); ++i)
    CHECK(params.items()[i].second == before.items()[i].second);
}

TEST_CASE("separable two-class toy set trains to 100% within 50 epochs") {
  EncoderConfig cfg = toy_cfg();
  cfg.dropout_rate = 0.1;
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  Rng rng(2);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  TrainConfig tc;
  tc.learning_rate = 0.5;
  tc.epochs = 50;
  tc.batch_size = 4;
  tc.seed = 2;
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  TrainOutput out =
      train_classifier(params, cfg, vocab, tpl, data, data, 2, LayerRange{1, 2}, tc);
  double final_train_acc = 0.0;
  for (const auto& row : out.history)
    if (row.split == "train") final_train_acc = row.accuracy;
  CHECK(final_train_acc == 1.0);
  CHECK(out.final_eval.accuracy == 1.0);
}

TEST_CASE("fixed seed gives bitwise-identical parameter trajectories") {
  EncoderConfig cfg = toy_cfg();
  cfg.dropout_rate = 0.1;  // exercises the RNG-driven path too
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  TrainConfig tc;
  tc.learning_rate = 0.3;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 7;
  tc.stop_at_train_accuracy = 2.0;

  auto run = [&] {
    Rng rng(7);
    ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
    train_classifier(params, cfg, vocab, tpl, data, data, 2, LayerRange{1, 2}, tc);
    return params;
  };
  ParamStore<float> a = run();
  ParamStore<float> b = run();
  for (std::size_t i = 0; i < a.items().size(); ++i) {
    CHECK(a.items()[i].first == b.items()[i].first);
    CHECK(a.items()[i].second == b.items()[i].second);
  }
}

TEST_CASE("worker count does not change batch gradients") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  Rng rng(3);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  std::vector<detail::CachedInput<float>> cache;
  for (const auto& ex : data)
    cache.push_back(detail::cache_input<float>(vocab, tpl, Variant::kFull, ex, cfg.max_len));
  auto build = [&](Graph<float>& g, GraphParams<float>& P, std::size_t i) {
    EncoderNodes<float> enc =
        build_encoder<float>(g, P, cfg, cache[i].ids, cache[i].ids.size(), nullptr);
    HeadNodes<float> head =
        build_variant_head(g, P, cfg, Variant::kFull, enc, cache[i].mask_pos, LayerRange{1, 2});
    return g.cross_entropy_logits(head.logits, static_cast<std::size_t>(data[i].label));
  };
  auto [g1, l1] = detail::batch_gradients(params, data.size(), build, {}, 1);
  auto [g4, l4] = detail::batch_gradients(params, data.size(), build, {}, 4);
  CHECK(l1 == l4);
  for (std::size_t i = 0; i < g1.items().size(); ++i)
    CHECK(g1.items()[i].second == g4.items()[i].second);
}

TEST_CASE("freeze_backbone leaves encoder tensors untouched") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  Rng rng(4);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  ParamStore<float> before = params;
  TrainConfig tc;
  tc.learning_rate = 0.3;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.freeze_backbone = true;
  tc.stop_at_train_accuracy = 2.0;
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  train_classifier(params, cfg, vocab, tpl, data, data, 2, LayerRange{1, 2}, tc);
  bool head_changed = false;
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const auto& [name, tensor] = params.items()[i];
    if (name.rfind("head.", 0) == 0) {
      if (!(tensor == before.items()[i].second)) head_changed = true;
    } else {
      CHECK(tensor == before.items()[i].second);
    }
  }
  CHECK(head_changed);
}

TEST_CASE("out-of-range labels name the offending example") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  auto data = separable_set();
  data[3].label = 7;
  Rng rng(5);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  TrainConfig tc;
  PromptTemplate tpl = parse_template("just", "Just [MASK] ! {x}");
  CHECK_THROWS_WITH(
      train_classifier(params, cfg, vocab, tpl, data, data, 2, LayerRange{1, 2}, tc),
      Catch::Matchers::ContainsSubstring(data[3].id));
}

TEST_CASE("n_seeds protocol derives seeds by offset") {
  TrainConfig tc;
  tc.seed = 40;
  tc.n_seeds = 5;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < tc.n_seeds; ++i) seeds.push_back(tc.seed + i);
  CHECK(seeds == std::vector<std::uint64_t>{40, 41, 42, 43, 44});
}

TEST_CASE("pretrain_mlm with zero epochs leaves parameters unchanged") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  Rng rng(6);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  ParamStore<float> before = params;
  TrainConfig tc;
  tc.epochs = 0;
  MlmResult res = pretrain_mlm(params, cfg, {"alpha beta gamma"}, vocab, tc);
  CHECK(res.epoch_losses.empty());
  for (std::size_t i = 0; i < params.items().size(); ++i)
    CHECK(params.items()[i].second == before.items()[i].second);
}

TEST_CASE("masked-token recovery beats uniform chance after pretraining") {
  EncoderConfig cfg;
  cfg.vocab_size = 48;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.max_len = 24;
  cfg.dropout_rate = 0.0;
  Vocabulary vocab = train_vocab({"alpha beta gamma delta epsilon zeta"}, 44);
  std::vector<std::string> corpus = {"alpha beta gamma delta epsilon zeta"};
  Rng rng(7);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  TrainConfig tc;
  tc.learning_rate = 0.2;
  tc.epochs = 200;  // single sequence -> one step per epoch
  tc.batch_size = 1;
  tc.seed = 7;
  pretrain_mlm(params, cfg, corpus, vocab, tc);
  double recovery = mlm_recovery_accuracy(params, cfg, corpus, vocab, 99);
  CHECK(recovery > 1.0 / static_cast<double>(cfg.vocab_size));
}

TEST_CASE("sequences with no maskable positions are skipped with a counter") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  Rng rng(8);
  ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 0.01;
  // "[PAD]" tokenizes to the special id only -> nothing maskable
  MlmResult res = pretrain_mlm(params, cfg, {"", "[PAD]", "alpha beta"}, vocab, tc);
  CHECK(res.skipped_sequences == 2);
}

TEST_CASE("pretraining runs are bitwise reproducible") {
  EncoderConfig cfg = toy_cfg();
  Vocabulary vocab = toy_vocab();
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 0.1;
  tc.seed = 11;
  auto run = [&] {
    Rng rng(11);
    ParamStore<float> params = init_params<float>(cfg, Variant::kFull, 2, rng);
    pretrain_mlm(params, cfg, {"alpha beta gamma", "delta alpha beta"}, vocab, tc);
    return params;
  };
  ParamStore<float> a = run();
  ParamStore<float> b = run();
  for (std::size_t i = 0; i < a.items().size(); ++i)
    CHECK(a.items()[i].second == b.items()[i].second);
}

TEST_CASE("history CSV has the documented header and rows") {
  std::vector<HistoryRow> rows = {{1, "train", 0.5, 0.75, 0, 0, 0},
                                  {1, "eval", 0.0, 0.8, 0.7, 0.6, 0.65}};
  auto path = std::filesystem::temp_directory_path() / "promptclass_history.csv";
  write_history_csv(path.string(), rows);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,split,loss,accuracy,macro_p,macro_r,macro_f1");
  std::getline(in, line);
  CHECK(line.rfind("1,train,", 0) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("non-finite gradients raise an error naming the tensor") {
  ParamStore<double> params;
  Tensor<double> p = Tensor<double>::vec(3, 1.0);
  p.v[1] = 1e308;
  params.add("weights", p);
  CHECK_THROWS_WITH(grad(params,
                         [](Graph<double>& g, GraphParams<double>& P) {
                           auto sq = g.mul(P("weights"), P("weights"));
                           return g.sum_all(g.mul(sq, sq));
                         }),
                    Catch::Matchers::ContainsSubstring("weights"));
}
