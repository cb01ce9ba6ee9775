#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "promptclass/encoder.hpp"
#include "promptclass/params.hpp"
#include "promptclass/rng.hpp"

using namespace promptclass;

namespace {

EncoderConfig tiny_config(std::size_t layers = 2, std::size_t d = 4, std::size_t heads = 1,
                          std::size_t ffn = 8, std::size_t maxlen = 8, std::size_t vocab = 20) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = d;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_ffn = ffn;
  cfg.max_len = maxlen;
  cfg.dropout_rate = 0.0;
  return cfg;
}

// ---- independent straight-line reference forward pass ----------------------
// Plain double loops, no graph machinery; deliberately written from the
// architecture description rather than sharing code with the implementation.

using Mat = std::vector<std::vector<double>>;

Mat ref_layernorm(const Mat& x, const std::vector<double>& gamma,
                  const std::vector<double>& beta) {
  Mat y = x;
  const std::size_t d = x[0].size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= d;
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) y[i][j] = gamma[j] * (x[i][j] - mean) * rstd + beta[j];
  }
  return y;
}

Mat ref_linear(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
  // y = x * w^T + b, w is [out x in]
  Mat y(x.size(), std::vector<double>(w.rows(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = b.v[o];
      for (std::size_t j = 0; j < w.cols(); ++j) s += x[i][j] * w.at(o, j);
      y[i][o] = s;
    }
  return y;
}

std::vector<Mat> ref_forward(const ParamStore<double>& p, const EncoderConfig& cfg,
                             const std::vector<int>& ids, std::size_t valid) {
  const std::size_t n = ids.size(), d = cfg.d_model, dh = d / cfg.n_heads;
  Mat x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x[i][j] = p.get("embed.token").at(ids[i], j) + p.get("embed.position").at(i, j);
  std::vector<Mat> states{x};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::string pre = "enc.l" + std::to_string(l) + ".";
    Mat q = ref_linear(x, p.get(pre + "attn.wq"), p.get(pre + "attn.bq"));
    Mat k = ref_linear(x, p.get(pre + "attn.wk"), p.get(pre + "attn.bk"));
    Mat v = ref_linear(x, p.get(pre + "attn.wv"), p.get(pre + "attn.bv"));
    Mat ctx(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores(valid);
        for (std::size_t j2 = 0; j2 < valid; ++j2) {
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j2][h * dh + c];
          scores[j2] = s / std::sqrt(static_cast<double>(dh));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double sum = 0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (double& s : scores) s /= sum;
        for (std::size_t j2 = 0; j2 < valid; ++j2)
          for (std::size_t c = 0; c < dh; ++c)
            ctx[i][h * dh + c] += scores[j2] * v[j2][h * dh + c];
      }
    }
    Mat attn = ref_linear(ctx, p.get(pre + "attn.wo"), p.get(pre + "attn.bo"));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) attn[i][j] += x[i][j];
    Mat x1 = ref_layernorm(attn, p.get(pre + "ln1.g").v, p.get(pre + "ln1.b").v);
    Mat f1 = ref_linear(x1, p.get(pre + "ffn.w1"), p.get(pre + "ffn.b1"));
    for (auto& row : f1)
      for (auto& val : row) val = 0.5 * val * (1.0 + std::erf(val / std::sqrt(2.0)));
    Mat f2 = ref_linear(f1, p.get(pre + "ffn.w2"), p.get(pre + "ffn.b2"));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) f2[i][j] += x1[i][j];
    x = ref_layernorm(f2, p.get(pre + "ln2.g").v, p.get(pre + "ln2.b").v);
    states.push_back(x);
  }
  return states;
}

}  // namespace

TEST_CASE("embed with zero tables is zero") {
  EncoderConfig cfg = tiny_config();
  Rng rng(1);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  p.get("embed.token").fill(0.0);
  p.get("embed.position").fill(0.0);
  Tensor<double> out = embed(p, cfg, {1, 2, 3});
  for (double v : out.v) CHECK(v == 0.0);
}

TEST_CASE("embed one-hot lookup semantics") {
  EncoderConfig cfg = tiny_config(1, 4, 1, 8, 8, 4);
  Rng rng(2);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  p.get("embed.token").fill(0.0);
  p.get("embed.position").fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) p.get("embed.token").at(i, i) = 1.0;
  Tensor<double> out = embed(p, cfg, {2, 0, 3});
  CHECK(out.at(0, 2) == 1.0);
  CHECK(out.at(1, 0) == 1.0);
  CHECK(out.at(2, 3) == 1.0);
  double total = 0;
  for (double v : out.v) total += v;
  CHECK(total == 3.0);
}

TEST_CASE("embed equals direct table recomputation") {
  EncoderConfig cfg = tiny_config();
  Rng rng(3);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  std::vector<int> ids = {7, 0, 13, 7};
  Tensor<double> out = embed(p, cfg, ids);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j)
      CHECK(out.at(i, j) ==
            p.get("embed.token").at(ids[i], j) + p.get("embed.position").at(i, j));
}

TEST_CASE("embed rejects out-of-range ids") {
  EncoderConfig cfg = tiny_config();
  Rng rng(4);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  CHECK_THROWS_AS(embed(p, cfg, {static_cast<int>(cfg.vocab_size)}), DataError);
}

TEST_CASE("single zero-weight block reduces to two layer norms") {
  EncoderConfig cfg = tiny_config(1, 4, 1, 8);
  Rng rng(5);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  for (auto& [name, t] : p.items()) {
    if (name.find("attn.w") != std::string::npos || name.find("ffn.w") != std::string::npos ||
        name.find(".b") != std::string::npos)
      if (name.rfind("embed.", 0) != 0) t.fill(0.0);
  }
  std::vector<int> ids = {1, 5, 9};
  HiddenStack<double> stack = encode(p, cfg, ids, 3);
  // hand oracle: LN(LN(embedding)) with gamma=1, beta=0
  Mat x0(3, std::vector<double>(4));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) x0[i][j] = stack.states[0].at(i, j);
  std::vector<double> ones(4, 1.0), zeros(4, 0.0);
  Mat expect = ref_layernorm(ref_layernorm(x0, ones, zeros), ones, zeros);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(stack.states[1].at(i, j) == Catch::Approx(expect[i][j]).margin(1e-12));
}

TEST_CASE("valid_length=1 makes states independent of pad tokens") {
  EncoderConfig cfg = tiny_config(2, 8, 2, 16);
  Rng rng(6);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  HiddenStack<double> a = encode(p, cfg, {3, 0, 0, 0}, 1);
  HiddenStack<double> b = encode(p, cfg, {3, 9, 17, 4}, 1);
  for (std::size_t l = 0; l < a.states.size(); ++l)
    for (std::size_t j = 0; j < cfg.d_model; ++j)
      CHECK(a.states[l].at(0, j) == b.states[l].at(0, j));
}

TEST_CASE("padding invariance is exact at valid positions") {
  EncoderConfig cfg = tiny_config(2, 8, 2, 16, 10);
  Rng rng(7);
  auto p = init_params<float>(cfg, Variant::kFull, 2, rng);
  Rng drng(19);
  for (int iter = 0; iter < 10; ++iter) {
    std::size_t valid = 1 + drng.uniform_int(6);
    std::size_t n = valid + 1 + drng.uniform_int(3);
    std::vector<int> ids1(n), ids2;
    for (auto& x : ids1) x = 5 + static_cast<int>(drng.uniform_int(10));
    ids2 = ids1;
    for (std::size_t i = valid; i < n; ++i)
      ids2[i] = 5 + static_cast<int>(drng.uniform_int(10));
    HiddenStack<float> a = encode(p, cfg, ids1, valid);
    HiddenStack<float> b = encode(p, cfg, ids2, valid);
    REQUIRE(a.states.size() == cfg.n_layers + 1);
    for (std::size_t l = 0; l < a.states.size(); ++l)
      for (std::size_t i = 0; i < valid; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
          CHECK(a.states[l].at(i, j) == b.states[l].at(i, j));
  }
}

TEST_CASE("truncating pads away equals the padded run on the prefix") {
  EncoderConfig cfg = tiny_config(2, 8, 2, 16, 12);
  Rng rng(8);
  auto p = init_params<float>(cfg, Variant::kFull, 2, rng);
  std::vector<int> padded = {6, 7, 8, 0, 0, 0};
  std::vector<int> bare = {6, 7, 8};
  HiddenStack<float> a = encode(p, cfg, padded, 3);
  HiddenStack<float> b = encode(p, cfg, bare, 3);
  for (std::size_t l = 0; l < a.states.size(); ++l)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < cfg.d_model; ++j)
        CHECK(a.states[l].at(i, j) == b.states[l].at(i, j));
}

TEST_CASE("evaluation-mode encode is bitwise reproducible") {
  EncoderConfig cfg = tiny_config(3, 8, 2, 16);
  Rng rng(9);
  auto p = init_params<float>(cfg, Variant::kFull, 2, rng);
  std::vector<int> ids = {5, 6, 7, 8};
  HiddenStack<float> a = encode(p, cfg, ids, 4);
  HiddenStack<float> b = encode(p, cfg, ids, 4);
  for (std::size_t l = 0; l < a.states.size(); ++l) CHECK(a.states[l] == b.states[l]);
}

TEST_CASE("tiny config matches the straight-line reference to 1e-6") {
  EncoderConfig cfg = tiny_config(2, 4, 1, 8, 8, 16);
  Rng rng(10);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  std::vector<int> ids = {3, 11, 7};
  HiddenStack<double> stack = encode(p, cfg, ids, 3);
  std::vector<Mat> ref = ref_forward(p, cfg, ids, 3);
  REQUIRE(stack.states.size() == ref.size());
  for (std::size_t l = 0; l < ref.size(); ++l)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(stack.states[l].at(i, j) == Catch::Approx(ref[l][i][j]).margin(1e-6));
}

TEST_CASE("non-finite intermediates raise numeric overflow naming the layer") {
  EncoderConfig cfg = tiny_config(2, 4, 1, 8);
  Rng rng(11);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);
  p.get("enc.l0.ln1.g").v[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH(encode(p, cfg, {1, 2}, 2),
                    Catch::Matchers::ContainsSubstring("numeric overflow") &&
                        Catch::Matchers::ContainsSubstring("layer 1"));
}

TEST_CASE("mlm_logits semantics") {
  EncoderConfig cfg = tiny_config(1, 4, 1, 8, 8, 4);
  Rng rng(12);
  auto p = init_params<double>(cfg, Variant::kFull, 2, rng);

  HiddenStack<double> stack;
  stack.valid_length = 3;
  Tensor<double> hidden = Tensor<double>::mat(3, 4);
  for (auto& v : hidden.v) v = rng.uniform(-1, 1);
  stack.states = {hidden, hidden};

  SECTION("zero head gives zero logits") {
    p.get("mlm.head").fill(0.0);
    Tensor<double> logits = mlm_logits(p, stack);
    for (double v : logits.v) CHECK(v == 0.0);
  }
  SECTION("one-hot head rows copy hidden coordinates") {
    p.get("mlm.head").fill(0.0);
    for (std::size_t j = 0; j < 4; ++j) p.get("mlm.head").at(j, j) = 1.0;
    Tensor<double> logits = mlm_logits(p, stack);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(logits.at(i, j) == hidden.at(i, j));
  }
  SECTION("random head matches a direct matmul oracle") {
    Tensor<double> logits = mlm_logits(p, stack);
    const Tensor<double>& head = p.get("mlm.head");
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < head.rows(); ++o) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += hidden.at(i, j) * head.at(o, j);
        CHECK(logits.at(i, o) == Catch::Approx(s).margin(1e-9));
      }
  }
}
