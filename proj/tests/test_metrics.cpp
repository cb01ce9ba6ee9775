#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "promptclass/metrics.hpp"
#include "promptclass/rng.hpp"

using namespace promptclass;

namespace {

// independent brute-force per-class counter
MetricsReport brute_score(const std::vector<int>& gold, const std::vector<int>& pred,
                          std::size_t n_classes) {
  MetricsReport r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += gold[i] == pred[i];
  r.accuracy = double(correct) / double(gold.size());
  r.class_p.resize(n_classes);
  r.class_r.resize(n_classes);
  r.class_f1.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      bool g = gold[i] == int(c), p = pred[i] == int(c);
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    double prec = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    double rec = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    r.class_p[c] = prec;
    r.class_r[c] = rec;
    r.class_f1[c] = f1;
    r.macro_p += prec / n_classes;
    r.macro_r += rec / n_classes;
    r.macro_f1 += f1 / n_classes;
  }
  return r;
}

// brute-force two-sided p: integrate the Student-t density over the tail.
// The substitution u = 1/x maps [|t|, inf) to (0, 1/|t|], where the
// transformed integrand f(1/u)/u^2 vanishes smoothly at 0; composite Simpson
// with many panels then integrates it to far below 1e-8.
double t_density(double x, double df) {
  double c = std::exp(std::lgamma((df + 1) / 2.0) - std::lgamma(df / 2.0)) /
             std::sqrt(df * 3.14159265358979323846);
  return c * std::pow(1.0 + x * x / df, -(df + 1) / 2.0);
}

double brute_two_sided_p(double t, double df) {
  double T = std::fabs(t);
  double upper = 1.0 / T;
  auto g = [&](double u) { return u == 0.0 ? 0.0 : t_density(1.0 / u, df) / (u * u); };
  const int n = 20000;  // panels (even)
  double h = upper / n;
  double sum = g(0.0) + g(upper);
  for (int i = 1; i < n; ++i) sum += g(i * h) * (i % 2 ? 4.0 : 2.0);
  double tail = sum * h / 3.0;
  return 2.0 * tail;
}

}  // namespace

TEST_CASE("perfect predictions score 1 everywhere") {
  std::vector<int> y = {0, 1, 2, 1, 0, 2};
  MetricsReport r = score(y, y, 3);
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_p == 1.0);
  CHECK(r.macro_r == 1.0);
  CHECK(r.macro_f1 == 1.0);
}

TEST_CASE("hand-derived binary confusion table") {
  std::vector<int> gold = {1, 1, 0, 0};
  std::vector<int> pred = {1, 0, 0, 0};
  MetricsReport r = score(gold, pred, 2);
  CHECK(r.class_p[1] == 1.0);
  CHECK(r.class_r[1] == 0.5);
  CHECK(r.class_f1[1] == Catch::Approx(2.0 / 3).margin(1e-15));
  CHECK(r.class_p[0] == Catch::Approx(2.0 / 3).margin(1e-15));
  CHECK(r.class_r[0] == 1.0);
  CHECK(r.class_f1[0] == Catch::Approx(0.8).margin(1e-15));
  CHECK(r.macro_f1 == Catch::Approx(11.0 / 15).margin(1e-12));
  CHECK(r.accuracy == 0.75);
  // confusion counts per class sum to the total
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(r.counts.tp[c] + r.counts.fp[c] + r.counts.fn[c] + r.counts.tn[c] == 4);
}

TEST_CASE("score equals brute force on random multiclass instances") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n_classes = 2 + rng.uniform_int(6);
    std::size_t n = 1 + rng.uniform_int(60);
    std::vector<int> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = int(rng.uniform_int(n_classes));
      pred[i] = int(rng.uniform_int(n_classes));
    }
    MetricsReport a = score(gold, pred, n_classes);
    MetricsReport b = brute_score(gold, pred, n_classes);
    CHECK(std::fabs(a.accuracy - b.accuracy) <= 1e-12);
    CHECK(std::fabs(a.macro_p - b.macro_p) <= 1e-12);
    CHECK(std::fabs(a.macro_r - b.macro_r) <= 1e-12);
    CHECK(std::fabs(a.macro_f1 - b.macro_f1) <= 1e-12);
    for (std::size_t c = 0; c < n_classes; ++c)
      CHECK(std::fabs(a.class_f1[c] - b.class_f1[c]) <= 1e-12);
  }
}

TEST_CASE("macro averages include classes absent from gold") {
  // class 2 never appears: its P/R/F1 are 0 and still divide the macro mean
  std::vector<int> gold = {0, 1, 0, 1};
  std::vector<int> pred = {0, 1, 1, 0};
  MetricsReport r = score(gold, pred, 3);
  CHECK(r.class_f1[2] == 0.0);
  CHECK(r.macro_f1 == Catch::Approx((r.class_f1[0] + r.class_f1[1]) / 3.0).margin(1e-15));
}

TEST_CASE("score properties") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n_classes = 2 + rng.uniform_int(4);
    std::size_t n = 5 + rng.uniform_int(40);
    std::vector<int> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = int(rng.uniform_int(n_classes));
      pred[i] = int(rng.uniform_int(n_classes));
    }
    MetricsReport base = score(gold, pred, n_classes);

    // permutation invariance under simultaneous example permutation
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<int> g2(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      g2[i] = gold[perm[i]];
      p2[i] = pred[perm[i]];
    }
    MetricsReport permuted = score(g2, p2, n_classes);
    CHECK(permuted.accuracy == base.accuracy);
    CHECK(permuted.macro_f1 == base.macro_f1);

    // class relabeling permutes per-class entries, macro values unchanged
    std::vector<int> relabel(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) relabel[c] = int(c);
    rng.shuffle(relabel);
    std::vector<int> g3(n), p3(n);
    for (std::size_t i = 0; i < n; ++i) {
      g3[i] = relabel[gold[i]];
      p3[i] = relabel[pred[i]];
    }
    MetricsReport relabeled = score(g3, p3, n_classes);
    CHECK(std::fabs(relabeled.macro_p - base.macro_p) <= 1e-12);
    CHECK(std::fabs(relabeled.macro_r - base.macro_r) <= 1e-12);
    CHECK(std::fabs(relabeled.macro_f1 - base.macro_f1) <= 1e-12);
    for (std::size_t c = 0; c < n_classes; ++c)
      CHECK(std::fabs(relabeled.class_f1[relabel[c]] - base.class_f1[c]) <= 1e-12);

    // accuracy equals micro precision/recall for single-label classification
    long tp_sum = 0, fp_sum = 0, fn_sum = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      tp_sum += base.counts.tp[c];
      fp_sum += base.counts.fp[c];
      fn_sum += base.counts.fn[c];
    }
    double micro_p = double(tp_sum) / double(tp_sum + fp_sum);
    double micro_r = double(tp_sum) / double(tp_sum + fn_sum);
    CHECK(micro_p == Catch::Approx(base.accuracy).margin(1e-12));
    CHECK(micro_r == Catch::Approx(base.accuracy).margin(1e-12));
  }
}

TEST_CASE("score error paths") {
  CHECK_THROWS_AS(score({0, 1}, {0}, 2), UsageError);
  CHECK_THROWS_AS(score({0, 5}, {0, 1}, 2), UsageError);
}

TEST_CASE("aggregate mean, population std and max") {
  MetricsReport a, b, c;
  a.accuracy = 0.860;
  b.accuracy = 0.862;
  c.accuracy = 0.864;
  a.class_p = b.class_p = c.class_p = {0.0};
  a.class_r = b.class_r = c.class_r = {0.0};
  a.class_f1 = b.class_f1 = c.class_f1 = {0.0};
  AggregateReport agg = aggregate({a, b, c});
  CHECK(agg.mean.accuracy == Catch::Approx(0.862).margin(1e-15));
  CHECK(agg.max.accuracy == Catch::Approx(0.864).margin(1e-15));
  // population std of {860,862,864} permille = sqrt(8/3) permille
  CHECK(agg.stddev.accuracy == Catch::Approx(std::sqrt(8.0 / 3.0) / 1000.0).margin(1e-12));

  AggregateReport same = aggregate({a, a, a});
  CHECK(same.stddev.accuracy == 0.0);
  CHECK(same.mean.accuracy == a.accuracy);
  CHECK(same.max.accuracy == a.accuracy);
}

TEST_CASE("aggregate equals a streaming recomputation on random reports") {
  Rng rng(7);
  std::vector<MetricsReport> reports(5);
  for (auto& r : reports) {
    r.accuracy = rng.uniform();
    r.macro_p = rng.uniform();
    r.macro_r = rng.uniform();
    r.macro_f1 = rng.uniform();
    r.class_p = r.class_r = r.class_f1 = {rng.uniform()};
  }
  AggregateReport agg = aggregate(reports);
  double mean = 0, mx = -1;
  for (const auto& r : reports) {
    mean += r.macro_f1;
    mx = std::max(mx, r.macro_f1);
  }
  mean /= 5;
  double var = 0;
  for (const auto& r : reports) var += (r.macro_f1 - mean) * (r.macro_f1 - mean);
  var /= 5;
  CHECK(std::fabs(agg.mean.macro_f1 - mean) <= 1e-12);
  CHECK(std::fabs(agg.stddev.macro_f1 - std::sqrt(var)) <= 1e-12);
  CHECK(std::fabs(agg.max.macro_f1 - mx) <= 1e-12);
}

TEST_CASE("student t CDF matches brute-force integration") {
  for (double t : {0.5, 1.0, 1.9659170789371911, 2.89, 4.2}) {
    for (double df : {2.0, 4.0, 9.0}) {
      double p_impl = 2.0 * (1.0 - student_t_cdf(t, df));
      double p_brute = brute_two_sided_p(t, df);
      CHECK(p_impl == Catch::Approx(p_brute).margin(1e-8));
    }
  }
}

TEST_CASE("paired t-test on the documented fixture") {
  // The documented fixture values; expected t and p frozen from the
  // brute-force-integrated oracle: t = 1.96592, two-sided p = 0.12073, df=4.
  std::vector<double> a = {30.02, 29.99, 30.11, 29.97, 30.12};
  std::vector<double> b = {29.89, 29.93, 29.72, 29.98, 30.02};
  TTestResult r = paired_t_test(a, b);
  CHECK(r.df == 4);
  CHECK(r.t == Catch::Approx(1.9659170789371911).margin(1e-9));
  CHECK(r.p == Catch::Approx(brute_two_sided_p(r.t, 4)).margin(1e-8));
  CHECK(r.p == Catch::Approx(0.12073296105193365).margin(1e-9));
}

TEST_CASE("degenerate variance errors") {
  std::vector<double> a = {1, 2, 3};
  CHECK_THROWS_WITH(paired_t_test(a, a), Catch::Matchers::ContainsSubstring("degenerate variance"));
  std::vector<double> b = {2, 3, 4};  // constant difference -1
  CHECK_THROWS_WITH(paired_t_test(a, b), Catch::Matchers::ContainsSubstring("degenerate variance"));
  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), UsageError);
  CHECK_THROWS_AS(paired_t_test({1.0, 2.0}, {2.0}), UsageError);
}

TEST_CASE("t statistic is antisymmetric, p symmetric") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 3 + rng.uniform_int(6);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(0, 10);
      b[i] = rng.uniform(0, 10);
    }
    TTestResult ab, ba;
    try {
      ab = paired_t_test(a, b);
      ba = paired_t_test(b, a);
    } catch (const NumericError&) {
      continue;  // degenerate draw
    }
    CHECK(ab.t == Catch::Approx(-ba.t).margin(1e-12));
    CHECK(ab.p == Catch::Approx(ba.p).margin(1e-12));
  }
}
