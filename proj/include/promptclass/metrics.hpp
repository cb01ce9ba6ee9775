#ifndef PROMPTCLASS_METRICS_HPP
#define PROMPTCLASS_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "promptclass/errors.hpp"

namespace promptclass {

struct ConfusionCounts {
  std::size_t n_classes = 0;
  std::vector<long> tp, fp, fn, tn;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_p = 0.0;
  double macro_r = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> class_p, class_r, class_f1;
  ConfusionCounts counts;
};

/// Accuracy plus macro precision/recall/F1. Macro averages run over all
/// n_classes classes (absent classes included); 0/0 ratios resolve to 0.
inline MetricsReport score(const std::vector<int>& gold, const std::vector<int>& pred,
                           std::size_t n_classes) {
  if (gold.size() != pred.size())
    throw UsageError("score: gold and pred lengths differ (" + std::to_string(gold.size()) +
                     " vs " + std::to_string(pred.size()) + ")");
  if (gold.empty()) throw UsageError("score: empty inputs");
  MetricsReport r;
  r.counts.n_classes = n_classes;
  r.counts.tp.assign(n_classes, 0);
  r.counts.fp.assign(n_classes, 0);
  r.counts.fn.assign(n_classes, 0);
  r.counts.tn.assign(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    int g = gold[i], p = pred[i];
    if (g < 0 || static_cast<std::size_t>(g) >= n_classes || p < 0 ||
        static_cast<std::size_t>(p) >= n_classes)
      throw UsageError("score: label out of range at index " + std::to_string(i));
    if (g == p) ++correct;
    for (std::size_t c = 0; c < n_classes; ++c) {
      bool is_g = static_cast<std::size_t>(g) == c;
      bool is_p = static_cast<std::size_t>(p) == c;
      if (is_g && is_p)
        ++r.counts.tp[c];
      else if (!is_g && is_p)
        ++r.counts.fp[c];
      else if (is_g && !is_p)
        ++r.counts.fn[c];
      else
        ++r.counts.tn[c];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  r.class_p.resize(n_classes);
  r.class_r.resize(n_classes);
  r.class_f1.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    double tp = static_cast<double>(r.counts.tp[c]);
    double p_den = tp + static_cast<double>(r.counts.fp[c]);
    double r_den = tp + static_cast<double>(r.counts.fn[c]);
    double prec = p_den > 0.0 ? tp / p_den : 0.0;
    double rec = r_den > 0.0 ? tp / r_den : 0.0;
    double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    r.class_p[c] = prec;
    r.class_r[c] = rec;
    r.class_f1[c] = f1;
    r.macro_p += prec;
    r.macro_r += rec;
    r.macro_f1 += f1;
  }
  r.macro_p /= static_cast<double>(n_classes);
  r.macro_r /= static_cast<double>(n_classes);
  r.macro_f1 /= static_cast<double>(n_classes);
  return r;
}

struct AggregateReport {
  MetricsReport mean, stddev, max;  // population std across seeds
  std::size_t n_runs = 0;
};

/// Elementwise mean / population std / max over per-seed reports.
inline AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw UsageError("aggregate: no reports");
  const std::size_t n = reports.size();
  const std::size_t c = reports[0].class_p.size();
  AggregateReport out;
  out.n_runs = n;
  auto agg = [n](auto getter, MetricsReport& mean, MetricsReport& sd, MetricsReport& mx,
                 auto setter, const std::vector<MetricsReport>& rs) {
    double m = 0.0, best = -1.0;
    for (const auto& r : rs) {
      double v = getter(r);
      m += v;
      best = std::max(best, v);
    }
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& r : rs) {
      double d = getter(r) - m;
      var += d * d;
    }
    var /= static_cast<double>(n);
    setter(mean, m);
    setter(sd, std::sqrt(var));
    setter(mx, best);
  };
#define PROMPTCLASS_AGG_FIELD(field)                                             \
  agg([](const MetricsReport& r) { return r.field; }, out.mean, out.stddev, out.max, \
      [](MetricsReport& r, double v) { r.field = v; }, reports)
  PROMPTCLASS_AGG_FIELD(accuracy);
  PROMPTCLASS_AGG_FIELD(macro_p);
  PROMPTCLASS_AGG_FIELD(macro_r);
  PROMPTCLASS_AGG_FIELD(macro_f1);
#undef PROMPTCLASS_AGG_FIELD
  out.mean.class_p.resize(c);
  out.stddev.class_p.resize(c);
  out.max.class_p.resize(c);
  out.mean.class_r.resize(c);
  out.stddev.class_r.resize(c);
  out.max.class_r.resize(c);
  out.mean.class_f1.resize(c);
  out.stddev.class_f1.resize(c);
  out.max.class_f1.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    agg([i](const MetricsReport& r) { return r.class_p[i]; }, out.mean, out.stddev, out.max,
        [i](MetricsReport& r, double v) { r.class_p[i] = v; }, reports);
    agg([i](const MetricsReport& r) { return r.class_r[i]; }, out.mean, out.stddev, out.max,
        [i](MetricsReport& r, double v) { r.class_r[i] = v; }, reports);
    agg([i](const MetricsReport& r) { return r.class_f1[i]; }, out.mean, out.stddev, out.max,
        [i](MetricsReport& r, double v) { r.class_f1[i] = v; }, reports);
  }
  return out;
}

namespace detail {

inline double log_gamma(double x) {
  // Lanczos approximation, good to ~1e-15 for x > 0.
  static const double c[9] = {0.99999999999980993,  676.5203681218851,   -1259.1392167224028,
                              771.32342877765313,   -176.61502916214059, 12.507343278686905,
                              -0.13857109526572012, 9.9843695780195716e-6,
                              1.5056327351493116e-7};
  if (x < 0.5)
    return std::log(3.14159265358979323846 / std::sin(3.14159265358979323846 * x)) -
           log_gamma(1.0 - x);
  x -= 1.0;
  double a = c[0];
  double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += c[i] / (x + i);
  return 0.91893853320467274178 + (x + 0.5) * std::log(t) - t + std::log(a);
}

// Continued fraction for the regularized incomplete beta function
// (modified Lentz), accurate to ~1e-15.
inline double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double eps = 1e-15;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) + a * std::log(x) +
                    b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

/// P(T <= t) for Student's t with df degrees of freedom.
inline double student_t_cdf(double t, double df) {
  double x = df / (df + t * t);
  double tail = 0.5 * detail::incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

struct TTestResult {
  double t = 0.0;
  double p = 0.0;  // two-sided
  std::size_t df = 0;
};

/// Classical paired two-sided t-test on the differences a[i]-b[i].
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired_t_test: unequal lengths");
  const std::size_t n = a.size();
  if (n < 2) throw UsageError("paired_t_test: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = (a[i] - b[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);  // sample variance
  if (var == 0.0) throw NumericError("degenerate variance");
  TTestResult r;
  r.df = n - 1;
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  double df = static_cast<double>(r.df);
  r.p = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), df));
  return r;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_METRICS_HPP
