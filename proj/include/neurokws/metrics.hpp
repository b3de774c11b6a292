#pragma once

// Threshold-free and thresholded detection metrics with bootstrap intervals
// and permutation nulls. Every resampling draw is keyed by (seed, draw), so
// results do not depend on how draws are scheduled across threads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "neurokws/error.hpp"
#include "neurokws/parallel.hpp"
#include "neurokws/random.hpp"

namespace nkws {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  ScoredSet() = default;
  ScoredSet(std::vector<double> s, std::vector<int> l) : scores(std::move(s)), labels(std::move(l)) {
    validate();
  }

  void validate() const {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    if (scores.empty()) throw ValidationError("scored set is empty");
    for (double s : scores)
      if (!std::isfinite(s)) throw ValidationError("scores must be finite");
    for (int l : labels)
      if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
  }

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
  std::size_t negatives() const { return size() - positives(); }
  double base_rate() const { return static_cast<double>(positives()) / static_cast<double>(size()); }
};

struct PrPoint {
  double threshold;
  double precision;
  double recall;
  std::size_t tp;
  std::size_t fp;
};

// One point per distinct score, thresholds descending; all examples sharing a
// score enter together.
inline std::vector<PrPoint> pr_curve(const ScoredSet& set) {
  const std::size_t P = set.positives();
  if (P == 0) throw UndefinedMetricError("precision-recall curve needs at least one positive");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
  std::vector<PrPoint> curve;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = set.scores[order[i]];
    for (; i < order.size() && set.scores[order[i]] == s; ++i) (set.labels[order[i]] ? tp : fp) += 1;
    curve.push_back({s, static_cast<double>(tp) / static_cast<double>(tp + fp),
                     static_cast<double>(tp) / static_cast<double>(P), tp, fp});
  }
  return curve;
}

enum class Metric { auprc, auroc, f1, f1_macro, accuracy, mcc };

inline constexpr std::array<Metric, 6> kAllMetrics{Metric::auprc, Metric::auroc,    Metric::f1,
                                                   Metric::f1_macro, Metric::accuracy, Metric::mcc};

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::auprc: return "auprc";
    case Metric::auroc: return "auroc";
    case Metric::f1: return "f1";
    case Metric::f1_macro: return "f1_macro";
    case Metric::accuracy: return "accuracy";
    case Metric::mcc: return "mcc";
  }
  return "?";
}

inline bool is_threshold_free(Metric m) { return m == Metric::auprc || m == Metric::auroc; }

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;

  double f1() const { return 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0; }
  double f1_negative() const { return 2 * tn + fp + fn > 0 ? 2 * tn / (2 * tn + fp + fn) : 0.0; }
  double f1_macro() const { return 0.5 * (f1() + f1_negative()); }
  double accuracy() const { return (tp + tn) / (tp + fp + tn + fn); }
  double mcc() const {
    const double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    return d > 0 ? (tp * tn - fp * fn) / std::sqrt(d) : 0.0;
  }
};

struct ThresholdedMetrics {
  double threshold = 0.5;
  Confusion confusion;
  double f1 = 0, f1_macro = 0, accuracy = 0, mcc = 0;
};

// Predictions are score >= threshold.
inline ThresholdedMetrics thresholded_metrics(const ScoredSet& set, double threshold = 0.5) {
  ThresholdedMetrics m;
  m.threshold = threshold;
  auto& c = m.confusion;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool pred = set.scores[i] >= threshold;
    if (set.labels[i]) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  m.f1 = c.f1();
  m.f1_macro = c.f1_macro();
  m.accuracy = c.accuracy();
  m.mcc = c.mcc();
  return m;
}

// Examples sorted by descending score with their tie groups; labels and
// per-example weights are supplied per evaluation, which is what bootstrap
// (weights = draw multiplicities) and permutation (shuffled labels) need.
class RankedScores {
 public:
  explicit RankedScores(const ScoredSet& set) : order_(set.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
    for (std::size_t i = 0; i < order_.size(); ++i) {
      if (i > 0 && set.scores[order_[i]] != set.scores[order_[i - 1]]) group_end_.push_back(i);
      sorted_scores_.push_back(set.scores[order_[i]]);
      sorted_labels_.push_back(set.labels[order_[i]]);
    }
    group_end_.push_back(order_.size());
  }

  std::size_t size() const { return order_.size(); }
  std::span<const int> labels() const { return sorted_labels_; }
  std::span<const std::size_t> order() const { return order_; }

  // Count of examples with score >= threshold (a prefix of the ranking).
  std::size_t predicted_positive(double threshold) const {
    return static_cast<std::size_t>(
        std::partition_point(sorted_scores_.begin(), sorted_scores_.end(),
                             [&](double s) { return s >= threshold; }) -
        sorted_scores_.begin());
  }

  struct Values {
    std::array<double, 6> value{};
    std::array<bool, 6> defined{};
  };

  // All six metrics for labels (in ranked order) and optional weights.
  Values evaluate(std::span<const int> labels, std::span<const double> weights, double threshold) const {
    const bool weighted = !weights.empty();
    const auto w = [&](std::size_t i) { return weighted ? weights[i] : 1.0; };
    double P = 0, N = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? P : N) += w(i);

    Values out;
    double tp = 0, fp = 0, ap = 0, auc = 0;
    std::size_t start = 0;
    for (std::size_t end : group_end_) {
      double gp = 0, gn = 0;
      for (std::size_t i = start; i < end; ++i) (labels[i] ? gp : gn) += w(i);
      if (gp > 0) {
        tp += gp;
        fp += gn;
        ap += gp * tp / (tp + fp);
      } else {
        fp += gn;
      }
      // Positives in this group beat negatives below it and tie with gn.
      auc += gp * (N - fp + 0.5 * gn);
      start = end;
    }
    const auto set = [&](Metric m, double v, bool ok) {
      out.value[static_cast<std::size_t>(m)] = ok ? v : std::numeric_limits<double>::quiet_NaN();
      out.defined[static_cast<std::size_t>(m)] = ok;
    };
    set(Metric::auprc, P > 0 ? ap / P : 0.0, P > 0);
    set(Metric::auroc, P > 0 && N > 0 ? auc / (P * N) : 0.0, P > 0 && N > 0);

    Confusion c;
    const std::size_t k = predicted_positive(threshold);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool pred = i < k;
      if (labels[i]) (pred ? c.tp : c.fn) += w(i);
      else (pred ? c.fp : c.tn) += w(i);
    }
    const bool any = P + N > 0;
    set(Metric::f1, c.f1(), any);
    set(Metric::f1_macro, c.f1_macro(), any);
    set(Metric::accuracy, any ? c.accuracy() : 0.0, any);
    set(Metric::mcc, c.mcc(), any);
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::vector<double> sorted_scores_;
  std::vector<int> sorted_labels_;
  std::vector<std::size_t> group_end_;
};

// Average precision: sum over tie groups of (R_n - R_{n-1}) * P_n.
inline double auprc(const ScoredSet& set) {
  if (set.positives() == 0) throw UndefinedMetricError("AUPRC needs at least one positive");
  const RankedScores r(set);
  return r.evaluate(r.labels(), {}, 0.5).value[static_cast<std::size_t>(Metric::auprc)];
}

// P(score+ > score-) + P(tie) / 2.
inline double auroc(const ScoredSet& set) {
  if (set.positives() == 0 || set.negatives() == 0)
    throw UndefinedMetricError("AUROC needs both classes");
  const RankedScores r(set);
  return r.evaluate(r.labels(), {}, 0.5).value[static_cast<std::size_t>(Metric::auroc)];
}

inline double metric_value(const ScoredSet& set, Metric m, double threshold = 0.5) {
  switch (m) {
    case Metric::auprc: return auprc(set);
    case Metric::auroc: return auroc(set);
    default: break;
  }
  const auto t = thresholded_metrics(set, threshold);
  switch (m) {
    case Metric::f1: return t.f1;
    case Metric::f1_macro: return t.f1_macro;
    case Metric::accuracy: return t.accuracy;
    default: return t.mcc;
  }
}

// Highest F1 over all curve thresholds.
inline double best_f1(const ScoredSet& set) {
  double best = 0.0;
  for (const auto& p : pr_curve(set))
    if (p.precision + p.recall > 0) best = std::max(best, 2 * p.precision * p.recall / (p.precision + p.recall));
  return best;
}

// Linear interpolation between order statistics (Hyndman-Fan type 7).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline constexpr double kSeFromCiDivisor = 3.92;

inline double se_from_ci(double lo, double hi) { return (hi - lo) / kSeFromCiDivisor; }

struct BootstrapResult {
  double point = 0, lo = 0, hi = 0, se = 0;
  std::size_t resamples = 0;
  std::size_t redraws = 0;  // resamples drawn again because the metric was undefined
  bool flagged = false;     // point outside [lo, hi]
};

struct PermutationResult {
  double observed = 0, p_value = 1;
  double null_mean = 0, null_median = 0, null_lo = 0, null_hi = 0;
  std::size_t draws = 0;
};

struct ResamplingConfig {
  std::size_t n_resamples = 4000;
  std::size_t n_permutations = 10000;
  double level = 0.95;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = default_workers()
};

namespace detail {

inline constexpr std::size_t kMaxRedraws = 10000;

inline std::size_t metric_index(Metric m) { return static_cast<std::size_t>(m); }

}  // namespace detail

// Percentile bootstrap for each requested metric from one shared set of
// resamples. A resample on which a metric is undefined (no positives for
// AUPRC, a missing class for AUROC) is redrawn for that metric only; the
// k-th redraw of draw d is keyed by (seed, d, k), so a metric's interval is
// the same whether it is bootstrapped alone or with others.
inline std::map<Metric, BootstrapResult> bootstrap_many(const ScoredSet& set,
                                                        std::span<const Metric> metrics,
                                                        const ResamplingConfig& cfg) {
  const RankedScores ranked(set);
  const auto point = ranked.evaluate(ranked.labels(), {}, cfg.threshold);
  std::vector<Metric> active;
  for (Metric m : metrics)
    if (point.defined[detail::metric_index(m)]) active.push_back(m);
    else throw UndefinedMetricError(to_string(m) + " is undefined on this set");

  const std::size_t n = set.size(), R = cfg.n_resamples;
  std::vector<std::array<double, 6>> draws(R);
  std::vector<std::size_t> redraws(R, 0);
  const auto labels = ranked.labels();
  // Draws index the set in its original order; weights live in rank order.
  std::vector<std::size_t> rank_of(n);
  for (std::size_t r = 0; r < n; ++r) rank_of[ranked.order()[r]] = r;
  parallel_for(
      R,
      [&](std::size_t d) {
        std::vector<double> weights(n);
        std::vector<bool> done(6, false);
        std::size_t remaining = active.size();
        for (std::size_t attempt = 0; remaining > 0; ++attempt) {
          if (attempt > detail::kMaxRedraws)
            throw InfeasibleError("bootstrap could not draw a resample on which the metric is defined");
          std::fill(weights.begin(), weights.end(), 0.0);
          CounterRng rng(cfg.seed, {hash_tag("bootstrap"), d, attempt});
          for (std::size_t i = 0; i < n; ++i) weights[rank_of[rng.index(n)]] += 1.0;
          const auto v = ranked.evaluate(labels, weights, cfg.threshold);
          for (Metric m : active) {
            const auto k = detail::metric_index(m);
            if (done[k] || !v.defined[k]) continue;
            draws[d][k] = v.value[k];
            done[k] = true;
            --remaining;
          }
          if (remaining > 0) ++redraws[d];
        }
      },
      cfg.workers ? cfg.workers : default_workers());

  std::map<Metric, BootstrapResult> out;
  const double alpha = 1.0 - cfg.level;
  for (Metric m : active) {
    const auto k = detail::metric_index(m);
    std::vector<double> values(R);
    for (std::size_t d = 0; d < R; ++d) values[d] = draws[d][k];
    BootstrapResult b;
    b.point = point.value[k];
    b.lo = quantile(values, alpha / 2);
    b.hi = quantile(values, 1.0 - alpha / 2);
    b.se = se_from_ci(b.lo, b.hi);
    b.resamples = R;
    b.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
    b.flagged = b.point < b.lo || b.point > b.hi;
    out[m] = b;
  }
  return out;
}

inline BootstrapResult bootstrap_ci(const ScoredSet& set, Metric metric, const ResamplingConfig& cfg) {
  const std::array<Metric, 1> one{metric};
  return bootstrap_many(set, one, cfg).at(metric);
}

// One-sided (greater) permutation test: each draw shuffles the labels
// against the fixed scores; p = (1 + #{null >= observed}) / (draws + 1).
inline std::map<Metric, PermutationResult> permutation_many(const ScoredSet& set,
                                                            std::span<const Metric> metrics,
                                                            const ResamplingConfig& cfg) {
  const RankedScores ranked(set);
  const auto observed = ranked.evaluate(ranked.labels(), {}, cfg.threshold);
  for (Metric m : metrics)
    if (!observed.defined[detail::metric_index(m)])
      throw UndefinedMetricError(to_string(m) + " is undefined on this set");
  const std::size_t D = cfg.n_permutations;
  std::vector<std::array<double, 6>> null(D);
  parallel_for(
      D,
      [&](std::size_t d) {
        std::vector<int> labels(ranked.labels().begin(), ranked.labels().end());
        CounterRng rng(cfg.seed, {hash_tag("permutation"), d});
        rng.shuffle(std::span(labels));
        null[d] = ranked.evaluate(labels, {}, cfg.threshold).value;
      },
      cfg.workers ? cfg.workers : default_workers());

  std::map<Metric, PermutationResult> out;
  const double alpha = 1.0 - cfg.level;
  for (Metric m : metrics) {
    const auto k = detail::metric_index(m);
    PermutationResult r;
    r.observed = observed.value[k];
    r.draws = D;
    std::vector<double> values(D);
    std::size_t at_least = 0;
    for (std::size_t d = 0; d < D; ++d) {
      values[d] = null[d][k];
      // Exact ties with the observed value count as "at least as extreme";
      // a tiny tolerance absorbs summation-order noise.
      at_least += values[d] >= r.observed - 1e-12 * std::max(1.0, std::abs(r.observed));
    }
    r.p_value = (1.0 + static_cast<double>(at_least)) / (static_cast<double>(D) + 1.0);
    r.null_mean = D ? std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(D) : 0.0;
    if (D) {
      r.null_median = quantile(values, 0.5);
      r.null_lo = quantile(values, alpha / 2);
      r.null_hi = quantile(values, 1.0 - alpha / 2);
    }
    out[m] = r;
  }
  return out;
}

inline PermutationResult permutation_pvalue(const ScoredSet& set, Metric metric,
                                            const ResamplingConfig& cfg) {
  const std::array<Metric, 1> one{metric};
  return permutation_many(set, one, cfg).at(metric);
}

// 100 * (auprc - base) / base.
inline double pct_delta_over_base(double auprc_value, double base_rate) {
  if (!(base_rate > 0.0)) throw UndefinedMetricError("percent change over a zero base rate");
  return 100.0 * (auprc_value - base_rate) / base_rate;
}

struct SeedSummary {
  double mean = 0;
  double se = 0;  // sample SD / sqrt(n); 0 when n < 2
  std::size_t n = 0;
};

inline SeedSummary summarize_seeds(std::span<const double> values) {
  SeedSummary s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

// Per-seed ratios / percent changes averaged across seeds.
inline SeedSummary seed_mean_pct_delta(std::span<const double> auprcs, std::span<const double> bases) {
  if (auprcs.size() != bases.size()) throw DimensionError("per-seed AUPRC and base-rate lists differ");
  std::vector<double> v;
  for (std::size_t i = 0; i < auprcs.size(); ++i) v.push_back(pct_delta_over_base(auprcs[i], bases[i]));
  return summarize_seeds(v);
}

inline SeedSummary seed_mean_ratio(std::span<const double> auprcs, std::span<const double> bases) {
  if (auprcs.size() != bases.size()) throw DimensionError("per-seed AUPRC and base-rate lists differ");
  std::vector<double> v;
  for (std::size_t i = 0; i < auprcs.size(); ++i) {
    if (!(bases[i] > 0.0)) throw UndefinedMetricError("ratio over a zero base rate");
    v.push_back(auprcs[i] / bases[i]);
  }
  return summarize_seeds(v);
}

// Fractional (average) ranks, 1-based.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && x[idx[j]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j + 1);
    i = j;
  }
  return r;
}

struct Correlation {
  double r = 0;
  double p_value = 1;  // two-sided, t approximation with n - 2 degrees of freedom
  std::size_t n = 0;
};

inline Correlation spearman_rank_corr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: inputs differ in length");
  if (x.size() < 3) throw UndefinedMetricError("spearman: needs at least 3 pairs");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) throw UndefinedMetricError("spearman: constant input");
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(c.r) >= 1.0) {
    c.p_value = 0.0;
  } else {
    const double df = n - 2.0;
    const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    const boost::math::students_t dist(df);
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

// Everything Table-1-shaped for one scored set.
struct MetricsReport {
  std::size_t n = 0;
  std::size_t positives = 0;
  double base_rate = 0;
  double threshold = 0.5;
  std::map<Metric, double> values;
  std::map<Metric, BootstrapResult> ci;
  std::map<Metric, PermutationResult> permutation;

  double value(Metric m) const { return values.at(m); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n"] = n;
    j["positives"] = positives;
    j["base_rate"] = base_rate;
    j["threshold"] = threshold;
    for (const auto& [m, v] : values) {
      auto& e = j["metrics"][to_string(m)];
      e["value"] = v;
      if (const auto it = ci.find(m); it != ci.end())
        e["ci"] = {{"lo", it->second.lo},         {"hi", it->second.hi},
                   {"se", it->second.se},         {"resamples", it->second.resamples},
                   {"redraws", it->second.redraws}, {"flagged", it->second.flagged}};
      if (const auto it = permutation.find(m); it != permutation.end())
        e["permutation"] = {{"p_value", it->second.p_value},   {"null_mean", it->second.null_mean},
                            {"null_median", it->second.null_median}, {"null_lo", it->second.null_lo},
                            {"null_hi", it->second.null_hi},   {"draws", it->second.draws}};
    }
    return j;
  }

  static std::vector<std::string> csv_columns() {
    std::vector<std::string> cols{"n", "positives", "base_rate", "threshold"};
    for (Metric m : kAllMetrics)
      for (const char* suffix : {"", "_lo", "_hi", "_se", "_p", "_null_mean", "_null_median"})
        cols.push_back(to_string(m) + suffix);
    return cols;
  }

  std::vector<double> csv_values() const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> v{static_cast<double>(n), static_cast<double>(positives), base_rate, threshold};
    for (Metric m : kAllMetrics) {
      const auto val = values.find(m);
      const auto c = ci.find(m);
      const auto p = permutation.find(m);
      v.push_back(val != values.end() ? val->second : nan);
      v.push_back(c != ci.end() ? c->second.lo : nan);
      v.push_back(c != ci.end() ? c->second.hi : nan);
      v.push_back(c != ci.end() ? c->second.se : nan);
      v.push_back(p != permutation.end() ? p->second.p_value : nan);
      v.push_back(p != permutation.end() ? p->second.null_mean : nan);
      v.push_back(p != permutation.end() ? p->second.null_median : nan);
    }
    return v;
  }
};

// Point values for every defined metric, bootstrap CIs (n_resamples > 0) and
// permutation nulls (n_permutations > 0) for all of them; the thresholded
// nulls are the permutation baseline at the same threshold.
inline MetricsReport compute_metrics_report(const ScoredSet& set, const ResamplingConfig& cfg) {
  set.validate();
  MetricsReport r;
  r.n = set.size();
  r.positives = set.positives();
  r.base_rate = set.base_rate();
  r.threshold = cfg.threshold;
  const RankedScores ranked(set);
  const auto point = ranked.evaluate(ranked.labels(), {}, cfg.threshold);
  std::vector<Metric> defined;
  for (Metric m : kAllMetrics)
    if (point.defined[detail::metric_index(m)]) {
      defined.push_back(m);
      r.values[m] = point.value[detail::metric_index(m)];
    }
  if (cfg.n_resamples > 0) r.ci = bootstrap_many(set, defined, cfg);
  if (cfg.n_permutations > 0) r.permutation = permutation_many(set, defined, cfg);
  return r;
}

}  // namespace nkws
