#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include <boost/math/special_functions/beta.hpp>

#include "neurokws/metrics.hpp"

using namespace nkws;
using Catch::Approx;

namespace {

// Exhaustive oracles: every distinct score is a threshold; every
// positive/negative pair is compared.
double oracle_ap(const ScoredSet& s) {
  std::set<double, std::greater<>> thresholds(s.scores.begin(), s.scores.end());
  const double P = static_cast<double>(s.positives());
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.scores[i] >= t) (s.labels[i] ? tp : fp) += 1;
    const double recall = tp / P;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

double oracle_auroc(const ScoredSet& s) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s.labels[i] == 1 && s.labels[j] == 0) {
        pairs += 1;
        wins += s.scores[i] > s.scores[j] ? 1.0 : s.scores[i] == s.scores[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

ScoredSet random_set(std::mt19937_64& gen, std::size_t n, int levels, double p_pos) {
  std::uniform_int_distribution<int> score(0, levels - 1);
  std::bernoulli_distribution pos(p_pos);
  std::vector<double> s(n);
  std::vector<int> l(n);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = score(gen) / static_cast<double>(levels);
      l[i] = pos(gen) ? 1 : 0;
    }
  } while (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0);
  return ScoredSet(s, l);
}

ScoredSet example_set() { return ScoredSet({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}); }

}  // namespace

TEST_CASE("precision-recall curve of the worked example") {
  const auto curve = pr_curve(example_set());
  REQUIRE(curve.size() == 4);
  const double P[] = {1.0, 0.5, 2.0 / 3.0, 0.5}, R[] = {0.5, 0.5, 1.0, 1.0};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(curve[i].precision == Approx(P[i]).epsilon(1e-15));
    CHECK(curve[i].recall == Approx(R[i]).epsilon(1e-15));
  }
  CHECK(curve[0].threshold == 0.9);
}

TEST_CASE("precision-recall curve edge cases") {
  const ScoredSet perfect({0.9, 0.8, 0.7, 0.2, 0.1}, {1, 1, 1, 0, 0});
  const auto c = pr_curve(perfect);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c[i].precision == 1.0);

  const ScoredSet tied({0.4, 0.4, 0.4, 0.4, 0.4}, {1, 0, 0, 1, 0});
  const auto t = pr_curve(tied);
  REQUIRE(t.size() == 1);
  CHECK(t[0].precision == Approx(0.4));
  CHECK(t[0].recall == 1.0);

  CHECK_THROWS_AS(pr_curve(ScoredSet({0.1, 0.2}, {0, 0})), UndefinedMetricError);

  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto curve = pr_curve(random_set(gen, 40, 7, 0.3));
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].recall >= curve[i - 1].recall);
      CHECK(curve[i].threshold < curve[i - 1].threshold);
    }
  }
}

TEST_CASE("AUPRC is step-wise average precision") {
  CHECK(auprc(example_set()) == Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-15));
  CHECK(auprc(ScoredSet({0.9, 0.8, 0.1}, {1, 1, 0})) == 1.0);
  CHECK_THROWS_AS(auprc(ScoredSet({0.1}, {0})), UndefinedMetricError);
}

TEST_CASE("AUROC rank statistic examples") {
  CHECK(auroc(ScoredSet({0.9, 0.8, 0.1}, {1, 1, 0})) == 1.0);
  CHECK(auroc(ScoredSet({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0})) == 0.5);
  CHECK(auroc(ScoredSet({3, 2, 1}, {1, 0, 1})) == 0.5);
  CHECK_THROWS_AS(auroc(ScoredSet({0.1, 0.2}, {1, 1})), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(ScoredSet({0.1, 0.2}, {0, 0})), UndefinedMetricError);
}

TEST_CASE("AUPRC and AUROC match exhaustive oracles for n <= 12") {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<std::size_t> size(2, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    const int levels = trial % 3 == 0 ? 3 : 1000;  // heavy ties or mostly distinct
    const auto s = random_set(gen, size(gen), levels, 0.4);
    CHECK(std::abs(auprc(s) - oracle_ap(s)) <= 1e-12);
    CHECK(std::abs(auroc(s) - oracle_auroc(s)) <= 1e-12);
  }
}

TEST_CASE("ranking metrics are invariant under increasing transforms") {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_set(gen, 30, 10, 0.3);
    auto t = s;
    for (auto& v : t.scores) v = std::exp(3 * v) - 7;
    CHECK(auprc(t) == Approx(auprc(s)).epsilon(1e-14));
    CHECK(auroc(t) == Approx(auroc(s)).epsilon(1e-14));
  }
}

TEST_CASE("reversed perfect ranking attains the minimal AP") {
  for (std::size_t n = 3; n <= 10; ++n)
    for (std::size_t k = 1; k < n; ++k) {
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) scores[i] = static_cast<double>(n - i);
      std::vector<int> reversed(n, 0);
      for (std::size_t i = n - k; i < n; ++i) reversed[i] = 1;
      const double rev = auprc(ScoredSet(scores, reversed));

      double minimum = 2.0;
      std::vector<int> labels(reversed);
      std::sort(labels.begin(), labels.end());
      do minimum = std::min(minimum, oracle_ap(ScoredSet(scores, labels)));
      while (std::next_permutation(labels.begin(), labels.end()));
      CHECK(rev == Approx(minimum).epsilon(1e-14));
    }
}

TEST_CASE("thresholded metrics") {
  const auto t = thresholded_metrics(ScoredSet({0.9, 0.6}, {1, 0}), 0.5);
  CHECK(t.f1 == Approx(2.0 / 3.0));
  CHECK(t.accuracy == 0.5);

  const auto perfect = thresholded_metrics(ScoredSet({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 0.5);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.f1_macro == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.mcc == Approx(1.0));

  // All-negative predictor on the published test split shape: 24 positives in 4660.
  std::vector<double> scores(4660, 0.1);
  std::vector<int> labels(4660, 0);
  std::fill(labels.begin(), labels.begin() + 24, 1);
  const ScoredSet imbalanced(scores, labels);
  const auto neg = thresholded_metrics(imbalanced, 0.5);
  CHECK(neg.mcc == 0.0);
  CHECK(neg.f1 == 0.0);
  CHECK(neg.accuracy == Approx(1.0 - imbalanced.base_rate()).epsilon(1e-15));
  CHECK(neg.accuracy == Approx(0.995).margin(5e-4));
  const double tn = 4636, fn = 24;
  CHECK(neg.f1_macro == Approx((0.0 + 2 * tn / (2 * tn + fn)) / 2.0).epsilon(1e-15));

  // Predictions use score >= threshold.
  CHECK(thresholded_metrics(ScoredSet({0.5}, {1}), 0.5).confusion.tp == 1);
}

TEST_CASE("type-7 quantiles and CI-derived standard errors") {
  CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(quantile({7}, 0.975) == 7);
  CHECK(se_from_ci(0.0045, 0.0154) == Approx(0.00278).margin(5e-6));
  CHECK(std::round(se_from_ci(0.0045, 0.0154) * 1e4) / 1e4 == Approx(0.0028));
}

TEST_CASE("bootstrap intervals resample the set with replacement") {
  std::mt19937_64 gen(3);
  const auto s = random_set(gen, 25, 50, 0.3);
  ResamplingConfig cfg;
  cfg.n_resamples = 300;
  cfg.seed = 9;
  const auto b = bootstrap_ci(s, Metric::auprc, cfg);

  // Independent replay: materialize each resample and score it with the
  // exhaustive oracle.
  std::vector<double> values;
  std::size_t redraws = 0;
  for (std::size_t d = 0; d < cfg.n_resamples; ++d)
    for (std::size_t attempt = 0;; ++attempt) {
      CounterRng rng(cfg.seed, {hash_tag("bootstrap"), d, attempt});
      std::vector<double> sc;
      std::vector<int> lb;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const auto k = rng.index(s.size());
        sc.push_back(s.scores[k]);
        lb.push_back(s.labels[k]);
      }
      if (std::count(lb.begin(), lb.end(), 1) == 0) {
        ++redraws;
        continue;
      }
      values.push_back(oracle_ap(ScoredSet(sc, lb)));
      break;
    }
  CHECK(b.lo == Approx(quantile(values, 0.025)).epsilon(1e-12));
  CHECK(b.hi == Approx(quantile(values, 0.975)).epsilon(1e-12));
  CHECK(b.se == Approx((b.hi - b.lo) / 3.92));
  CHECK(b.redraws == redraws);
  CHECK(b.point == Approx(auprc(s)));
  CHECK(b.lo <= b.point);
  CHECK(b.point <= b.hi);
}

TEST_CASE("bootstrap is deterministic, schedule-independent and redraws when positives vanish") {
  std::vector<double> scores(50);
  std::vector<int> labels(50, 0);
  for (std::size_t i = 0; i < 50; ++i) scores[i] = 0.01 * static_cast<double>(i);
  labels[49] = 1;
  const ScoredSet rare(scores, labels);
  ResamplingConfig cfg;
  cfg.n_resamples = 500;
  cfg.seed = 4;
  cfg.workers = 1;
  const auto a = bootstrap_ci(rare, Metric::auprc, cfg);
  cfg.workers = 4;
  const auto b = bootstrap_ci(rare, Metric::auprc, cfg);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.redraws == b.redraws);
  // P(no positive in 50 draws) = 0.98^50 ~ 0.36.
  CHECK(a.redraws > 100);

  // Joint and single-metric runs agree.
  const std::array<Metric, 3> metrics{Metric::auprc, Metric::auroc, Metric::mcc};
  const auto joint = bootstrap_many(rare, metrics, cfg);
  for (Metric m : metrics) {
    const auto single = bootstrap_ci(rare, m, cfg);
    CHECK(joint.at(m).lo == single.lo);
    CHECK(joint.at(m).hi == single.hi);
  }
}

TEST_CASE("bootstrap of identical examples is degenerate") {
  const ScoredSet same(std::vector<double>(20, 0.7), std::vector<int>(20, 1));
  ResamplingConfig cfg;
  cfg.n_resamples = 200;
  for (Metric m : {Metric::auprc, Metric::accuracy, Metric::f1}) {
    const auto b = bootstrap_ci(same, m, cfg);
    CHECK(b.lo == b.point);
    CHECK(b.hi == b.point);
    CHECK(b.se == 0.0);
  }
  CHECK_THROWS_AS(bootstrap_ci(same, Metric::auroc, cfg), UndefinedMetricError);
}

TEST_CASE("permutation p-values") {
  // Perfect separation: no shuffle of 10 positives among 200 ranks them all first.
  std::vector<double> scores(200);
  std::vector<int> labels(200, 0);
  for (std::size_t i = 0; i < 200; ++i) scores[i] = static_cast<double>(200 - i);
  std::fill(labels.begin(), labels.begin() + 10, 1);
  ResamplingConfig cfg;
  cfg.seed = 1;
  const auto top = permutation_pvalue(ScoredSet(scores, labels), Metric::auprc, cfg);
  CHECK(top.draws == 10000);
  CHECK(top.p_value == Approx(1.0 / 10001.0).epsilon(1e-15));

  // Positives ranked last: observed sits below the null median.
  std::reverse(labels.begin(), labels.end());
  const auto bottom = permutation_pvalue(ScoredSet(scores, labels), Metric::auprc, cfg);
  CHECK(bottom.observed < bottom.null_median);
  CHECK(bottom.p_value > 0.5);

  cfg.workers = 3;
  const auto again = permutation_pvalue(ScoredSet(scores, labels), Metric::auprc, cfg);
  CHECK(again.p_value == bottom.p_value);
  CHECK(again.null_mean == bottom.null_mean);
}

TEST_CASE("permutation null of AUPRC sits near the base rate") {
  const std::size_t n = 4000, P = 200;
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u;
  std::vector<double> scores(n);
  std::vector<int> labels(n, 0);
  for (auto& s : scores) s = u(gen);
  std::fill(labels.begin(), labels.begin() + P, 1);
  const ScoredSet s(scores, labels);
  ResamplingConfig cfg;
  cfg.seed = 12;
  cfg.n_permutations = 4000;
  const auto r = permutation_pvalue(s, Metric::auprc, cfg);
  const double base = s.base_rate();
  CHECK(std::abs(r.null_mean - base) < 0.1 * base);

  // Exact expectation of AP under a uniformly random ranking:
  // (1/n) [H_n + (P-1)/(n-1) (n - H_n)].
  double H = 0;
  for (std::size_t k = 1; k <= n; ++k) H += 1.0 / static_cast<double>(k);
  const double expected =
      (H + (static_cast<double>(P) - 1) / (static_cast<double>(n) - 1) * (static_cast<double>(n) - H)) /
      static_cast<double>(n);
  CHECK(r.null_mean == Approx(expected).margin(5e-4));
  CHECK(r.null_lo < r.null_median);
  CHECK(r.null_median < r.null_hi);
}

TEST_CASE("percent change over base rate") {
  CHECK(pct_delta_over_base(0.02, 0.02) == 0.0);
  CHECK(pct_delta_over_base(0.05, 0.01) == Approx(400.0));
  CHECK(0.094 / 0.007 == Approx(13.4).margin(0.05));
  CHECK_THROWS_AS(pct_delta_over_base(0.1, 0.0), UndefinedMetricError);

  // Per-seed aggregation differs from pooled division.
  const std::vector<double> a{0.04, 0.06}, b{0.004, 0.008};
  const auto per_seed = seed_mean_pct_delta(a, b);
  CHECK(per_seed.mean == Approx((900.0 + 650.0) / 2));
  CHECK(per_seed.mean != Approx(pct_delta_over_base(0.05, 0.006)));
  CHECK(seed_mean_ratio(a, b).mean == Approx((10.0 + 7.5) / 2));
}

TEST_CASE("seed summaries") {
  const std::vector<double> v{1.0, 2.0, 6.0};
  const auto s = summarize_seeds(v);
  CHECK(s.mean == 3.0);
  CHECK(s.se == Approx(std::sqrt(7.0) / std::sqrt(3.0)));
  CHECK(summarize_seeds(std::vector<double>{4.0}).se == 0.0);
}

TEST_CASE("Spearman rank correlation") {
  CHECK(spearman_rank_corr(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}).r == Approx(-1.0));
  CHECK(spearman_rank_corr(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 8, 27, 64}).r == Approx(1.0));
  const auto c = spearman_rank_corr(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4});
  CHECK(c.r == Approx(0.8));

  // p through the incomplete-beta identity for the t distribution.
  const double df = 2, t = 0.8 * std::sqrt(df / (1 - 0.64));
  CHECK(c.p_value == Approx(boost::math::ibeta(df / 2, 0.5, df / (df + t * t))).epsilon(1e-10));

  // Ties receive average ranks.
  const auto r = average_ranks(std::vector<double>{10, 20, 20, 30});
  CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});

  CHECK_THROWS_AS(spearman_rank_corr(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}),
                  UndefinedMetricError);
  CHECK_THROWS_AS(spearman_rank_corr(std::vector<double>{1, 2}, std::vector<double>{1, 2}),
                  UndefinedMetricError);
}

TEST_CASE("metrics report carries every metric with intervals and nulls") {
  std::mt19937_64 gen(19);
  const auto s = random_set(gen, 300, 1000, 0.05);
  ResamplingConfig cfg;
  cfg.n_resamples = 200;
  cfg.n_permutations = 300;
  const auto rep = compute_metrics_report(s, cfg);
  CHECK(rep.values.size() == 6);
  CHECK(rep.ci.size() == 6);
  CHECK(rep.permutation.size() == 6);
  CHECK(rep.value(Metric::auprc) == Approx(auprc(s)));
  CHECK(rep.value(Metric::mcc) >= -1.0);
  CHECK(rep.value(Metric::mcc) <= 1.0);
  const auto j = rep.to_json();
  CHECK(j["metrics"]["auprc"]["permutation"]["p_value"].get<double>() > 0.0);
  CHECK(j["metrics"]["f1_macro"].contains("ci"));
  CHECK(MetricsReport::csv_columns().size() == rep.csv_values().size());

  CHECK_THROWS_AS(ScoredSet({0.1, 0.2}, {1}), DimensionError);
  CHECK_THROWS_AS(ScoredSet({0.1}, {2}), ValidationError);
  CHECK_THROWS_AS(ScoredSet({std::nan("")}, {1}), ValidationError);
}
