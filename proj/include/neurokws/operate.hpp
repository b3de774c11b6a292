#pragma once

// Scenario translation of precision/recall into hourly rates, threshold
// selection on PR curves and empirical false positives per labelled hour.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurokws/error.hpp"
#include "neurokws/metrics.hpp"

namespace nkws {

struct Scenario {
  std::string name;
  double lambda_per_hour = 0.0;

  void validate() const {
    if (!(lambda_per_hour > 0.0)) throw ValidationError("scenario '" + name + "': lambda_per_hour must be > 0");
  }
};

inline Scenario assistive_scenario() { return {"assistive", 2.0}; }
inline Scenario hands_free_scenario() { return {"hands_free", 10.0}; }

struct HourlyRates {
  double fa_per_hour = 0.0;
  double misses_per_hour = 0.0;
  double detections_per_hour = 0.0;
};

// FA/h = R λ (1/P - 1), misses/h = λ (1 - R), detections/h = λ R.
inline HourlyRates translate(double precision, double recall, const Scenario& scenario) {
  scenario.validate();
  if (!(precision > 0.0)) throw UndefinedMetricError("false-alarm rate is undefined at precision 0");
  if (precision > 1.0 || recall < 0.0 || recall > 1.0)
    throw ValidationError("precision must be in (0, 1] and recall in [0, 1]");
  const double lambda = scenario.lambda_per_hour;
  // Both subtractions are exact (Sterbenz), so detections + misses == lambda
  // bit for bit; detections is within one ulp of lambda * recall.
  const double misses = lambda - lambda * recall;
  return {recall * lambda * (1.0 / precision - 1.0), misses, lambda - misses};
}

struct OperatingPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  Scenario scenario;
  HourlyRates rates;
  bool feasible = true;

  nlohmann::json to_json() const {
    return {{"threshold", threshold},
            {"precision", precision},
            {"recall", recall},
            {"scenario", scenario.name},
            {"lambda_per_hour", scenario.lambda_per_hour},
            {"fa_per_hour", rates.fa_per_hour},
            {"misses_per_hour", rates.misses_per_hour},
            {"detections_per_hour", rates.detections_per_hour},
            {"feasible", feasible}};
  }
};

namespace detail {

// A translated curve point plus its FA/h at unit lambda; selections compare
// the unit value so the chosen point never depends on the scenario rate.
struct Candidate {
  OperatingPoint point;
  double unit_fa = 0.0;
};

// Curve points with precision 0 raise alarms but no detections; FA/h is not
// expressible through R and P there, so they are not candidates.
inline std::vector<Candidate> translate_curve(std::span<const PrPoint> curve, const Scenario& scenario) {
  if (curve.empty()) throw ValidationError("operating-point selection needs a non-empty curve");
  const Scenario unit{scenario.name, 1.0};
  std::vector<Candidate> out;
  for (const auto& p : curve) {
    if (!(p.precision > 0.0)) continue;
    out.push_back({{p.threshold, p.precision, p.recall, scenario, translate(p.precision, p.recall, scenario), true},
                   translate(p.precision, p.recall, unit).fa_per_hour});
  }
  if (out.empty()) throw UndefinedMetricError("no curve point has positive precision");
  return out;
}

}  // namespace detail

// Highest recall with FA/h <= budget; ties prefer higher precision, then the
// higher threshold. With no point under budget, the minimal-FA/h point is
// returned flagged infeasible.
inline OperatingPoint select_threshold_max_recall(std::span<const PrPoint> curve, const Scenario& scenario,
                                                  double fa_budget) {
  const auto points = detail::translate_curve(curve, scenario);
  const OperatingPoint* best = nullptr;
  for (const auto& c : points) {
    const auto& p = c.point;
    if (p.rates.fa_per_hour > fa_budget) continue;
    if (!best || p.recall > best->recall ||
        (p.recall == best->recall &&
         (p.precision > best->precision || (p.precision == best->precision && p.threshold > best->threshold))))
      best = &p;
  }
  if (best) return *best;
  const detail::Candidate* fallback = &points.front();
  for (const auto& c : points)
    if (c.unit_fa < fallback->unit_fa || (c.unit_fa == fallback->unit_fa && c.point.threshold > fallback->point.threshold))
      fallback = &c;
  OperatingPoint out = fallback->point;
  out.feasible = false;
  return out;
}

// Lowest FA/h with recall >= target; ties prefer the higher threshold. With
// no point reaching the target, the maximal-recall point is returned flagged
// infeasible.
inline OperatingPoint select_threshold_min_fa(std::span<const PrPoint> curve, const Scenario& scenario,
                                              double target_recall) {
  const auto points = detail::translate_curve(curve, scenario);
  const detail::Candidate* best = nullptr;
  for (const auto& c : points) {
    if (c.point.recall < target_recall) continue;
    if (!best || c.unit_fa < best->unit_fa || (c.unit_fa == best->unit_fa && c.point.threshold > best->point.threshold))
      best = &c;
  }
  if (best) return best->point;
  const detail::Candidate* fallback = &points.front();
  for (const auto& c : points)
    if (c.point.recall > fallback->point.recall ||
        (c.point.recall == fallback->point.recall && c.unit_fa < fallback->unit_fa))
      fallback = &c;
  OperatingPoint out = fallback->point;
  out.feasible = false;
  return out;
}

// Hours of labelled coverage: n windows of window_s seconds each.
inline double coverage_hours(std::size_t n_windows, double window_s) {
  if (!(window_s > 0.0)) throw ValidationError("window_s must be > 0");
  return static_cast<double>(n_windows) * window_s / 3600.0;
}

inline double empirical_fp_per_hour(std::span<const double> scores, std::span<const int> labels,
                                    double threshold, double window_s) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  const double hours = coverage_hours(scores.size(), window_s);
  if (scores.empty()) return 0.0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) fp += labels[i] == 0 && scores[i] >= threshold;
  return static_cast<double>(fp) / hours;
}

struct FaRecallPoint {
  double fa_per_hour = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

// Translated points sorted by FA/h; only points that raise the best recall
// seen so far are kept, so the output is the upper envelope with recall
// strictly increasing in FA/h.
inline std::vector<FaRecallPoint> recall_vs_fa_curve(std::span<const PrPoint> curve, const Scenario& scenario) {
  auto points = detail::translate_curve(curve, scenario);
  std::stable_sort(points.begin(), points.end(), [](const detail::Candidate& a, const detail::Candidate& b) {
    if (a.unit_fa != b.unit_fa) return a.unit_fa < b.unit_fa;
    return a.point.recall > b.point.recall;
  });
  std::vector<FaRecallPoint> out;
  for (const auto& c : points)
    if (out.empty() || c.point.recall > out.back().recall)
      out.push_back({c.point.rates.fa_per_hour, c.point.recall, c.point.threshold});
  return out;
}

inline void write_recall_vs_fa_csv(const std::filesystem::path& path, std::span<const FaRecallPoint> points) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "fa_per_hour,recall,threshold\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.fa_per_hour, p.recall, p.threshold);
    out << buf;
  }
  if (!out) throw Error("cannot write " + path.string());
}

// The operating-point roster for one scenario: FA/h at a target recall,
// recall under each FA/h budget and empirical FP/h at the same threshold as
// the target-recall point.
struct OperatingReport {
  Scenario scenario;
  double target_recall = 0.10;
  OperatingPoint at_target;
  std::vector<std::pair<double, OperatingPoint>> at_budget;
  std::optional<double> empirical_fp_per_hour;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["scenario"] = scenario.name;
    j["lambda_per_hour"] = scenario.lambda_per_hour;
    j["target_recall"] = target_recall;
    j["at_target_recall"] = at_target.to_json();
    auto& b = j["at_budget"];
    b = nlohmann::json::array();
    for (const auto& [budget, p] : at_budget) {
      auto e = p.to_json();
      e["fa_budget"] = budget;
      b.push_back(e);
    }
    if (empirical_fp_per_hour) j["empirical_fp_per_hour"] = *empirical_fp_per_hour;
    else j["empirical_fp_per_hour"] = nullptr;
    return j;
  }
};

inline OperatingReport operating_report(std::span<const PrPoint> curve, const Scenario& scenario,
                                        double target_recall, std::span<const double> budgets) {
  OperatingReport r;
  r.scenario = scenario;
  r.target_recall = target_recall;
  r.at_target = select_threshold_min_fa(curve, scenario, target_recall);
  for (double b : budgets) r.at_budget.emplace_back(b, select_threshold_max_recall(curve, scenario, b));
  return r;
}

// Same roster from scores, adding empirical FP/h at the target-recall threshold.
inline OperatingReport operating_report(const ScoredSet& set, const Scenario& scenario, double target_recall,
                                        std::span<const double> budgets, double window_s) {
  auto r = operating_report(pr_curve(set), scenario, target_recall, budgets);
  r.empirical_fp_per_hour = empirical_fp_per_hour(set.scores, set.labels, r.at_target.threshold, window_s);
  return r;
}

}  // namespace nkws
