#pragma once

// Sweep tables: one row per (cell, seed) plus derived mean/se rows per cell,
// all numbers written with %.17g so aggregates can be recomputed exactly
// from the per-seed rows of a saved file.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "neurokws/corpus.hpp"
#include "neurokws/error.hpp"
#include "neurokws/metrics.hpp"
#include "neurokws/random.hpp"

namespace nkws::harness {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SweepRow {
  std::string cell;
  std::string seed;  // a seed number, or "mean" / "se" on aggregate rows
  bool feasible = true;
  std::vector<double> values;
};

struct SweepTable {
  std::vector<std::string> columns;  // value column names
  std::vector<SweepRow> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ValidationError("sweep table has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::vector<SweepRow> seed_rows() const {
    std::vector<SweepRow> out;
    for (const auto& r : rows)
      if (r.seed != "mean" && r.seed != "se") out.push_back(r);
    return out;
  }

  std::vector<std::string> cells() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (std::find(out.begin(), out.end(), r.cell) == out.end()) out.push_back(r.cell);
    return out;
  }

  const SweepRow* find(const std::string& cell, const std::string& seed) const {
    for (const auto& r : rows)
      if (r.cell == cell && r.seed == seed) return &r;
    return nullptr;
  }
};

// Mean and SE rows per cell over the feasible seed rows, in first-seen cell
// order. A cell without feasible seeds gets NaN aggregates and feasible = 0.
inline std::vector<SweepRow> aggregate_rows(const std::vector<std::string>& columns,
                                            const std::vector<SweepRow>& seed_rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SweepRow*>> by_cell;
  for (const auto& r : seed_rows) {
    if (r.values.size() != columns.size()) throw DimensionError("sweep row width does not match its columns");
    if (!by_cell.contains(r.cell)) order.push_back(r.cell);
    by_cell[r.cell].push_back(&r);
  }
  std::vector<SweepRow> out;
  for (const auto& cell : order) {
    std::vector<const SweepRow*> ok;
    for (const auto* r : by_cell[cell])
      if (r->feasible) ok.push_back(r);
    SweepRow mean{cell, "mean", !ok.empty(), std::vector<double>(columns.size(), kNaN)};
    SweepRow se{cell, "se", !ok.empty(), std::vector<double>(columns.size(), kNaN)};
    for (std::size_t c = 0; c < columns.size() && !ok.empty(); ++c) {
      std::vector<double> xs;
      for (const auto* r : ok) xs.push_back(r->values[c]);
      const auto s = summarize_seeds(xs);
      mean.values[c] = s.mean;
      se.values[c] = s.se;
    }
    out.push_back(std::move(mean));
    out.push_back(std::move(se));
  }
  return out;
}

inline SweepTable make_table(std::vector<std::string> columns, std::vector<SweepRow> seed_rows) {
  SweepTable t;
  t.columns = std::move(columns);
  auto agg = aggregate_rows(t.columns, seed_rows);
  t.rows = std::move(seed_rows);
  t.rows.insert(t.rows.end(), agg.begin(), agg.end());
  return t;
}

inline std::string format_cell_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sweep_csv(const SweepTable& t) {
  std::ostringstream out;
  out << "cell,seed,feasible";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n';
  for (const auto& r : t.rows) {
    out << r.cell << ',' << r.seed << ',' << (r.feasible ? 1 : 0);
    for (double v : r.values) out << ',' << format_cell_value(v);
    out << '\n';
  }
  return out.str();
}

inline void write_sweep_csv(const std::filesystem::path& path, const SweepTable& t) {
  for (const auto& r : t.rows)
    if (r.cell.find(',') != std::string::npos) throw ValidationError("sweep cell labels cannot contain commas");
  nkws::detail::write_file(path, sweep_csv(t));
}

inline SweepTable read_sweep_csv(const std::filesystem::path& path) {
  std::istringstream in(nkws::detail::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty sweep file " + path.string(), 1);
  const auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
  };
  auto header = split(line);
  if (header.size() < 3 || header[0] != "cell" || header[1] != "seed" || header[2] != "feasible")
    throw ParseError("sweep header must start with cell,seed,feasible", 1);
  SweepTable t;
  t.columns.assign(header.begin() + 3, header.end());
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw ParseError("wrong number of fields", n);
    SweepRow r{f[0], f[1], f[2] == "1", {}};
    for (std::size_t i = 3; i < f.size(); ++i)
      r.values.push_back(f[i] == "nan" ? kNaN : nkws::detail::parse_double(f[i], t.columns[i - 3], n));
    t.rows.push_back(std::move(r));
  }
  return t;
}

// Rebuilds the aggregate rows from the per-seed rows of a table.
inline SweepTable reaggregate(const SweepTable& t) { return make_table(t.columns, t.seed_rows()); }

// Paired improvement of a set of cells over a baseline cell, per seed:
// d_s = mean over the non-baseline cells of (value[cell, s] - value[base, s]).
struct PairedImprovement {
  bool defined = false;
  std::string reason;
  std::size_t n_seeds = 0;
  std::size_t n_cells = 0;
  double mean = kNaN;
  double se = kNaN;
  double ci_lo = kNaN, ci_hi = kNaN;  // mean +/- 1.96 se
  double t_p_value = kNaN;            // one-sided, Student t with n-1 df
  std::size_t positive_seeds = 0;
  double sign_p_value = kNaN;         // one-sided binomial sign test
  std::vector<double> per_seed;

  nlohmann::json to_json() const {
    const auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    return {{"defined", defined},     {"reason", reason},
            {"n_seeds", n_seeds},     {"n_cells", n_cells},
            {"mean", num(mean)},      {"se", num(se)},
            {"ci_lo", num(ci_lo)},    {"ci_hi", num(ci_hi)},
            {"t_p_value", num(t_p_value)}, {"positive_seeds", positive_seeds},
            {"sign_p_value", num(sign_p_value)}, {"per_seed", per_seed}};
  }
};

// values[cell][seed]; every cell must have the same number of seeds.
inline PairedImprovement paired_improvement(const std::map<std::string, std::vector<double>>& values,
                                            const std::string& baseline) {
  PairedImprovement r;
  const auto base = values.find(baseline);
  if (base == values.end()) {
    r.reason = "baseline cell '" + baseline + "' is not in the grid";
    return r;
  }
  r.n_cells = values.size() - 1;
  if (r.n_cells == 0) {
    r.reason = "the grid contains only the baseline cell";
    return r;
  }
  r.n_seeds = base->second.size();
  if (r.n_seeds == 0) {
    r.reason = "no seeds";
    return r;
  }
  for (const auto& [cell, v] : values)
    if (v.size() != r.n_seeds) throw DimensionError("cell '" + cell + "' has a different number of seeds");
  r.per_seed.assign(r.n_seeds, 0.0);
  for (std::size_t s = 0; s < r.n_seeds; ++s) {
    double acc = 0.0;
    for (const auto& [cell, v] : values)
      if (cell != baseline) acc += v[s] - base->second[s];
    r.per_seed[s] = acc / static_cast<double>(r.n_cells);
    r.positive_seeds += r.per_seed[s] > 0.0;
  }
  const auto summary = summarize_seeds(r.per_seed);
  r.defined = true;
  r.mean = summary.mean;
  r.se = summary.se;
  if (r.n_seeds >= 2) {
    r.ci_lo = r.mean - 1.96 * r.se;
    r.ci_hi = r.mean + 1.96 * r.se;
    if (r.se > 0.0) {
      const boost::math::students_t dist(static_cast<double>(r.n_seeds - 1));
      r.t_p_value = boost::math::cdf(boost::math::complement(dist, r.mean / r.se));
    }
  }
  // P(X >= k) for X ~ Binomial(n, 1/2).
  double tail = 0.0;
  for (std::size_t k = r.positive_seeds; k <= r.n_seeds; ++k) {
    double c = 1.0;
    for (std::size_t j = 0; j < k; ++j) c = c * static_cast<double>(r.n_seeds - j) / static_cast<double>(j + 1);
    tail += c;
  }
  r.sign_p_value = tail / std::pow(2.0, static_cast<double>(r.n_seeds));
  return r;
}

// Least-squares slope of y on ln(x) together with the Spearman correlation.
struct ScalingTrend {
  double slope = kNaN;
  double intercept = kNaN;
  std::optional<Correlation> spearman;
  std::string note;

  nlohmann::json to_json() const {
    nlohmann::json j{{"slope_per_log_fraction", std::isnan(slope) ? nlohmann::json(nullptr) : nlohmann::json(slope)},
                     {"intercept", std::isnan(intercept) ? nlohmann::json(nullptr) : nlohmann::json(intercept)},
                     {"note", note}};
    if (spearman) j["spearman"] = {{"r", spearman->r}, {"p_value", spearman->p_value}, {"n", spearman->n}};
    else j["spearman"] = nullptr;
    return j;
  }
};

inline ScalingTrend scaling_trend(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("scaling trend inputs differ in length");
  ScalingTrend t;
  std::vector<double> lx;
  for (double v : x) {
    if (!(v > 0.0)) throw ValidationError("scaling fractions must be > 0");
    lx.push_back(std::log(v));
  }
  if (x.size() >= 2) {
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (y[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx > 0.0) {
      t.slope = sxy / sxx;
      t.intercept = my - t.slope * mx;
    }
  }
  try {
    t.spearman = spearman_rank_corr(x, y);
  } catch (const Error& e) {
    t.note = e.what();
  }
  return t;
}

// Nested training subsets for the scaling sweep: the training sessions are
// shuffled once (keyed by seed), and a fraction f takes the shortest prefix
// whose hours are closest to f times the total, ties to the longer prefix.
struct ScalingSubset {
  double fraction = 0.0;
  std::vector<std::string> sessions;
  double hours = 0.0;
};

inline std::vector<ScalingSubset> scaling_subsets(const Corpus& corpus, std::vector<std::string> train_ids,
                                                  std::span<const double> fractions, std::uint64_t seed) {
  if (train_ids.empty()) throw ValidationError("scaling sweep needs training sessions");
  std::sort(train_ids.begin(), train_ids.end());
  CounterRng rng(seed, {hash_tag("scaling-order")});
  rng.shuffle(std::span<std::string>(train_ids));
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& id : train_ids) cum.push_back(total += corpus.find(id)->duration_s() / 3600.0);
  std::vector<ScalingSubset> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("scaling fractions must be in (0, 1]");
    const double want = f * total;
    std::size_t best = 0;
    const double tie = 1e-9 * total;
    for (std::size_t k = 1; k < cum.size(); ++k)
      if (std::abs(cum[k] - want) <= std::abs(cum[best] - want) + tie) best = k;
    ScalingSubset s;
    s.fraction = f;
    s.sessions.assign(train_ids.begin(), train_ids.begin() + static_cast<std::ptrdiff_t>(best + 1));
    s.hours = cum[best];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace nkws::harness
