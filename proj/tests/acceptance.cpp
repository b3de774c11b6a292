// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neurokws/harness/commands.hpp"
#include "support.hpp"

using namespace nkws;
using namespace nkws::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path work_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nkws-acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path source_path(const std::string& rel) { return fs::path(NKWS_SOURCE_DIR) / rel; }

CommandContext context(const std::vector<std::string>& overrides, std::ostream& log) {
  CommandContext ctx;
  ctx.cfg = load_run_config(source_path("configs/default.json"), overrides);
  ctx.log = &log;
  return ctx;
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

// Average precision by enumeration: each positive contributes the precision
// of the cut at its own score (all tied items included).
double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++pos;
    std::size_t tp = 0, k = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) ++k, tp += static_cast<std::size_t>(y[j]);
    total += static_cast<double>(tp) / static_cast<double>(k);
  }
  return total / static_cast<double>(pos);
}

double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

Outcome criterion_metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + gen() % 11;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores on half the trials so ties are common.
      s[i] = trial % 2 ? static_cast<double>(gen() % 4) / 4.0 : std::uniform_real_distribution<double>()(gen);
      y[i] = static_cast<int>(gen() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    const ScoredSet set(s, y);
    worst = std::max({worst, std::abs(auprc(set) - brute_ap(s, y)), std::abs(auroc(set) - brute_auroc(s, y))});
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 5.0,
          "200 sets, max |error| " + fmt("%.3g", worst) + ", " + fmt("%.3f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Published-statistics fixtures

Outcome criterion_fixtures() {
  const auto t1 = read_json(source_path("data/fixtures/table1_model_performance.json"));
  const auto& off = t1["offset_improvement"];
  const double se = se_from_ci(off["ci_lo"].get<double>(), off["ci_hi"].get<double>());
  const bool a = std::abs(se - off["se"].get<double>()) <= 2e-4;

  double model = 0, base = 0;
  for (const auto& m : t1["metrics"])
    if (m["metric"] == "auprc") model = m["model"].get<double>(), base = m["baseline"].get<double>();
  const double ratio = model / base;
  const bool b = std::abs(ratio - t1["reported_ratio_auprc_over_baseline"].get<double>()) <= 0.1;

  const auto fixture = load_operating_fixture(source_path("data/fixtures/table4_operating_points.json"));
  const std::vector<double> budgets{2.0, 0.5};
  const auto table = operating_table(fixture, {assistive_scenario()}, 0.10, budgets);
  const auto* mean = table.find("assistive", "mean");
  const double fa = mean->values[table.column("fa_per_hour_at_target")];
  const double r2 = mean->values[table.column("recall_at_budget_2")];
  const double r05 = mean->values[table.column("recall_at_budget_0.5")];
  const bool c = std::abs(fa - 2.194) <= 1e-3 && std::abs(r2 - 0.139) <= 1e-12 && std::abs(r05 - 0.083) <= 1e-12;

  std::ostringstream d;
  d << "SE from CI " << fmt("%.5f", se) << ", AUPRC ratio " << fmt("%.2f", ratio) << ", FA/h at R=0.10 "
    << fmt("%.4f", fa) << ", recall at budgets " << fmt("%.4f", r2) << "/" << fmt("%.4f", r05);
  return {a && b && c, d.str()};
}

// ---------------------------------------------------------------------------
// 3. FA/h identities

Outcome criterion_fa_identities() {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t sum_exact = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double p = 1.0 - u(gen), r = u(gen), lambda = 0.1 + 20 * u(gen), k = 1.0 + 9 * u(gen);
    const auto a = translate(p, r, {"a", lambda});
    const auto b = translate(p, r, {"b", k * lambda});
    sum_exact += a.detections_per_hour + a.misses_per_hour == lambda;
    worst = std::max({worst, std::abs(b.fa_per_hour - k * a.fa_per_hour) / std::max(1.0, a.fa_per_hour),
                      std::abs(b.misses_per_hour - k * a.misses_per_hour) / std::max(1.0, a.misses_per_hour),
                      std::abs(b.detections_per_hour - k * a.detections_per_hour) / std::max(1.0, a.detections_per_hour)});
  }
  return {sum_exact == 1000 && worst <= 1e-12,
          std::to_string(sum_exact) + "/1000 exact sums, max linearity error " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 4. Gradients

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t skipped = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = testing::model_gradient_check(seed, 4, 32, 4, Pooling::attention, 1e-4);
    worst = std::max(worst, r.relative_error);
    skipped += r.skipped;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, "20 instances, max relative error " + fmt("%.3g", worst) + ", " +
                                           std::to_string(skipped) + " kink coordinates skipped, " +
                                           fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 5. Permutation null

// Asymptotic Kolmogorov distribution tail with the usual small-sample
// correction of the statistic.
double ks_uniform_pvalue(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1) / n - x[i], x[i] - static_cast<double>(i) / n});
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

ScoredSet random_scored_set(std::size_t n, std::size_t positives, std::uint64_t seed) {
  CounterRng rng(seed, {hash_tag("acceptance-null")});
  std::vector<double> s(n);
  std::vector<int> y(n, 0);
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  rng.shuffle(std::span<int>(y));
  for (auto& v : s) v = rng.uniform();
  return ScoredSet(s, y);
}

Outcome criterion_permutation_null() {
  const std::size_t n = 4660, pos = 24;
  const double base = static_cast<double>(pos) / static_cast<double>(n);
  ResamplingConfig cfg;
  cfg.n_permutations = 10000;
  cfg.seed = 5;
  const auto full = permutation_pvalue(random_scored_set(n, pos, 0), Metric::auprc, cfg);
  const double rel = std::abs(full.null_mean - base) / base;

  std::vector<double> ps;
  cfg.n_permutations = 199;
  for (std::uint64_t rep = 1; rep <= 200; ++rep) {
    cfg.seed = 1000 + rep;
    ps.push_back(permutation_pvalue(random_scored_set(n, pos, rep), Metric::auprc, cfg).p_value);
  }
  const double ks_p = ks_uniform_pvalue(ps);

  // Exact expectation of step-function AP under a uniformly random ranking:
  // a positive at rank r has (P-1)(r-1)/(N-1) other positives above it.
  double harmonic = 0.0;
  for (std::size_t r = 1; r <= n; ++r) harmonic += 1.0 / static_cast<double>(r);
  const double inv_rank = harmonic / static_cast<double>(n);
  const double expected = inv_rank + static_cast<double>(pos - 1) / static_cast<double>(n - 1) * (1.0 - inv_rank);

  return {rel <= 0.10 && ks_p > 0.01,
          "base rate " + fmt("%.5f", base) + ", null mean " + fmt("%.5f", full.null_mean) + " (" +
              fmt("%.1f", 100 * rel) + "% off; exact random-ranking E[AP] " + fmt("%.5f", expected) +
              "), KS p " + fmt("%.3f", ks_p) + " over 200 repeats"};
}

// ---------------------------------------------------------------------------
// 6. End-to-end synthetic learning

// Training caps for the desk-scale runs below.
const std::vector<std::string> kE2eTraining{"training.max_epochs=8", "training.patience=3"};

Outcome criterion_end_to_end(const fs::path& corpus_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = work_dir("e2e");
  std::ostringstream log;
  auto overrides = kE2eTraining;
  overrides.push_back("corpus.path=" + corpus_dir.string());
  overrides.push_back("output_dir=" + (dir / "run").string());
  auto ctx = context(overrides, log);
  const auto& sc = ctx.cfg.synth;
  const bool default_corpus = sc.n_sessions >= 8 && sc.session_minutes >= 10.0 && sc.snr == 1.0;
  cmd_synth(ctx);
  cmd_train(ctx);
  const auto eval = cmd_evaluate(ctx);

  std::vector<double> auprcs;
  double base = 0.0, p_max = 0.0;
  for (const auto& s : eval["per_seed"]) {
    auprcs.push_back(s["metrics"]["auprc"]["value"].get<double>());
    base = s["base_rate"].get<double>();
    p_max = std::max(p_max, s["metrics"]["auprc"]["permutation"]["p_value"].get<double>());
  }
  const double mean = summarize_seeds(auprcs).mean;

  // Control: same pipeline on a signal-free corpus.
  auto null_overrides = kE2eTraining;
  null_overrides.push_back("corpus.path=" + (dir / "corpus-null").string());
  null_overrides.push_back("output_dir=" + (dir / "null").string());
  null_overrides.push_back("corpus.synth.snr=0");
  null_overrides.push_back("seeds=[1]");
  auto null_ctx = context(null_overrides, log);
  cmd_synth(null_ctx);
  cmd_train(null_ctx);
  const auto null_eval = cmd_evaluate(null_ctx);
  const auto& na = null_eval["per_seed"][0]["metrics"]["auprc"];
  const double null_value = na["value"].get<double>();
  const double lo = na["permutation"]["null_lo"].get<double>(), hi = na["permutation"]["null_hi"].get<double>();
  const bool control_ok = null_value >= lo && null_value <= hi;

  const double secs = seconds_since(t0);
  const bool pass = default_corpus && base <= 0.02 && mean >= 10.0 * base && p_max < 0.01 && control_ok &&
                    secs <= 900.0;
  std::ostringstream d;
  d << "test base rate " << fmt("%.4f", base) << ", seed-mean AUPRC " << fmt("%.4f", mean) << " ("
    << fmt("%.1f", mean / base) << "x), max seed p " << fmt("%.2g", p_max) << "; snr=0 AUPRC "
    << fmt("%.4f", null_value) << " vs null band [" << fmt("%.4f", lo) << ", " << fmt("%.4f", hi) << "]; "
    << fmt("%.0f", secs) << " s";
  return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// 7. Scaling

Outcome criterion_scaling(const fs::path& corpus_dir) {
  const auto dir = work_dir("scaling");
  std::ostringstream log;
  auto overrides = kE2eTraining;
  overrides.push_back("corpus.path=" + corpus_dir.string());
  overrides.push_back("output_dir=" + dir.string());
  auto ctx = context(overrides, log);
  if (!fs::exists(corpus_dir / "manifest.json")) cmd_synth(ctx);
  const auto result = cmd_sweep_scaling(ctx, {0.1, 0.25, 0.5, 1.0});
  const auto table = read_sweep_csv(dir / "sweeps" / "scaling.csv");
  std::ostringstream d;
  d << "seed-mean AUPRC";
  for (const auto& cell : table.cells()) {
    const auto* m = table.find(cell, "mean");
    d << " " << fmt("%.2f", m->values[table.column("fraction")]) << ":"
      << fmt("%.3f", m->values[table.column("auprc")]);
  }
  const auto& sp = result["trend"]["spearman"];
  if (sp.is_null()) return {false, d.str() + "; Spearman undefined"};
  const double r = sp["r"].get<double>();
  d << "; Spearman r " << fmt("%.3f", r) << ", slope " << fmt("%.4f", result["trend"]["slope_per_log_fraction"].get<double>());
  return {r > 0.0, d.str()};
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = nkws::detail::read_file(e.path());
  return files;
}

Outcome criterion_determinism() {
  const auto dir = work_dir("determinism");
  std::ostringstream log;
  auto ctx = context({"corpus.path=" + (dir / "corpus").string(), "output_dir=" + (dir / "run").string(),
                      "corpus.synth.n_sessions=4", "corpus.synth.session_minutes=2", "corpus.synth.n_channels=8",
                      "corpus.synth.vocab_size=20", "corpus.synth.snr=2", "task.keywords=[\"to\"]",
                      "model.trunk_channels=6", "model.proj_channels=8", "sampler.batch_size=8",
                      "training.max_epochs=3", "training.patience=2", "training.max_steps_per_epoch=5",
                      "seeds=[1,2]"},
                     log);
  cmd_synth(ctx);
  cmd_train(ctx);
  auto first = snapshot(dir / "run" / "train");
  cmd_train(ctx);
  auto second = snapshot(dir / "run" / "train");
  std::size_t compared = 0, differing = 0;
  for (auto& [name, bytes] : first) {
    if (name.find("timing.json") != std::string::npos) continue;
    ++compared;
    differing += !second.contains(name) || second[name] != bytes;
  }

  // Corpus round-trip: generate, save, load, save again.
  const auto synth = generate_corpus(ctx.cfg.synth);
  save_corpus(dir / "rt-a", synth.corpus);
  const auto loaded = load_corpus(dir / "rt-a");
  save_corpus(dir / "rt-b", loaded);
  bool corpus_same = snapshot(dir / "rt-a") == snapshot(dir / "rt-b") && loaded.sessions.size() == synth.corpus.sessions.size();
  for (std::size_t i = 0; corpus_same && i < loaded.sessions.size(); ++i)
    corpus_same = loaded.sessions[i]->signal == synth.corpus.sessions[i]->signal &&
                  write_events_tsv(loaded.sessions[i]->events) == write_events_tsv(synth.corpus.sessions[i]->events);

  return {differing == 0 && compared > 0 && corpus_same,
          std::to_string(compared) + " training artifacts compared, " + std::to_string(differing) +
              " differ; corpus round-trip " + (corpus_same ? "bit-identical" : "differs")};
}

// ---------------------------------------------------------------------------
// 9. Pooling, loss and sampler properties

Outcome criterion_properties() {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double pool_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + trial % 16;
    std::vector<double> z(T), w(T);
    double s = 0;
    for (std::size_t t = 0; t < T; ++t) {
      z[t] = 10 * u(gen) - 5;
      s += w[t] = u(gen) + 1e-3;
    }
    for (auto& x : w) x /= s;
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> zp(T), wp(T);
    for (std::size_t t = 0; t < T; ++t) zp[t] = z[perm[t]], wp[t] = w[perm[t]];
    pool_err = std::max(pool_err, std::abs(pool(zp, wp, T)[0] - pool(z, w, T)[0]));
  }

  double focal_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 32;
    const double alpha = 0.05 + 0.9 * u(gen);
    std::vector<double> p(n);
    std::vector<int> y(n);
    double ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = 0.001 + 0.998 * u(gen);
      y[i] = static_cast<int>(gen() % 2);
      ce += y[i] ? -alpha * std::log(p[i]) : -(1 - alpha) * std::log(1 - p[i]);
    }
    focal_err = std::max(focal_err, std::abs(focal_loss(p, y, alpha, 0.0) - ce / static_cast<double>(n)));
  }

  std::size_t batches = 0, bad_batches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 30 + gen() % 500;
    std::vector<int> labels(n, 0);
    const std::size_t n_pos = 1 + gen() % (n / 5);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
    std::shuffle(labels.begin(), labels.end(), gen);
    SamplerConfig cfg;
    cfg.batch_size = 4 + gen() % 60;
    cfg.positive_fraction = 0.1 + 0.8 * u(gen);
    if (cfg.positives_per_batch() < 1 || cfg.positives_per_batch() >= cfg.batch_size) continue;
    BalancedBatchSampler sampler(labels, cfg, static_cast<std::uint64_t>(trial));
    for (const auto& b : sampler.epoch(static_cast<std::size_t>(trial % 3))) {
      ++batches;
      std::size_t pos = 0;
      bool labels_match = b.indices.size() == cfg.batch_size;
      for (std::size_t i = 0; i < b.indices.size(); ++i) {
        pos += static_cast<std::size_t>(labels[b.indices[i]]);
        labels_match = labels_match && labels[b.indices[i]] == b.labels[i];
      }
      bad_batches += !(labels_match && pos == cfg.positives_per_batch());
    }
  }

  return {pool_err <= 1e-12 && focal_err <= 1e-10 && bad_batches == 0 && batches > 0,
          "pool permutation error " + fmt("%.2g", pool_err) + ", focal/CE error " + fmt("%.2g", focal_err) + ", " +
              std::to_string(bad_batches) + "/" + std::to_string(batches) + " batches off composition"};
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  const auto corpus_dir = work_dir("corpus");
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", criterion_metric_oracles},
      {"published-statistics fixtures", criterion_fixtures},
      {"FA/h formula identities", criterion_fa_identities},
      {"gradient correctness", criterion_gradients},
      {"permutation null sanity", criterion_permutation_null},
      {"end-to-end synthetic learning", [&] { return criterion_end_to_end(corpus_dir); }},
      {"scaling property", [&] { return criterion_scaling(corpus_dir); }},
      {"determinism", criterion_determinism},
      {"pooling, loss and sampler invariants", criterion_properties},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << "\n";
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << "\n";
  return failures ? 1 : 0;
}
