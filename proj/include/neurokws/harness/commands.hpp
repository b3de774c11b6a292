#pragma once

// The experiment commands behind the nkws CLI. Every command reads a
// RunConfig, writes its outputs under output_dir and returns the JSON it
// wrote as its main report; each report carries a provenance block.
//
// Layout under output_dir:
//   train/seed-S/{checkpoint.*, train_report.json, timing.json}, train/summary.json
//   evaluate/seed-S/{scores_<partition>.csv, metrics.json}, evaluate/{metrics.csv, summary.json}
//   sweeps/{scaling,offsets,keywords}.{csv,json}, sweeps/*/... per-cell checkpoints
//   operating/{operating_points.csv, operating_points.json, recall_vs_fa_*.csv}
//   report/{report.json, report.md, *.svg}

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurokws/corpus.hpp"
#include "neurokws/error.hpp"
#include "neurokws/harness/config.hpp"
#include "neurokws/harness/svg.hpp"
#include "neurokws/harness/sweep.hpp"
#include "neurokws/metrics.hpp"
#include "neurokws/operate.hpp"
#include "neurokws/synthgen.hpp"
#include "neurokws/training.hpp"

namespace nkws::harness {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommandContext {
  RunConfig cfg;
  std::ostream* log = &std::cerr;
  bool verbose = false;

  std::ostream& out() const { return *log; }
};

// ---------------------------------------------------------------------------
// Shared plumbing

inline void write_json(const fs::path& path, const json& j) {
  nkws::detail::write_file(path, j.dump(2) + "\n");
}

inline json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing file " + path.string());
  return json::parse(nkws::detail::read_file(path));
}

inline json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline Corpus load_configured_corpus(const RunConfig& cfg) {
  const auto manifest = fs::is_directory(cfg.corpus_path) ? cfg.corpus_path / "manifest.json" : cfg.corpus_path;
  if (!fs::exists(manifest))
    throw ValidationError("config field 'corpus.path': no corpus at " + cfg.corpus_path.string());
  return load_corpus(cfg.corpus_path);
}

inline json provenance(const RunConfig& cfg, const Corpus* corpus, const std::string& command) {
  json p{{"command", command}, {"config_hash", cfg.hash()}, {"seeds", cfg.seeds}};
  if (corpus) {
    p["corpus_path"] = cfg.corpus_path.string();
    p["corpus_checksums"] = corpus->checksums();
  }
  return p;
}

inline fs::path train_dir(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir / "train" / ("seed-" + std::to_string(seed));
}
inline fs::path checkpoint_base(const RunConfig& cfg, std::uint64_t seed) {
  return train_dir(cfg, seed) / "checkpoint";
}
inline fs::path evaluate_dir(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir / "evaluate" / ("seed-" + std::to_string(seed));
}

inline const WindowSet& partition_windows(const PreparedTask& task, const std::string& partition) {
  if (partition == "test") return task.test;
  if (partition == "validation") return task.validation;
  if (partition == "train") return task.train;
  throw ValidationError("unknown partition '" + partition + "'");
}

inline std::string cell_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// One trained-and-scored cell of a sweep.
struct CellRun {
  TrainReport report;
  MetricsReport metrics;
  ScoredSet test;
};

inline CellRun train_and_score(const CommandContext& ctx, const PreparedTask& task, std::uint64_t seed,
                               const fs::path& dir, bool with_resampling) {
  const auto& cfg = ctx.cfg;
  CellRun run;
  run.report = train(cfg.train_inputs(task.n_channels, seed), task, dir / "checkpoint", ctx.verbose);
  write_json(dir / "train_report.json", run.report.to_json(false));
  auto det = load_detector(dir / "checkpoint");
  const auto rows = evaluate(det, partition_windows(task, cfg.evaluation.partition).examples,
                             cfg.training.eval_batch_size);
  if (rows.empty()) throw InfeasibleError("evaluation partition has no windows");
  write_scores_csv(dir / ("scores_" + cfg.evaluation.partition + ".csv"), rows);
  run.test = to_scored_set(rows);
  auto rc = cfg.evaluation.resampling();
  if (!with_resampling) rc.n_resamples = 0;
  run.metrics = compute_metrics_report(run.test, rc);
  return run;
}

// ---------------------------------------------------------------------------
// synth

inline json cmd_synth(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto synth = generate_corpus(cfg.synth);
  auto corpus = synth.corpus;
  corpus.metadata["synth_config_hash"] = cfg.hash();
  save_corpus(cfg.corpus_path, corpus);
  double hours = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : corpus.sessions) {
    hours += s->duration_s() / 3600.0;
    tokens += s->events.size();
  }
  json summary{{"provenance", provenance(cfg, &corpus, "synth")},
               {"corpus_path", cfg.corpus_path.string()},
               {"n_sessions", corpus.sessions.size()},
               {"hours", hours},
               {"word_events", tokens},
               {"validation_session", corpus.default_split.validation},
               {"test_session", corpus.default_split.test}};
  ctx.out() << "wrote " << corpus.sessions.size() << " sessions (" << hours << " h, " << tokens
            << " word events) to " << cfg.corpus_path.string() << "\n";
  for (const auto& [id, sum] : corpus.checksums()) ctx.out() << "  " << id << "  " << sum << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// train

inline json cmd_train(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto corpus = load_configured_corpus(cfg);
  const auto task = prepare_task(corpus, cfg.task);
  ctx.out() << "task " << *cfg.task.keywords.begin() << (cfg.task.keywords.size() > 1 ? ",..." : "")
            << ": train " << task.train.examples.size() << " windows (" << task.train.positives()
            << " positive), validation " << task.validation.examples.size() << " ("
            << task.validation.positives() << "), test " << task.test.examples.size() << " ("
            << task.test.positives() << "), window " << task.spec.window_s << " s\n";
  json runs = json::array();
  for (const auto seed : cfg.seeds) {
    const auto dir = train_dir(cfg, seed);
    fs::create_directories(dir);
    const auto report = train(cfg.train_inputs(task.n_channels, seed), task, dir / "checkpoint", ctx.verbose);
    write_json(dir / "train_report.json", report.to_json(false));
    json timing{{"wall_clock_seconds", report.wall_clock_seconds}, {"epoch_seconds", json::array()}};
    for (const auto& e : report.epochs) timing["epoch_seconds"].push_back(e.seconds);
    write_json(dir / "timing.json", timing);
    ctx.out() << "seed " << seed << ": best validation AUPRC " << report.best_val_auprc << " at epoch "
              << report.best_epoch << " (" << report.epochs.size() << " epochs, "
              << report.wall_clock_seconds << " s)\n";
    runs.push_back(report.to_json(false));
  }
  json summary{{"provenance", provenance(cfg, &corpus, "train")},
               {"split", {{"train", task.split.train}, {"validation", task.split.validation}, {"test", task.split.test}}},
               {"task", task_spec_to_json(task.spec)},
               {"runs", runs}};
  write_json(cfg.output_dir / "train" / "summary.json", summary);
  return summary;
}

// ---------------------------------------------------------------------------
// evaluate

struct SeedEvaluation {
  std::uint64_t seed = 0;
  MetricsReport report;
  ScoredSet scores;
};

inline LoadedDetector load_checkpoint_for(const RunConfig& cfg, std::uint64_t seed, const KeywordTaskSpec& spec) {
  const auto base = checkpoint_base(cfg, seed);
  if (!fs::exists(nn::checkpoint_index(base)))
    throw CheckpointError("missing checkpoint for seed " + std::to_string(seed) + " at " + base.string() +
                          " (run `nkws train` first)");
  auto det = load_detector(base);
  if (det.spec.keywords != spec.keywords || det.spec.beta_neg_s != spec.beta_neg_s ||
      det.spec.beta_pos_s != spec.beta_pos_s || det.spec.window_s != spec.window_s)
    throw CheckpointError("checkpoint for seed " + std::to_string(seed) + " was trained for a different task");
  return det;
}

// Per-metric seed mean and SE plus the Table-1 style roster: the permutation
// null mean as baseline and the percent change over it.
inline json seed_mean_roster(const std::vector<SeedEvaluation>& evals) {
  json rows = json::array();
  for (Metric m : kAllMetrics) {
    std::vector<double> vals, nulls, ps, bases;
    for (const auto& e : evals) {
      if (!e.report.values.contains(m)) continue;
      vals.push_back(e.report.values.at(m));
      if (e.report.permutation.contains(m)) {
        nulls.push_back(e.report.permutation.at(m).null_mean);
        ps.push_back(e.report.permutation.at(m).p_value);
      }
      bases.push_back(e.report.base_rate);
    }
    if (vals.empty()) continue;
    const auto s = summarize_seeds(vals);
    json row{{"metric", to_string(m)}, {"model", s.mean}, {"se", s.se}, {"seeds", s.n}};
    if (nulls.size() == vals.size()) {
      const auto b = summarize_seeds(nulls);
      row["baseline"] = b.mean;
      row["improvement_pct"] = b.mean > 0.0 ? json(100.0 * (s.mean - b.mean) / b.mean) : json(nullptr);
      row["p_value_max"] = *std::max_element(ps.begin(), ps.end());
      row["p_value_mean"] = summarize_seeds(ps).mean;
    }
    if (m == Metric::auprc) {
      row["ratio_over_base_rate"] = seed_mean_ratio(vals, bases).mean;
      row["pct_delta_over_base_rate"] = seed_mean_pct_delta(vals, bases).mean;
    }
    rows.push_back(row);
  }
  return rows;
}

inline json cmd_evaluate(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto corpus = load_configured_corpus(cfg);
  const auto task = prepare_task(corpus, cfg.task);
  const auto& part = cfg.evaluation.partition;
  std::vector<SeedEvaluation> evals;
  std::vector<SweepRow> rows;
  json per_seed = json::array();
  for (const auto seed : cfg.seeds) {
    auto det = load_checkpoint_for(cfg, seed, task.spec);
    const auto dir = evaluate_dir(cfg, seed);
    std::set<std::string> partitions{part, cfg.evaluation.curve_partition};
    ScoredSet primary;
    for (const auto& p : partitions) {
      const auto scored = evaluate(det, partition_windows(task, p).examples, cfg.training.eval_batch_size);
      if (scored.empty()) throw InfeasibleError("partition '" + p + "' has no windows");
      write_scores_csv(dir / ("scores_" + p + ".csv"), scored);
      if (p == part) primary = to_scored_set(scored);
    }
    auto report = compute_metrics_report(primary, cfg.evaluation.resampling());
    json j = report.to_json();
    j["seed"] = seed;
    j["partition"] = part;
    j["best_f1"] = best_f1(primary);
    write_json(dir / "metrics.json", j);
    per_seed.push_back(j);
    rows.push_back({part, std::to_string(seed), true, report.csv_values()});
    ctx.out() << "seed " << seed << ": " << part << " AUPRC " << report.value(Metric::auprc) << " (base rate "
              << report.base_rate << ", p " << report.permutation.at(Metric::auprc).p_value << "), AUROC "
              << report.value(Metric::auroc) << "\n";
    evals.push_back({seed, std::move(report), std::move(primary)});
  }
  const auto table = make_table(MetricsReport::csv_columns(), rows);
  write_sweep_csv(cfg.output_dir / "evaluate" / "metrics.csv", table);
  json summary{{"provenance", provenance(cfg, &corpus, "evaluate")},
               {"partition", part},
               {"curve_partition", cfg.evaluation.curve_partition},
               {"window_s", task.spec.window_s},
               {"n_windows", evals.front().scores.size()},
               {"threshold", cfg.evaluation.threshold},
               {"per_seed", per_seed},
               {"seed_mean", seed_mean_roster(evals)}};
  write_json(cfg.output_dir / "evaluate" / "summary.json", summary);
  return summary;
}

// ---------------------------------------------------------------------------
// sweep-scaling

inline json cmd_sweep_scaling(const CommandContext& ctx, std::vector<double> fractions = {}) {
  const auto& cfg = ctx.cfg;
  if (fractions.empty()) fractions = cfg.sweeps.scaling_fractions;
  const auto corpus = load_configured_corpus(cfg);
  const auto full = prepare_task(corpus, cfg.task);
  const auto subsets = scaling_subsets(corpus, full.split.train, fractions, cfg.evaluation.seed);
  const std::vector<std::string> columns{"fraction",  "train_hours",    "train_sessions", "train_windows",
                                         "train_positives", "base_rate", "auprc",          "auprc_p",
                                         "auroc",     "auroc_p",        "best_val_auprc"};
  std::vector<SweepRow> rows;
  json cells = json::array();
  for (const auto& sub : subsets) {
    const auto label = "f" + cell_number(sub.fraction);
    const auto task = prepare_task(corpus, cfg.task, sub.sessions);
    const double windows = static_cast<double>(task.train.examples.size());
    const double positives = static_cast<double>(task.train.positives());
    json cell{{"cell", label},
              {"fraction", sub.fraction},
              {"sessions", task.split.train},
              {"unique_hours", sub.hours},
              {"train_windows", task.train.examples.size()},
              {"train_positives", task.train.positives()},
              {"windowed_hours", windows * task.spec.window_s / 3600.0}};
    if (task.train.positives() == 0) {
      ctx.out() << "warning: fraction " << sub.fraction << " has no positive training windows; cell infeasible\n";
      cell["feasible"] = false;
      for (const auto seed : cfg.seeds) {
        std::vector<double> v(columns.size(), kNaN);
        v[0] = sub.fraction, v[1] = sub.hours, v[2] = static_cast<double>(sub.sessions.size());
        v[3] = windows, v[4] = positives;
        rows.push_back({label, std::to_string(seed), false, v});
      }
      cells.push_back(cell);
      continue;
    }
    cell["feasible"] = true;
    for (const auto seed : cfg.seeds) {
      const auto dir = cfg.output_dir / "sweeps" / "scaling" / label / ("seed-" + std::to_string(seed));
      const auto run = train_and_score(ctx, task, seed, dir, false);
      const auto& m = run.metrics;
      rows.push_back({label,
                      std::to_string(seed),
                      true,
                      {sub.fraction, sub.hours, static_cast<double>(sub.sessions.size()), windows, positives,
                       m.base_rate, m.value(Metric::auprc), m.permutation.at(Metric::auprc).p_value,
                       m.value(Metric::auroc), m.permutation.at(Metric::auroc).p_value,
                       run.report.best_val_auprc}});
      ctx.out() << "fraction " << sub.fraction << " seed " << seed << ": AUPRC " << m.value(Metric::auprc)
                << " (p " << m.permutation.at(Metric::auprc).p_value << ")\n";
    }
    cells.push_back(cell);
  }
  const auto table = make_table(columns, rows);
  write_sweep_csv(cfg.output_dir / "sweeps" / "scaling.csv", table);

  std::vector<double> xs, ys;
  for (const auto& r : table.rows)
    if (r.seed == "mean" && r.feasible) {
      xs.push_back(r.values[table.column("fraction")]);
      ys.push_back(r.values[table.column("auprc")]);
    }
  const auto trend = scaling_trend(xs, ys);
  json result{{"provenance", provenance(cfg, &corpus, "sweep-scaling")},
              {"cells", cells},
              {"trend", trend.to_json()},
              {"csv", (cfg.output_dir / "sweeps" / "scaling.csv").string()}};
  write_json(cfg.output_dir / "sweeps" / "scaling.json", result);
  nkws::detail::write_file(cfg.output_dir / "sweeps" / "scaling.svg",
                           svg_line_chart({"AUPRC vs training fraction", "fraction of training hours",
                                           "seed-mean test AUPRC", true},
                                          {{"AUPRC", xs, ys}}));
  return result;
}

// ---------------------------------------------------------------------------
// sweep-offsets

inline json cmd_sweep_offsets(const CommandContext& ctx, std::vector<double> neg = {}, std::vector<double> pos = {}) {
  const auto& cfg = ctx.cfg;
  if (neg.empty()) neg = cfg.sweeps.offsets_neg_s;
  if (pos.empty()) pos = cfg.sweeps.offsets_pos_s;
  for (double v : neg)
    if (v < 0.0) throw ValidationError("offset grids must be nonnegative");
  for (double v : pos)
    if (v < 0.0) throw ValidationError("offset grids must be nonnegative");
  const auto corpus = load_configured_corpus(cfg);
  const std::vector<std::string> columns{"neg_s", "pos_s", "window_s", "base_rate", "auprc", "auprc_p", "auroc"};
  std::vector<SweepRow> rows;
  std::map<std::string, std::vector<double>> auprc_by_cell;
  std::string baseline;
  for (double n : neg)
    for (double p : pos) {
      const auto label = "n" + cell_number(n) + "_p" + cell_number(p);
      if (n == 0.0 && p == 0.0) baseline = label;
      TaskConfig tc = cfg.task;
      tc.beta_neg_s = n;
      tc.beta_pos_s = p;
      const auto task = prepare_task(corpus, tc);
      std::vector<double> per_seed;
      for (const auto seed : cfg.seeds) {
        const auto dir = cfg.output_dir / "sweeps" / "offsets" / label / ("seed-" + std::to_string(seed));
        const auto run = train_and_score(ctx, task, seed, dir, false);
        const auto& m = run.metrics;
        rows.push_back({label,
                        std::to_string(seed),
                        true,
                        {n, p, task.spec.window_s, m.base_rate, m.value(Metric::auprc),
                         m.permutation.at(Metric::auprc).p_value, m.value(Metric::auroc)}});
        per_seed.push_back(m.value(Metric::auprc));
        ctx.out() << "offsets (" << n << ", " << p << ") seed " << seed << ": AUPRC " << m.value(Metric::auprc)
                  << "\n";
      }
      auprc_by_cell[label] = per_seed;
    }
  const auto table = make_table(columns, rows);
  write_sweep_csv(cfg.output_dir / "sweeps" / "offsets.csv", table);

  std::string best;
  double best_value = -1.0;
  json cells = json::array();
  for (const auto& r : table.rows) {
    if (r.seed != "mean") continue;
    const auto* se = table.find(r.cell, "se");
    const double v = r.values[table.column("auprc")];
    cells.push_back({{"cell", r.cell},
                     {"neg_s", r.values[0]},
                     {"pos_s", r.values[1]},
                     {"auprc_mean", v},
                     {"auprc_se", se->values[table.column("auprc")]},
                     {"auroc_mean", r.values[table.column("auroc")]},
                     {"auroc_se", se->values[table.column("auroc")]}});
    if (v > best_value) best_value = v, best = r.cell;
  }
  const auto improvement =
      paired_improvement(auprc_by_cell, baseline.empty() ? std::string("n0.00_p0.00") : baseline);
  if (!improvement.defined) ctx.out() << "note: paired improvement undefined: " << improvement.reason << "\n";
  json result{{"provenance", provenance(cfg, &corpus, "sweep-offsets")},
              {"cells", cells},
              {"argmax_cell", best},
              {"argmax_auprc", best_value},
              {"paired_improvement", improvement.to_json()}};
  write_json(cfg.output_dir / "sweeps" / "offsets.json", result);
  return result;
}

// ---------------------------------------------------------------------------
// sweep-keywords

inline std::map<std::string, std::size_t> word_counts(const Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus.sessions)
    for (const auto& e : s->events)
      if (e.kind == EventKind::word) ++counts[lowercase(e.word)];
  return counts;
}

// The most frequent word per character length (ties to the alphabetically
// first word), for the shortest `max_buckets` lengths.
inline std::vector<std::string> auto_keywords(const Corpus& corpus, std::size_t max_buckets) {
  std::map<std::size_t, std::pair<std::string, std::size_t>> best;
  for (const auto& [w, c] : word_counts(corpus)) {
    auto& slot = best[w.size()];
    if (c > slot.second) slot = {w, c};
  }
  std::vector<std::string> out;
  for (const auto& [len, wc] : best) {
    if (out.size() == max_buckets) break;
    out.push_back(wc.first);
  }
  return out;
}

// Spearman correlation of word length with log frequency over the lexicon
// observed in the corpus.
inline std::optional<Correlation> lexicon_length_frequency(const Corpus& corpus) {
  std::vector<double> len, logf;
  for (const auto& [w, c] : word_counts(corpus)) {
    len.push_back(static_cast<double>(w.size()));
    logf.push_back(std::log(static_cast<double>(c)));
  }
  try {
    return spearman_rank_corr(len, logf);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline json cmd_sweep_keywords(const CommandContext& ctx, std::vector<std::string> keywords = {}) {
  const auto& cfg = ctx.cfg;
  const auto corpus = load_configured_corpus(cfg);
  if (keywords.empty()) keywords = cfg.sweeps.keywords;
  const bool automatic = keywords.empty() || (keywords.size() == 1 && keywords[0] == "auto");
  if (automatic) keywords = auto_keywords(corpus, cfg.sweeps.auto_keyword_buckets);
  const auto counts = word_counts(corpus);
  const std::vector<std::string> columns{"length", "count", "base_rate", "auprc", "auprc_p", "auroc",
                                         "accuracy", "best_f1", "pct_delta_auprc"};
  std::vector<SweepRow> rows;
  json skipped = json::array();
  for (const auto& kw : keywords) {
    TaskConfig tc = cfg.task;
    tc.keywords = {kw};
    PreparedTask task;
    try {
      task = prepare_task(corpus, tc);
    } catch (const MissingKeywordError& e) {
      ctx.out() << "warning: keyword '" << kw << "' does not occur in the corpus; skipped\n";
      skipped.push_back({{"keyword", kw}, {"reason", e.what()}});
      continue;
    } catch (const InfeasibleError& e) {
      ctx.out() << "warning: keyword '" << kw << "': " << e.what() << "; skipped\n";
      skipped.push_back({{"keyword", kw}, {"reason", e.what()}});
      continue;
    }
    const auto it = counts.find(lowercase(kw));
    const double count = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    for (const auto seed : cfg.seeds) {
      const auto dir = cfg.output_dir / "sweeps" / "keywords" / kw / ("seed-" + std::to_string(seed));
      const auto run = train_and_score(ctx, task, seed, dir, false);
      const auto& m = run.metrics;
      const double a = m.value(Metric::auprc);
      rows.push_back({kw,
                      std::to_string(seed),
                      true,
                      {static_cast<double>(kw.size()), count, m.base_rate, a, m.permutation.at(Metric::auprc).p_value,
                       m.value(Metric::auroc), m.value(Metric::accuracy), best_f1(run.test),
                       pct_delta_over_base(a, m.base_rate)}});
      ctx.out() << "keyword " << kw << " seed " << seed << ": AUPRC " << a << " (base rate " << m.base_rate
                << ")\n";
    }
  }
  const auto table = make_table(columns, rows);
  write_sweep_csv(cfg.output_dir / "sweeps" / "keywords.csv", table);
  const auto lex = lexicon_length_frequency(corpus);
  json result{{"provenance", provenance(cfg, &corpus, "sweep-keywords")},
              {"keywords", keywords},
              {"automatic", automatic},
              {"skipped", skipped},
              {"lexicon_spearman",
               lex ? json{{"r", lex->r}, {"p_value", lex->p_value}, {"n", lex->n}} : json(nullptr)}};
  json per_kw = json::array();
  for (const auto& r : table.rows)
    if (r.seed == "mean") {
      json row{{"keyword", r.cell}};
      const auto* se = table.find(r.cell, "se");
      for (std::size_t c = 0; c < columns.size(); ++c) {
        row[columns[c]] = json_number(r.values[c]);
        row[columns[c] + "_se"] = json_number(se->values[c]);
      }
      per_kw.push_back(row);
    }
  result["per_keyword"] = per_kw;
  write_json(cfg.output_dir / "sweeps" / "keywords.json", result);
  return result;
}

// ---------------------------------------------------------------------------
// operating-points

// Per-seed input to the operating-point roster: a PR curve plus, when known,
// the false-positive count at the target threshold or the raw scores.
struct OperatingSeedInput {
  std::string seed;
  std::vector<PrPoint> curve;
  std::optional<ScoredSet> scores;
  std::optional<std::size_t> false_positives_at_target;
};

struct OperatingInputs {
  std::vector<OperatingSeedInput> seeds;
  std::optional<double> window_s;
  std::optional<std::size_t> n_windows;  // coverage for fixture FP counts
};

inline OperatingInputs load_operating_fixture(const fs::path& path) {
  const auto j = read_json(path);
  OperatingInputs in;
  in.window_s = j.at("window_s").get<double>();
  in.n_windows = j.at("n_windows").get<std::size_t>();
  for (const auto& s : j.at("seeds")) {
    OperatingSeedInput si;
    si.seed = std::to_string(s.at("seed").get<long long>());
    for (const auto& p : s.at("curve"))
      si.curve.push_back({p.at("threshold").get<double>(), p.at("precision").get<double>(),
                          p.at("recall").get<double>(), 0, 0});
    if (s.contains("false_positives_at_target"))
      si.false_positives_at_target = s.at("false_positives_at_target").get<std::size_t>();
    in.seeds.push_back(std::move(si));
  }
  if (in.seeds.empty()) throw ValidationError("operating fixture " + path.string() + " lists no seeds");
  return in;
}

inline OperatingSeedInput load_scores_input(const fs::path& path, const std::string& seed_label) {
  if (!fs::exists(path)) throw ValidationError("scores file not found: " + path.string());
  const auto rows = read_scores_csv(path);
  if (rows.empty()) throw ValidationError("scores file " + path.string() + " is empty");
  OperatingSeedInput si;
  si.seed = seed_label;
  si.scores = to_scored_set(rows);
  si.curve = pr_curve(*si.scores);
  return si;
}

// Columns of the operating-point table for a given budget list.
inline std::vector<std::string> operating_columns(std::span<const double> budgets) {
  std::vector<std::string> cols{"lambda_per_hour", "fa_per_hour_at_target", "threshold_at_target"};
  for (double b : budgets) cols.push_back("recall_at_budget_" + format_cell_value(b));
  cols.push_back("empirical_fp_per_hour");
  return cols;
}

inline SweepTable operating_table(const OperatingInputs& in, const std::vector<Scenario>& scenarios,
                                  double target_recall, std::span<const double> budgets,
                                  std::vector<std::pair<std::string, OperatingReport>>* reports = nullptr) {
  std::vector<SweepRow> rows;
  for (const auto& sc : scenarios)
    for (const auto& s : in.seeds) {
      auto r = operating_report(s.curve, sc, target_recall, budgets);
      if (s.scores && in.window_s)
        r.empirical_fp_per_hour =
            empirical_fp_per_hour(s.scores->scores, s.scores->labels, r.at_target.threshold, *in.window_s);
      else if (s.false_positives_at_target && in.window_s && in.n_windows)
        r.empirical_fp_per_hour =
            static_cast<double>(*s.false_positives_at_target) / coverage_hours(*in.n_windows, *in.window_s);
      std::vector<double> v{sc.lambda_per_hour, r.at_target.rates.fa_per_hour, r.at_target.threshold};
      for (const auto& [b, p] : r.at_budget) v.push_back(p.recall);
      v.push_back(r.empirical_fp_per_hour.value_or(kNaN));
      // Infeasible selections carry their fallback point (flagged in the
      // per-seed JSON) and are still aggregated.
      rows.push_back({sc.name, s.seed, true, std::move(v)});
      if (reports) reports->emplace_back(s.seed, std::move(r));
    }
  return make_table(operating_columns(budgets), rows);
}

struct OperatingOptions {
  std::vector<fs::path> scores;  // one file per seed
  std::optional<fs::path> fixture;
  std::optional<double> window_s;
};

inline json cmd_operating_points(const CommandContext& ctx, const OperatingOptions& opt = {}) {
  const auto& cfg = ctx.cfg;
  OperatingInputs in;
  std::string source;
  if (opt.fixture) {
    in = load_operating_fixture(*opt.fixture);
    source = opt.fixture->string();
  } else {
    std::vector<std::pair<fs::path, std::string>> files;
    if (!opt.scores.empty()) {
      for (std::size_t i = 0; i < opt.scores.size(); ++i)
        files.emplace_back(opt.scores[i], i < cfg.seeds.size() && opt.scores.size() == cfg.seeds.size()
                                              ? std::to_string(cfg.seeds[i])
                                              : opt.scores[i].stem().string());
    } else {
      for (const auto seed : cfg.seeds)
        files.emplace_back(evaluate_dir(cfg, seed) / ("scores_" + cfg.evaluation.curve_partition + ".csv"),
                           std::to_string(seed));
    }
    for (const auto& [path, label] : files) in.seeds.push_back(load_scores_input(path, label));
    source = "scores";
    in.window_s = opt.window_s;
    if (!in.window_s) {
      const auto summary = cfg.output_dir / "evaluate" / "summary.json";
      if (fs::exists(summary)) in.window_s = read_json(summary).at("window_s").get<double>();
    }
    if (!in.window_s)
      ctx.out() << "warning: window length unknown (pass --window-s); empirical FP/h omitted\n";
  }
  const auto& ev = cfg.evaluation;
  std::vector<std::pair<std::string, OperatingReport>> reports;
  const auto table = operating_table(in, ev.scenarios, ev.target_recall, ev.fa_budgets, &reports);
  const auto dir = cfg.output_dir / "operating";
  write_sweep_csv(dir / "operating_points.csv", table);
  for (const auto& sc : ev.scenarios)
    for (const auto& s : in.seeds)
      write_recall_vs_fa_csv(dir / ("recall_vs_fa_" + sc.name + "_seed-" + s.seed + ".csv"),
                             recall_vs_fa_curve(s.curve, sc));
  json per_seed = json::array();
  for (const auto& [seed, r] : reports) {
    auto j = r.to_json();
    j["seed"] = seed;
    per_seed.push_back(j);
  }
  json summary = json::array();
  for (const auto& sc : ev.scenarios) {
    const auto* mean = table.find(sc.name, "mean");
    const auto* se = table.find(sc.name, "se");
    json row{{"scenario", sc.name}};
    for (std::size_t c = 0; c < table.columns.size(); ++c)
      row[table.columns[c]] = {{"mean", json_number(mean->values[c])}, {"se", json_number(se->values[c])}};
    summary.push_back(row);
  }
  json result{{"provenance", provenance(cfg, nullptr, "operating-points")},
              {"source", source},
              {"target_recall", ev.target_recall},
              {"fa_budgets", ev.fa_budgets},
              {"window_s", in.window_s ? json(*in.window_s) : json(nullptr)},
              {"per_seed", per_seed},
              {"seed_mean", summary}};
  write_json(dir / "operating_points.json", result);
  for (const auto& row : summary) {
    ctx.out() << row["scenario"].get<std::string>() << ": FA/h at recall " << ev.target_recall << " = "
              << row["fa_per_hour_at_target"]["mean"] << " +/- " << row["fa_per_hour_at_target"]["se"] << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// report

inline std::string md_number(const json& v) {
  if (v.is_null()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v.get<double>());
  return buf;
}

inline json cmd_report(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto root = cfg.output_dir;
  const auto dir = root / "report";
  json combined{{"provenance", provenance(cfg, nullptr, "report")}};
  std::ostringstream md;
  md << "# Run report\n\nConfig hash `" << cfg.hash() << "`.\n\n";
  bool any = false;

  if (const auto p = root / "evaluate" / "summary.json"; fs::exists(p)) {
    any = true;
    const auto j = read_json(p);
    combined["evaluate"] = j;
    md << "## Held-out performance (" << j["partition"].get<std::string>() << ", threshold "
       << md_number(j["threshold"]) << ")\n\n";
    md << "| Metric | Baseline | Model | SE | Improvement (%) | p-value (max over seeds) |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const auto& r : j["seed_mean"])
      md << "| " << r["metric"].get<std::string>() << " | " << md_number(r.value("baseline", json())) << " | "
         << md_number(r["model"]) << " | " << md_number(r["se"]) << " | "
         << md_number(r.value("improvement_pct", json())) << " | " << md_number(r.value("p_value_max", json()))
         << " |\n";
    md << "\n";
  }
  if (const auto p = root / "sweeps" / "scaling.json"; fs::exists(p)) {
    any = true;
    const auto j = read_json(p);
    combined["scaling"] = j;
    const auto t = read_sweep_csv(root / "sweeps" / "scaling.csv");
    md << "## Scaling\n\n| Fraction | Hours | Train windows | AUPRC | SE | p (max) |\n|---|---|---|---|---|---|\n";
    for (const auto& cell : t.cells()) {
      const auto* m = t.find(cell, "mean");
      const auto* se = t.find(cell, "se");
      double pmax = 0.0;
      for (const auto& r : t.seed_rows())
        if (r.cell == cell && r.feasible) pmax = std::max(pmax, r.values[t.column("auprc_p")]);
      md << "| " << md_number(m->values[t.column("fraction")]) << " | " << md_number(m->values[t.column("train_hours")])
         << " | " << md_number(m->values[t.column("train_windows")]) << " | "
         << md_number(json_number(m->values[t.column("auprc")])) << " | "
         << md_number(json_number(se->values[t.column("auprc")])) << " | " << md_number(pmax) << " |\n";
    }
    md << "\nSlope of AUPRC per unit log fraction: " << md_number(j["trend"]["slope_per_log_fraction"]) << ".\n\n";
    fs::create_directories(dir);
    fs::copy_file(root / "sweeps" / "scaling.svg", dir / "scaling.svg", fs::copy_options::overwrite_existing);
  }
  if (const auto p = root / "sweeps" / "offsets.json"; fs::exists(p)) {
    any = true;
    const auto j = read_json(p);
    combined["offsets"] = j;
    md << "## Temporal offsets\n\n| neg (s) | pos (s) | AUPRC | SE | AUROC | SE |\n|---|---|---|---|---|---|\n";
    for (const auto& c : j["cells"])
      md << "| " << md_number(c["neg_s"]) << " | " << md_number(c["pos_s"]) << " | " << md_number(c["auprc_mean"])
         << " | " << md_number(c["auprc_se"]) << " | " << md_number(c["auroc_mean"]) << " | "
         << md_number(c["auroc_se"]) << " |\n";
    const auto& pi = j["paired_improvement"];
    md << "\nBest cell " << j["argmax_cell"].get<std::string>() << ". Paired improvement over (0, 0): "
       << (pi["defined"].get<bool>() ? md_number(pi["mean"]) + " (SE " + md_number(pi["se"]) + ")"
                                     : "undefined, " + pi["reason"].get<std::string>())
       << ".\n\n";
  }
  if (const auto p = root / "sweeps" / "keywords.json"; fs::exists(p)) {
    any = true;
    const auto j = read_json(p);
    combined["keywords"] = j;
    md << "## Keywords\n\n| Keyword | Base rate | AUPRC | AUROC | Acc | Best F1 | AUPRC change (%) |\n"
          "|---|---|---|---|---|---|---|\n";
    for (const auto& r : j["per_keyword"])
      md << "| " << r["keyword"].get<std::string>() << " | " << md_number(r["base_rate"]) << " | "
         << md_number(r["auprc"]) << " | " << md_number(r["auroc"]) << " | " << md_number(r["accuracy"]) << " | "
         << md_number(r["best_f1"]) << " | " << md_number(r["pct_delta_auprc"]) << " |\n";
    if (!j["lexicon_spearman"].is_null())
      md << "\nLength vs log frequency over the lexicon: Spearman r = " << md_number(j["lexicon_spearman"]["r"])
         << ".\n";
    md << "\n";
  }
  if (const auto p = root / "operating" / "operating_points.json"; fs::exists(p)) {
    any = true;
    const auto j = read_json(p);
    combined["operating_points"] = j;
    md << "## Operating points (target recall " << md_number(j["target_recall"]) << ")\n\n";
    md << "| Scenario | Quantity | Mean | SE |\n|---|---|---|---|\n";
    for (const auto& row : j["seed_mean"])
      for (const auto& [k, v] : row.items())
        if (k != "scenario" && k != "lambda_per_hour" && k != "threshold_at_target")
          md << "| " << row["scenario"].get<std::string>() << " | " << k << " | " << md_number(v["mean"]) << " | "
             << md_number(v["se"]) << " |\n";
    md << "\n";
    std::vector<Series> series;
    for (const auto& sc : cfg.evaluation.scenarios) {
      const auto seed = cfg.seeds.empty() ? std::string() : std::to_string(cfg.seeds.front());
      const auto csv = root / "operating" / ("recall_vs_fa_" + sc.name + "_seed-" + seed + ".csv");
      if (!fs::exists(csv)) continue;
      std::istringstream lines(nkws::detail::read_file(csv));
      std::string line;
      std::getline(lines, line);
      Series s{sc.name + " seed " + seed, {}, {}};
      while (std::getline(lines, line)) {
        std::stringstream ls(line);
        std::string fa, rec;
        std::getline(ls, fa, ',');
        std::getline(ls, rec, ',');
        s.x.push_back(std::stod(fa));
        s.y.push_back(std::stod(rec));
      }
      series.push_back(std::move(s));
    }
    if (!series.empty()) {
      fs::create_directories(dir);
      nkws::detail::write_file(dir / "recall_vs_fa.svg",
                               svg_line_chart({"Recall vs false alarms per hour", "FA/h", "recall", false}, series));
    }
  }
  if (!any) throw ValidationError("nothing to report under " + root.string() + " (run evaluate or a sweep first)");
  write_json(dir / "report.json", combined);
  nkws::detail::write_file(dir / "report.md", md.str());
  ctx.out() << "wrote " << (dir / "report.md").string() << "\n";
  return combined;
}

}  // namespace nkws::harness
