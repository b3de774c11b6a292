#pragma once

// Training loop with validation-AUPRC checkpoint selection, plus scoring of
// window sets from a saved checkpoint.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurokws/corpus.hpp"
#include "neurokws/losses.hpp"
#include "neurokws/metrics.hpp"
#include "neurokws/model.hpp"
#include "neurokws/nn/adamw.hpp"
#include "neurokws/random.hpp"
#include "neurokws/sampling.hpp"

namespace nkws {

// ---------------------------------------------------------------------------
// Task preparation

struct TaskConfig {
  std::set<std::string> keywords;
  double beta_neg_s = 0.1;
  double beta_pos_s = 0.3;

  void validate() const {
    if (keywords.empty()) throw ValidationError("task.keywords must not be empty");
    if (beta_neg_s < 0.0 || beta_pos_s < 0.0) throw ValidationError("task buffers must be >= 0");
  }
};

// Everything a training run needs from a corpus: the task, the split actually
// used, the training normalizer and the three window sets.
struct PreparedTask {
  KeywordTaskSpec spec;
  SplitAssignment split;
  Normalizer norm;
  WindowSet train, validation, test;
  std::size_t n_channels = 0;
  double sample_rate_hz = 0.0;
  double train_hours = 0.0;
};

// Split selection falls back per keyword set; `train_subset`, when given,
// replaces the training sessions (the held-out pair stays fixed).
inline PreparedTask prepare_task(const Corpus& corpus, const TaskConfig& task,
                                 std::optional<std::vector<std::string>> train_subset = std::nullopt) {
  task.validate();
  if (corpus.sessions.empty()) throw ValidationError("corpus has no sessions");
  PreparedTask p;
  p.spec = build_task_spec(corpus.sessions, task.keywords, task.beta_neg_s, task.beta_pos_s);
  p.split = select_splits(corpus.sessions, p.spec, corpus.default_split);
  if (train_subset) {
    p.split.train = *train_subset;
    std::sort(p.split.train.begin(), p.split.train.end());
  }
  if (p.split.train.empty()) throw ValidationError("no training sessions");
  const auto train_sessions = corpus.select(p.split.train);
  p.norm = fit_normalizer(train_sessions);
  p.n_channels = corpus.sessions.front()->channels.n_channels;
  p.sample_rate_hz = corpus.sessions.front()->channels.sample_rate_hz;
  for (const auto& s : train_sessions)
    p.train_hours += static_cast<double>(s->n_samples) / s->channels.sample_rate_hz / 3600.0;
  p.train = extract_windows(train_sessions, p.spec);
  const std::vector<std::string> val{p.split.validation}, test{p.split.test};
  p.validation = extract_windows(corpus.select(val), p.spec);
  p.test = extract_windows(corpus.select(test), p.spec);
  return p;
}

inline nlohmann::json normalizer_to_json(const Normalizer& n) {
  return {{"mean", n.mean}, {"stddev", n.stddev}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("stddev").get<std::vector<double>>();
  if (n.mean.size() != n.stddev.size()) throw CheckpointError("normalizer arrays differ in length");
  return n;
}

inline nlohmann::json task_spec_to_json(const KeywordTaskSpec& s) {
  return {{"keywords", s.keywords},
          {"beta_neg_s", s.beta_neg_s},
          {"beta_pos_s", s.beta_pos_s},
          {"d_max_s", s.d_max_s},
          {"window_s", s.window_s}};
}

inline KeywordTaskSpec task_spec_from_json(const nlohmann::json& j) {
  KeywordTaskSpec s;
  s.keywords = j.at("keywords").get<std::set<std::string>>();
  s.beta_neg_s = j.at("beta_neg_s").get<double>();
  s.beta_pos_s = j.at("beta_pos_s").get<double>();
  s.d_max_s = j.at("d_max_s").get<std::map<std::string, double>>();
  s.window_s = j.at("window_s").get<double>();
  return s;
}

// ---------------------------------------------------------------------------
// Batches and scoring

template <class T>
nn::Tensor<T> window_batch(std::span<const WindowExample> examples, std::span<const std::size_t> indices,
                           const Normalizer& norm) {
  if (indices.empty()) throw ValidationError("empty batch");
  const auto& first = examples[indices[0]];
  const std::size_t C = first.n_channels(), N = first.n_samples;
  nn::Tensor<T> x({indices.size(), C, N});
  for (std::size_t b = 0; b < indices.size(); ++b)
    examples[indices[b]].copy_signal(std::span<T>(x.values.data() + b * C * N, C * N), &norm);
  return x;
}

inline double stable_sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Eval-mode probabilities in example order. Eval-mode normalization makes
// each score independent of batch composition.
template <class T>
std::vector<double> score_windows(DetectorModel<T>& model, std::span<const WindowExample> examples,
                                  const Normalizer& norm, std::size_t batch_size = 64) {
  std::vector<double> scores;
  scores.reserve(examples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const auto logits = model.predict_logits(window_batch<T>(examples, idx, norm));
    for (T z : logits) scores.push_back(stable_sigmoid(static_cast<double>(z)));
  }
  return scores;
}

inline std::vector<int> window_labels(std::span<const WindowExample> examples) {
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label);
  return labels;
}

// ---------------------------------------------------------------------------
// Scores file

struct ScoreRow {
  std::string session_id;
  std::size_t token_index = 0;
  int label = 0;
  double score = 0.0;
};

inline ScoredSet to_scored_set(std::span<const ScoreRow> rows) {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& r : rows) {
    s.push_back(r.score);
    l.push_back(r.label);
  }
  return ScoredSet(std::move(s), std::move(l));
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "session_id,token_index,label,score\n";
  for (const auto& r : rows)
    out << r.session_id << ',' << r.token_index << ',' << r.label << ',' << format_g17(r.score) << '\n';
  if (!out) throw Error("cannot write scores file " + path.string());
}

inline std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file " + path.string());
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "session_id,token_index,label,score")
    throw ParseError("scores file header must be session_id,token_index,label,score", 1);
  std::vector<ScoreRow> rows;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw ParseError("expected 4 comma-separated fields", line_no);
    ScoreRow r;
    r.session_id = f[0];
    r.token_index = static_cast<std::size_t>(detail::parse_double(f[1], "token_index", line_no));
    r.label = static_cast<int>(detail::parse_double(f[2], "label", line_no));
    r.score = detail::parse_double(f[3], "score", line_no);
    if (r.label != 0 && r.label != 1) throw ParseError("label must be 0 or 1", line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Overrides the data-order subseed derived from `seed`; initialization
  // always comes from `seed`.
  std::optional<std::uint64_t> sampler_seed;
  // Cap on optimizer steps per epoch; 0 runs the full pass over negatives.
  std::size_t max_steps_per_epoch = 0;
  std::size_t eval_batch_size = 64;
  double min_improvement = 1e-6;

  void validate() const {
    if (max_epochs == 0) throw ValidationError("training.max_epochs must be >= 1");
    if (patience == 0 || patience > max_epochs)
      throw ValidationError("training.patience must be in [1, max_epochs]");
    if (!(lr > 0.0)) throw ValidationError("training.lr must be > 0");
    if (weight_decay < 0.0) throw ValidationError("training.weight_decay must be >= 0");
    if (eval_batch_size == 0) throw ValidationError("training.eval_batch_size must be >= 1");
  }

  std::uint64_t init_seed() const { return derive_seed(seed, {hash_tag("init")}); }
  std::uint64_t data_seed() const { return sampler_seed.value_or(derive_seed(seed, {hash_tag("data")})); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  double val_auprc = 0.0;
  double val_auroc = 0.0;
  double val_f1 = 0.0;  // at threshold 0.5, logging only
  double seconds = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_auprc = -1.0;
  std::string checkpoint;
  double wall_clock_seconds = 0.0;
  bool stopped_early = false;
  std::size_t n_train = 0, n_train_positive = 0;
  std::size_t n_validation = 0, n_validation_positive = 0;
  double train_hours = 0.0;
  std::string status = "ok";

  double val_base_rate() const {
    return n_validation ? static_cast<double>(n_validation_positive) / static_cast<double>(n_validation) : 0.0;
  }

  // Timing fields are dropped when include_timing is false so reports of
  // identical runs compare equal.
  nlohmann::json to_json(bool include_timing = true) const {
    nlohmann::json j;
    j["status"] = status;
    j["seed"] = seed;
    j["best_epoch"] = best_epoch;
    j["best_val_auprc"] = best_val_auprc;
    j["checkpoint"] = checkpoint;
    j["stopped_early"] = stopped_early;
    j["n_train"] = n_train;
    j["n_train_positive"] = n_train_positive;
    j["n_validation"] = n_validation;
    j["n_validation_positive"] = n_validation_positive;
    j["val_base_rate"] = val_base_rate();
    j["train_hours"] = train_hours;
    auto& list = j["epochs"];
    list = nlohmann::json::array();
    for (const auto& e : epochs) {
      nlohmann::json r{{"epoch", e.epoch},         {"steps", e.steps},
                       {"train_loss", e.train_loss}, {"val_auprc", e.val_auprc},
                       {"val_auroc", e.val_auroc}, {"val_f1", e.val_f1}};
      if (include_timing) r["seconds"] = e.seconds;
      list.push_back(r);
    }
    if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
    return j;
  }
};

struct TrainInputs {
  ModelConfig model;
  LossConfig loss;
  SamplerConfig sampler;
  TrainConfig train;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// NaN-safe AUROC for logging: undefined when validation lacks negatives.
inline double safe_auroc(const ScoredSet& s) {
  return s.negatives() > 0 ? auroc(s) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

// Trains a float32 detector on task.train, scoring task.validation after
// every epoch and saving the best-so-far checkpoint at checkpoint_base
// (".bin" / ".json"). The header stores the normalizer and task so the
// checkpoint alone suffices for evaluate().
inline TrainReport train(const TrainInputs& in, const PreparedTask& task,
                         const std::filesystem::path& checkpoint_base, bool verbose = false) {
  in.train.validate();
  in.loss.validate();
  in.sampler.validate();
  if (in.model.in_channels != task.n_channels)
    throw DimensionError("model expects " + std::to_string(in.model.in_channels) + " channels, corpus has " +
                         std::to_string(task.n_channels));
  const auto& train_ex = task.train.examples;
  const auto& val_ex = task.validation.examples;
  const auto train_labels = window_labels(train_ex);
  const auto val_labels = window_labels(val_ex);
  if (std::count(val_labels.begin(), val_labels.end(), 1) == 0)
    throw InfeasibleError("validation partition has no positive windows");

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = in.train.seed;
  report.checkpoint = checkpoint_base.string();
  report.n_train = train_ex.size();
  report.n_train_positive = static_cast<std::size_t>(std::count(train_labels.begin(), train_labels.end(), 1));
  report.n_validation = val_ex.size();
  report.n_validation_positive = static_cast<std::size_t>(std::count(val_labels.begin(), val_labels.end(), 1));
  report.train_hours = task.train_hours;

  DetectorModel<float> model(in.model, in.train.init_seed());
  nn::AdamWConfig opt_cfg;
  opt_cfg.lr = in.train.lr;
  opt_cfg.weight_decay = in.train.weight_decay;
  nn::AdamW<float> optimizer(opt_cfg);
  const auto params = model.parameters();
  const std::uint64_t data_seed = in.train.data_seed();
  const BalancedBatchSampler sampler(train_labels, in.sampler, data_seed);

  nlohmann::json header;
  header["normalizer"] = normalizer_to_json(task.norm);
  header["task"] = task_spec_to_json(task.spec);
  header["seed"] = in.train.seed;

  const std::size_t C = task.n_channels;
  const std::size_t N = train_ex.empty() ? 0 : train_ex.front().n_samples;
  std::size_t since_improvement = 0;
  for (std::size_t epoch = 0; epoch < in.train.max_epochs; ++epoch) {
    const auto te = std::chrono::steady_clock::now();
    auto batches = sampler.epoch(epoch);
    if (in.train.max_steps_per_epoch > 0 && batches.size() > in.train.max_steps_per_epoch)
      batches.resize(in.train.max_steps_per_epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      nn::Tensor<float> x({batch.indices.size(), C, N});
      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        CounterRng rng(data_seed, {hash_tag("augment"), epoch, b, k});
        augment(train_ex[batch.indices[k]], task.norm, in.sampler.jitter_samples,
                in.sampler.noise_std_fraction, rng, std::span<float>(x.values.data() + k * C * N, C * N));
      }
      nn::Graph<float> g;
      const auto out = model.forward(g, g.input(std::move(x)), nn::Mode::train);
      const auto loss = detector_loss(g, out.logit, out.prob, batch.labels, in.loss,
                                      derive_seed(data_seed, {hash_tag("pairs"), epoch, b}));
      const double value = g.value(loss)[0];
      if (!std::isfinite(value)) {
        report.status = "diverged";
        report.wall_clock_seconds = detail::seconds_since(t0);
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(b) + " (seed " + std::to_string(in.train.seed) + ")");
      }
      loss_sum += value;
      model.zero_grad();
      g.backward(loss);
      optimizer.step(params);
    }

    const ScoredSet val(score_windows(model, val_ex, task.norm, in.train.eval_batch_size), val_labels);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = batches.size();
    rec.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    rec.val_auprc = auprc(val);
    rec.val_auroc = detail::safe_auroc(val);
    rec.val_f1 = thresholded_metrics(val, 0.5).f1;
    rec.seconds = detail::seconds_since(te);
    report.epochs.push_back(rec);
    if (verbose)
      std::cerr << "epoch " << epoch << " loss " << rec.train_loss << " val_auprc " << rec.val_auprc
                << " val_auroc " << rec.val_auroc << " (" << rec.seconds << " s)\n";

    if (rec.val_auprc > report.best_val_auprc + in.train.min_improvement) {
      report.best_val_auprc = rec.val_auprc;
      report.best_epoch = epoch;
      since_improvement = 0;
      header["best_epoch"] = epoch;
      header["best_val_auprc"] = rec.val_auprc;
      save_model(checkpoint_base, model, header);
    } else if (++since_improvement >= in.train.patience) {
      report.stopped_early = epoch + 1 < in.train.max_epochs;
      break;
    }
  }
  report.wall_clock_seconds = detail::seconds_since(t0);
  return report;
}

struct LoadedDetector {
  DetectorModel<float> model;
  Normalizer norm;
  KeywordTaskSpec spec;
  nlohmann::json header;
};

inline LoadedDetector load_detector(const std::filesystem::path& checkpoint_base,
                                    std::optional<std::string> expected_hash = std::nullopt) {
  auto loaded = load_model<float>(checkpoint_base, expected_hash);
  if (!loaded.header.contains("normalizer") || !loaded.header.contains("task"))
    throw CheckpointError("checkpoint lacks normalizer or task metadata");
  auto norm = normalizer_from_json(loaded.header.at("normalizer"));
  auto spec = task_spec_from_json(loaded.header.at("task"));
  return {std::move(loaded.model), std::move(norm), std::move(spec), std::move(loaded.header)};
}

// Scores a window set with a checkpoint, in window order.
inline std::vector<ScoreRow> evaluate(LoadedDetector& det, std::span<const WindowExample> windows,
                                      std::size_t batch_size = 64) {
  if (windows.empty()) {
    std::cerr << "warning: evaluate called on an empty partition; no scores produced\n";
    return {};
  }
  if (windows.front().n_channels() != det.model.config().in_channels ||
      det.norm.mean.size() != det.model.config().in_channels)
    throw CheckpointError("checkpoint channel count does not match the corpus");
  const auto scores = score_windows(det.model, windows, det.norm, batch_size);
  std::vector<ScoreRow> rows;
  rows.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i)
    rows.push_back({windows[i].session_id, windows[i].token_index, windows[i].label, scores[i]});
  return rows;
}

inline std::vector<ScoreRow> evaluate(const std::filesystem::path& checkpoint_base,
                                      std::span<const WindowExample> windows, std::size_t batch_size = 64) {
  auto det = load_detector(checkpoint_base);
  return evaluate(det, windows, batch_size);
}

}  // namespace nkws
