#pragma once

// Run configuration: JSON with comments, strict keys (anything absent from
// the default document is rejected), dotted-path overrides and an optional
// data-root environment variable for relative paths.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurokws/checksum.hpp"
#include "neurokws/corpus.hpp"
#include "neurokws/error.hpp"
#include "neurokws/losses.hpp"
#include "neurokws/model.hpp"
#include "neurokws/operate.hpp"
#include "neurokws/sampling.hpp"
#include "neurokws/synthgen.hpp"
#include "neurokws/training.hpp"

namespace nkws::harness {

inline constexpr const char* kDataRootEnv = "NKWS_DATA_ROOT";

struct EvaluationConfig {
  double threshold = 0.5;
  std::size_t n_bootstrap = 4000;
  std::size_t n_permutations = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::string partition = "test";
  std::string curve_partition = "validation";
  std::vector<Scenario> scenarios{assistive_scenario(), hands_free_scenario()};
  double target_recall = 0.10;
  std::vector<double> fa_budgets{2.0, 0.5};

  ResamplingConfig resampling() const {
    ResamplingConfig r;
    r.n_resamples = n_bootstrap;
    r.n_permutations = n_permutations;
    r.level = level;
    r.threshold = threshold;
    r.seed = seed;
    return r;
  }
};

struct SweepConfig {
  std::vector<double> scaling_fractions{0.1, 0.25, 0.5, 1.0};
  std::vector<double> offsets_neg_s{0.0, 0.05, 0.1, 0.15, 0.2};
  std::vector<double> offsets_pos_s{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  std::vector<std::string> keywords;  // empty = automatic selection
  std::size_t auto_keyword_buckets = 4;
};

struct RunConfig {
  nlohmann::json document;  // effective configuration after merging and overrides
  std::filesystem::path base_dir;

  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path corpus_path;
  SynthConfig synth;
  TaskConfig task;
  ModelConfig model;
  bool model_channels_from_corpus = true;
  LossConfig loss;
  SamplerConfig sampler;
  TrainConfig training;
  EvaluationConfig evaluation;
  SweepConfig sweeps;

  std::string hash() const { return to_hex(fnv1a64(document.dump())); }

  // Model config with the corpus channel count filled in.
  ModelConfig model_for(std::size_t n_channels) const {
    ModelConfig m = model;
    if (model_channels_from_corpus) m.in_channels = n_channels;
    else if (m.in_channels != n_channels)
      throw ValidationError("model.in_channels = " + std::to_string(m.in_channels) + " but the corpus has " +
                            std::to_string(n_channels) + " channels");
    return m;
  }

  TrainInputs train_inputs(std::size_t n_channels, std::uint64_t seed) const {
    TrainInputs in;
    in.model = model_for(n_channels);
    in.loss = loss;
    in.sampler = sampler;
    in.train = training;
    in.train.seed = seed;
    return in;
  }
};

// The full default document; its key set is the schema.
inline nlohmann::json default_config_document() {
  const SynthConfig s;
  const ModelConfig m;
  const LossConfig l;
  const SamplerConfig sp;
  const TrainConfig t;
  const EvaluationConfig e;
  const SweepConfig sw;
  const TaskConfig task;
  nlohmann::json scenarios = nlohmann::json::array();
  for (const auto& sc : e.scenarios) scenarios.push_back({{"name", sc.name}, {"lambda_per_hour", sc.lambda_per_hour}});
  return {
      {"output_dir", "runs/default"},
      {"seeds", {1, 2, 3}},
      {"corpus",
       {{"path", "data/synth-default"},
        {"synth",
         {{"seed", s.seed},
          {"n_sessions", s.n_sessions},
          {"session_minutes", s.session_minutes},
          {"vocab_size", s.vocab_size},
          {"zipf_exponent", s.zipf_exponent},
          {"word_duration_range_s", {s.word_duration_range_s.first, s.word_duration_range_s.second}},
          {"gap_range_s", {s.gap_range_s.first, s.gap_range_s.second}},
          {"snr", s.snr},
          {"n_channels", s.n_channels},
          {"sample_rate_hz", s.sample_rate_hz}}}}},
      {"task", {{"keywords", {"kalo"}}, {"beta_neg_s", task.beta_neg_s}, {"beta_pos_s", task.beta_pos_s}}},
      {"model",
       {{"in_channels", nullptr},
        {"trunk_channels", m.trunk_channels},
        {"proj_channels", m.proj_channels},
        {"downsample_factor", m.downsample_factor},
        {"trunk_kernel", m.trunk_kernel},
        {"res_kernel", m.res_kernel},
        {"pooling", m.pooling},
        {"topk_fraction", m.topk_fraction}}},
      {"loss",
       {{"focal_alpha", l.focal_alpha},
        {"focal_gamma", l.focal_gamma},
        {"rank_weight", l.rank_weight},
        {"rank_pairs_per_batch", l.rank_pairs_per_batch}}},
      {"sampler",
       {{"positive_fraction", sp.positive_fraction},
        {"jitter_samples", sp.jitter_samples},
        {"noise_std_fraction", sp.noise_std_fraction},
        {"batch_size", sp.batch_size}}},
      {"training",
       {{"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"sampler_seed", nullptr},
        {"max_steps_per_epoch", t.max_steps_per_epoch},
        {"eval_batch_size", t.eval_batch_size},
        {"min_improvement", t.min_improvement}}},
      {"evaluation",
       {{"threshold", e.threshold},
        {"n_bootstrap", e.n_bootstrap},
        {"n_permutations", e.n_permutations},
        {"level", e.level},
        {"seed", e.seed},
        {"partition", e.partition},
        {"curve_partition", e.curve_partition},
        {"scenarios", scenarios},
        {"target_recall", e.target_recall},
        {"fa_budgets", e.fa_budgets}}},
      {"sweeps",
       {{"scaling_fractions", sw.scaling_fractions},
        {"offsets_neg_s", sw.offsets_neg_s},
        {"offsets_pos_s", sw.offsets_pos_s},
        {"keywords", sw.keywords},
        {"auto_keyword_buckets", sw.auto_keyword_buckets}}},
  };
}

namespace detail {

inline std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

// Objects merge key by key; anything else replaces. Keys missing from the
// schema are rejected with their dotted path.
inline void merge_strict(nlohmann::json& target, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ValidationError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const auto here = join_path(path, key);
    if (!target.contains(key)) throw ValidationError("unknown config key '" + here + "'");
    auto& slot = target[key];
    if (slot.is_object()) merge_strict(slot, value, here);
    else slot = value;
  }
}

template <class T>
T field(const nlohmann::json& doc, const std::string& dotted) {
  std::string p = "/";
  for (char c : dotted) p += c == '.' ? '/' : c;
  try {
    return doc.at(nlohmann::json::json_pointer(p)).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config field '" + dotted + "': " + e.what());
  }
}

}  // namespace detail

// "a.b.c=value": value parses as JSON when it can, otherwise as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' must look like path.to.key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::string walked;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = detail::join_path(walked, key);
    if (!node->is_object() || !node->contains(key)) throw ValidationError("unknown config key '" + walked + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) {
    nlohmann::json merged = *node;
    detail::merge_strict(merged, value, path);
    *node = merged;
  } else {
    *node = value;
  }
}

inline std::filesystem::path resolve_path(const std::filesystem::path& p, const std::filesystem::path& base_dir) {
  if (p.is_absolute()) return p.lexically_normal();
  if (const char* root = std::getenv(kDataRootEnv); root && *root)
    return (std::filesystem::path(root) / p).lexically_normal();
  return (base_dir / p).lexically_normal();
}

// Typed view of an effective document.
inline RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  using detail::field;
  RunConfig c;
  c.document = doc;
  c.base_dir = base_dir;
  c.output_dir = resolve_path(field<std::string>(doc, "output_dir"), base_dir);
  c.seeds = field<std::vector<std::uint64_t>>(doc, "seeds");
  if (c.seeds.empty()) throw ValidationError("config field 'seeds': at least one seed is required");
  c.corpus_path = resolve_path(field<std::string>(doc, "corpus.path"), base_dir);

  auto& s = c.synth;
  s.seed = field<std::uint64_t>(doc, "corpus.synth.seed");
  s.n_sessions = field<std::size_t>(doc, "corpus.synth.n_sessions");
  s.session_minutes = field<double>(doc, "corpus.synth.session_minutes");
  s.vocab_size = field<std::size_t>(doc, "corpus.synth.vocab_size");
  s.zipf_exponent = field<double>(doc, "corpus.synth.zipf_exponent");
  const auto wd = field<std::vector<double>>(doc, "corpus.synth.word_duration_range_s");
  const auto gp = field<std::vector<double>>(doc, "corpus.synth.gap_range_s");
  if (wd.size() != 2) throw ValidationError("config field 'corpus.synth.word_duration_range_s': expected [min, max]");
  if (gp.size() != 2) throw ValidationError("config field 'corpus.synth.gap_range_s': expected [min, max]");
  s.word_duration_range_s = {wd[0], wd[1]};
  s.gap_range_s = {gp[0], gp[1]};
  s.snr = field<double>(doc, "corpus.synth.snr");
  s.n_channels = field<std::size_t>(doc, "corpus.synth.n_channels");
  s.sample_rate_hz = field<double>(doc, "corpus.synth.sample_rate_hz");

  const auto keywords = field<std::vector<std::string>>(doc, "task.keywords");
  c.task.keywords = std::set<std::string>(keywords.begin(), keywords.end());
  c.task.beta_neg_s = field<double>(doc, "task.beta_neg_s");
  c.task.beta_pos_s = field<double>(doc, "task.beta_pos_s");

  auto& m = c.model;
  c.model_channels_from_corpus = doc.at("model").at("in_channels").is_null();
  if (!c.model_channels_from_corpus) m.in_channels = field<std::size_t>(doc, "model.in_channels");
  m.trunk_channels = field<std::size_t>(doc, "model.trunk_channels");
  m.proj_channels = field<std::size_t>(doc, "model.proj_channels");
  m.downsample_factor = field<std::size_t>(doc, "model.downsample_factor");
  m.trunk_kernel = field<std::size_t>(doc, "model.trunk_kernel");
  m.res_kernel = field<std::size_t>(doc, "model.res_kernel");
  const auto pooling = field<std::string>(doc, "model.pooling");
  if (pooling != "attention" && pooling != "topk")
    throw ValidationError("config field 'model.pooling': expected \"attention\" or \"topk\"");
  m.pooling = pooling == "topk" ? Pooling::topk : Pooling::attention;
  m.topk_fraction = field<double>(doc, "model.topk_fraction");

  c.loss.focal_alpha = field<double>(doc, "loss.focal_alpha");
  c.loss.focal_gamma = field<double>(doc, "loss.focal_gamma");
  c.loss.rank_weight = field<double>(doc, "loss.rank_weight");
  c.loss.rank_pairs_per_batch = field<std::size_t>(doc, "loss.rank_pairs_per_batch");

  c.sampler.positive_fraction = field<double>(doc, "sampler.positive_fraction");
  c.sampler.jitter_samples = field<std::size_t>(doc, "sampler.jitter_samples");
  c.sampler.noise_std_fraction = field<double>(doc, "sampler.noise_std_fraction");
  c.sampler.batch_size = field<std::size_t>(doc, "sampler.batch_size");

  auto& t = c.training;
  t.max_epochs = field<std::size_t>(doc, "training.max_epochs");
  t.patience = field<std::size_t>(doc, "training.patience");
  t.lr = field<double>(doc, "training.lr");
  t.weight_decay = field<double>(doc, "training.weight_decay");
  if (!doc.at("training").at("sampler_seed").is_null())
    t.sampler_seed = field<std::uint64_t>(doc, "training.sampler_seed");
  t.max_steps_per_epoch = field<std::size_t>(doc, "training.max_steps_per_epoch");
  t.eval_batch_size = field<std::size_t>(doc, "training.eval_batch_size");
  t.min_improvement = field<double>(doc, "training.min_improvement");

  auto& e = c.evaluation;
  e.threshold = field<double>(doc, "evaluation.threshold");
  e.n_bootstrap = field<std::size_t>(doc, "evaluation.n_bootstrap");
  e.n_permutations = field<std::size_t>(doc, "evaluation.n_permutations");
  e.level = field<double>(doc, "evaluation.level");
  e.seed = field<std::uint64_t>(doc, "evaluation.seed");
  e.partition = field<std::string>(doc, "evaluation.partition");
  e.curve_partition = field<std::string>(doc, "evaluation.curve_partition");
  for (const auto& key : {e.partition, e.curve_partition})
    if (key != "test" && key != "validation" && key != "train")
      throw ValidationError("config field 'evaluation.partition': expected test, validation or train");
  e.scenarios.clear();
  const auto& scenarios = doc.at("evaluation").at("scenarios");
  if (!scenarios.is_array() || scenarios.empty())
    throw ValidationError("config field 'evaluation.scenarios': expected a non-empty list");
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& sc = scenarios[i];
    const auto where = "evaluation.scenarios[" + std::to_string(i) + "]";
    if (!sc.is_object()) throw ValidationError("config field '" + where + "': expected an object");
    for (const auto& [k, v] : sc.items())
      if (k != "name" && k != "lambda_per_hour") throw ValidationError("unknown config key '" + where + "." + k + "'");
    try {
      e.scenarios.push_back({sc.at("name").get<std::string>(), sc.at("lambda_per_hour").get<double>()});
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("config field '" + where + "': " + ex.what());
    }
    e.scenarios.back().validate();
  }
  e.target_recall = field<double>(doc, "evaluation.target_recall");
  e.fa_budgets = field<std::vector<double>>(doc, "evaluation.fa_budgets");
  if (!(e.level > 0.0 && e.level < 1.0)) throw ValidationError("config field 'evaluation.level': must be in (0, 1)");

  auto& sw = c.sweeps;
  sw.scaling_fractions = field<std::vector<double>>(doc, "sweeps.scaling_fractions");
  sw.offsets_neg_s = field<std::vector<double>>(doc, "sweeps.offsets_neg_s");
  sw.offsets_pos_s = field<std::vector<double>>(doc, "sweeps.offsets_pos_s");
  sw.keywords = field<std::vector<std::string>>(doc, "sweeps.keywords");
  sw.auto_keyword_buckets = field<std::size_t>(doc, "sweeps.auto_keyword_buckets");

  // Component validators name their fields with the section prefix.
  s.validate();
  c.task.validate();
  if (!c.model_channels_from_corpus) m.validate();
  else {
    ModelConfig probe = m;
    probe.in_channels = 1;
    probe.validate();
  }
  c.loss.validate();
  c.sampler.validate();
  t.validate();
  return c;
}

// Loads a config file (or the defaults when path is empty), applies
// overrides and, when require_corpus is set, checks that the corpus exists.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                                 const std::vector<std::string>& overrides = {}, bool require_corpus = false) {
  auto doc = default_config_document();
  std::filesystem::path base_dir = std::filesystem::current_path();
  if (path) {
    if (!std::filesystem::exists(*path)) throw ValidationError("config file not found: " + path->string());
    nlohmann::json user;
    try {
      user = nlohmann::json::parse(nkws::detail::read_file(*path), nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("config file " + path->string() + ": " + e.what());
    }
    detail::merge_strict(doc, user, "");
    base_dir = std::filesystem::absolute(*path).parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = parse_run_config(doc, base_dir);
  if (require_corpus) {
    const auto manifest = std::filesystem::is_directory(cfg.corpus_path) ? cfg.corpus_path / "manifest.json"
                                                                         : cfg.corpus_path;
    if (!std::filesystem::exists(manifest))
      throw ValidationError("config field 'corpus.path': no corpus at " + cfg.corpus_path.string() +
                            " (run `nkws synth` first)");
  }
  return cfg;
}

}  // namespace nkws::harness
