#pragma once

// Reference keyword detector: temporal conv trunk (stem, residual block,
// strided downsampler) -> 1x1 projection -> per-time logit and attention
// heads -> pooled window logit -> sigmoid probability.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurokws/checksum.hpp"
#include "neurokws/nn/checkpoint.hpp"
#include "neurokws/nn/graph.hpp"
#include "neurokws/nn/ops.hpp"
#include "neurokws/random.hpp"

namespace nkws {

enum class Pooling { attention, topk };

NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::attention, "attention"}, {Pooling::topk, "topk"}})

struct ModelConfig {
  std::size_t in_channels = 306;
  std::size_t trunk_channels = 128;
  std::size_t proj_channels = 512;
  std::size_t downsample_factor = 4;
  std::size_t trunk_kernel = 7;
  std::size_t res_kernel = 3;
  Pooling pooling = Pooling::attention;
  double topk_fraction = 0.25;

  void validate() const {
    if (trunk_kernel % 2 == 0 || res_kernel % 2 == 0)
      throw ValidationError("model kernels must be odd");
    if (downsample_factor < 1) throw ValidationError("model.downsample_factor must be >= 1");
    if (in_channels < 1 || trunk_channels < 1 || proj_channels < 1)
      throw ValidationError("model channel counts must be >= 1");
    if (!(topk_fraction > 0.0 && topk_fraction <= 1.0))
      throw ValidationError("model.topk_fraction must be in (0, 1]");
  }

  std::size_t output_length(std::size_t T) const { return (T - 1) / downsample_factor + 1; }

  nlohmann::json to_json() const {
    return {{"in_channels", in_channels},       {"trunk_channels", trunk_channels},
            {"proj_channels", proj_channels},   {"downsample_factor", downsample_factor},
            {"trunk_kernel", trunk_kernel},     {"res_kernel", res_kernel},
            {"pooling", pooling},               {"topk_fraction", topk_fraction}};
  }

  std::string hash() const { return to_hex(fnv1a64(to_json().dump())); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Exact trainable-parameter count, from layer shapes alone.
inline std::size_t count_parameters(const ModelConfig& c) {
  const auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k + cout; };
  const auto norm = [](std::size_t ch) { return 2 * ch; };
  std::size_t n = 0;
  n += conv(c.in_channels, c.trunk_channels, c.trunk_kernel) + norm(c.trunk_channels);
  n += 2 * (conv(c.trunk_channels, c.trunk_channels, c.res_kernel) + norm(c.trunk_channels));
  n += conv(c.trunk_channels, c.trunk_channels, c.res_kernel) + norm(c.trunk_channels);
  n += conv(c.trunk_channels, c.proj_channels, 1) + norm(c.proj_channels);
  n += 2 * conv(c.proj_channels, 1, 1);
  return n;
}

template <class T>
struct DetectorOutputs {
  nn::Var logit;            // [B]
  nn::Var prob;             // [B]
  nn::Var per_time_logits;  // [B, T']
  nn::Var attention;        // [B, T']
};

template <class T>
class DetectorModel {
 public:
  explicit DetectorModel(ModelConfig config, std::uint64_t init_seed = 0) : config_(config) {
    config_.validate();
    const auto& c = config_;
    add_conv("stem", c.in_channels, c.trunk_channels, c.trunk_kernel);
    add_norm("stem.norm", c.trunk_channels);
    add_conv("res.conv1", c.trunk_channels, c.trunk_channels, c.res_kernel);
    add_norm("res.norm1", c.trunk_channels);
    add_conv("res.conv2", c.trunk_channels, c.trunk_channels, c.res_kernel);
    add_norm("res.norm2", c.trunk_channels);
    add_conv("down", c.trunk_channels, c.trunk_channels, c.res_kernel);
    add_norm("down.norm", c.trunk_channels);
    add_conv("proj", c.trunk_channels, c.proj_channels, 1);
    add_norm("proj.norm", c.proj_channels);
    add_conv("head_z", c.proj_channels, 1, 1);
    add_conv("head_a", c.proj_channels, 1, 1);
    initialize(init_seed);
  }

  const ModelConfig& config() const { return config_; }

  // Fan-in-scaled uniform kernels, zero biases, unit scale / zero shift.
  void initialize(std::uint64_t seed) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const auto& name = p.name;
      std::fill(p.value.values.begin(), p.value.values.end(), T(0));
      if (name.ends_with(".scale")) {
        std::fill(p.value.values.begin(), p.value.values.end(), T(1));
      } else if (name.ends_with(".weight")) {
        const double fan_in = static_cast<double>(p.value.shape[1] * p.value.shape[2]);
        const double bound = 1.0 / std::sqrt(fan_in);
        CounterRng rng(seed, {hash_tag("init"), i});
        for (auto& v : p.value.values) v = static_cast<T>(rng.uniform(-bound, bound));
      }
      p.zero_grad();
    }
    for (auto& s : norms_) s = nn::NormState<T>(s.running_mean.size());
  }

  DetectorOutputs<T> forward(nn::Graph<T>& g, nn::Var input, nn::Mode mode) {
    const auto& xs = g.shape(input);
    if (xs.size() != 3 || xs[1] != config_.in_channels)
      throw DimensionError("model expects [B, " + std::to_string(config_.in_channels) +
                           ", T] input, got " + nn::shape_string(xs));
    const std::size_t B = xs[0];
    const auto tk = config_.trunk_kernel, rk = config_.res_kernel;

    auto h = conv_norm_relu(g, input, "stem", "stem.norm", 1, (tk - 1) / 2, mode, true);
    auto r = conv_norm_relu(g, h, "res.conv1", "res.norm1", 1, (rk - 1) / 2, mode, true);
    r = conv_norm_relu(g, r, "res.conv2", "res.norm2", 1, (rk - 1) / 2, mode, false);
    h = nn::relu(g, nn::add(g, h, r));
    h = conv_norm_relu(g, h, "down", "down.norm", config_.downsample_factor, (rk - 1) / 2, mode, true);
    h = conv_norm_relu(g, h, "proj", "proj.norm", 1, 0, mode, true);

    const std::size_t Tp = g.shape(h)[2];
    auto z = nn::reshape(g, conv(g, h, "head_z", 1, 0), {B, Tp});
    auto a = nn::reshape(g, conv(g, h, "head_a", 1, 0), {B, Tp});
    DetectorOutputs<T> out;
    out.per_time_logits = z;
    if (config_.pooling == Pooling::attention) {
      out.attention = nn::softmax_time(g, a);
      out.logit = nn::sum_time(g, nn::mul(g, out.attention, z));
    } else {
      out.attention = nn::softmax_time(g, a);
      out.logit = nn::topk_mean_time(g, z, config_.topk_fraction);
    }
    out.prob = nn::sigmoid(g, out.logit);
    return out;
  }

  // Eval-mode logits for a [B, C, T] batch.
  std::vector<T> predict_logits(const nn::Tensor<T>& batch) {
    nn::Graph<T> g;
    const auto out = forward(g, g.input(batch), nn::Mode::eval);
    return g.value(out.logit).values;
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  const std::vector<nn::Parameter<T>>& parameter_list() const { return params_; }
  nn::Parameter<T>& parameter(const std::string& name) { return params_.at(index_of(name)); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Trainable arrays followed by the normalization running statistics.
  std::vector<nn::NamedArray<T>> state_arrays() const {
    std::vector<nn::NamedArray<T>> out;
    for (const auto& p : params_) out.push_back({p.name, p.value.shape, p.value.values});
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      const auto C = norms_[i].running_mean.size();
      out.push_back({norm_names_[i] + ".running_mean", {C}, norms_[i].running_mean});
      out.push_back({norm_names_[i] + ".running_var", {C}, norms_[i].running_var});
    }
    return out;
  }

  template <class U>
  void load_state_arrays(const std::map<std::string, nn::NamedArray<U>>& arrays) {
    const auto fetch = [&](const std::string& name, std::size_t n) -> const std::vector<U>& {
      const auto it = arrays.find(name);
      if (it == arrays.end()) throw CheckpointError("checkpoint lacks array " + name);
      if (it->second.values.size() != n) throw CheckpointError("checkpoint array " + name + " has wrong size");
      return it->second.values;
    };
    for (auto& p : params_) {
      const auto& v = fetch(p.name, p.value.size());
      std::transform(v.begin(), v.end(), p.value.values.begin(), [](U x) { return static_cast<T>(x); });
    }
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      auto& s = norms_[i];
      const auto& m = fetch(norm_names_[i] + ".running_mean", s.running_mean.size());
      const auto& v = fetch(norm_names_[i] + ".running_var", s.running_var.size());
      std::transform(m.begin(), m.end(), s.running_mean.begin(), [](U x) { return static_cast<T>(x); });
      std::transform(v.begin(), v.end(), s.running_var.begin(), [](U x) { return static_cast<T>(x); });
    }
  }

  nn::NormState<T>& norm_state(const std::string& name) {
    for (std::size_t i = 0; i < norm_names_.size(); ++i)
      if (norm_names_[i] == name) return norms_[i];
    throw UsageError("no normalization layer " + name);
  }

 private:
  void add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    params_.emplace_back(name + ".weight", nn::Tensor<T>(nn::Shape{cout, cin, k}));
    params_.emplace_back(name + ".bias", nn::Tensor<T>(nn::Shape{cout}));
  }
  void add_norm(const std::string& name, std::size_t ch) {
    params_.emplace_back(name + ".scale", nn::Tensor<T>(nn::Shape{ch}, T(1)));
    params_.emplace_back(name + ".shift", nn::Tensor<T>(nn::Shape{ch}));
    norm_names_.push_back(name);
    norms_.emplace_back(ch);
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw UsageError("no parameter " + name);
  }

  nn::Var conv(nn::Graph<T>& g, nn::Var x, const std::string& layer, std::size_t stride,
               std::size_t padding) {
    return nn::conv1d(g, x, g.param(parameter(layer + ".weight")),
                      std::optional<nn::Var>(g.param(parameter(layer + ".bias"))), stride, padding);
  }

  nn::Var conv_norm_relu(nn::Graph<T>& g, nn::Var x, const std::string& layer,
                         const std::string& norm, std::size_t stride, std::size_t padding,
                         nn::Mode mode, bool activate) {
    auto y = conv(g, x, layer, stride, padding);
    y = nn::batch_norm(g, y, g.param(parameter(norm + ".scale")),
                       g.param(parameter(norm + ".shift")), norm_state(norm), mode);
    return activate ? nn::relu(g, y) : y;
  }

  ModelConfig config_;
  std::vector<nn::Parameter<T>> params_;
  std::vector<std::string> norm_names_;
  std::vector<nn::NormState<T>> norms_;
};

// Weighted sum along time of z [B, T'] with weights w [B, T'] whose rows are
// nonnegative and sum to one.
inline std::vector<double> pool(std::span<const double> z, std::span<const double> w,
                                std::size_t time_steps) {
  if (z.size() != w.size() || time_steps == 0 || z.size() % time_steps != 0)
    throw DimensionError("pool: z and w must both be [B, T']");
  std::vector<double> out(z.size() / time_steps);
  for (std::size_t b = 0; b < out.size(); ++b) {
    double total = 0.0, acc = 0.0;
    for (std::size_t t = 0; t < time_steps; ++t) {
      const double wt = w[b * time_steps + t];
      if (wt < 0.0) throw ContractError("pool: negative weight");
      total += wt;
      acc += wt * z[b * time_steps + t];
    }
    if (std::abs(total - 1.0) > 1e-6) throw ContractError("pool: weights do not sum to 1");
    out[b] = acc;
  }
  return out;
}

// Checkpoint = model state arrays + header carrying the model config and its
// hash so mismatched configs are rejected at load time.
template <class T>
void save_model(const std::filesystem::path& base, const DetectorModel<T>& model,
                nlohmann::json extra = nlohmann::json::object()) {
  extra["model_config"] = model.config().to_json();
  extra["config_hash"] = model.config().hash();
  extra["parameter_count"] = model.parameter_count();
  nn::save_checkpoint(base, model.state_arrays(), extra);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.trunk_channels = j.at("trunk_channels").get<std::size_t>();
  c.proj_channels = j.at("proj_channels").get<std::size_t>();
  c.downsample_factor = j.at("downsample_factor").get<std::size_t>();
  c.trunk_kernel = j.at("trunk_kernel").get<std::size_t>();
  c.res_kernel = j.at("res_kernel").get<std::size_t>();
  c.pooling = j.at("pooling").get<Pooling>();
  c.topk_fraction = j.at("topk_fraction").get<double>();
  c.validate();
  return c;
}

template <class T>
struct LoadedModel {
  DetectorModel<T> model;
  nlohmann::json header;
};

template <class T>
LoadedModel<T> load_model(const std::filesystem::path& base,
                          std::optional<std::string> expected_hash = std::nullopt) {
  auto ckpt = nn::load_checkpoint<T>(base);
  const auto config = model_config_from_json(ckpt.header.at("model_config"));
  const auto stored = ckpt.header.at("config_hash").template get<std::string>();
  if (stored != config.hash())
    throw CheckpointError("checkpoint config hash does not match its model config");
  if (expected_hash && *expected_hash != stored)
    throw CheckpointError("checkpoint config hash " + stored + " != expected " + *expected_hash);
  DetectorModel<T> model(config);
  model.load_state_arrays(ckpt.arrays);
  return {std::move(model), std::move(ckpt.header)};
}

}  // namespace nkws
