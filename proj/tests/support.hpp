#pragma once

// Helpers shared by the unit suites and the acceptance binary.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "neurokws/losses.hpp"
#include "neurokws/model.hpp"
#include "neurokws/nn/gradcheck.hpp"

namespace nkws::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nkws-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(NKWS_FIXTURE_DIR) / name;
}

inline ModelConfig tiny_model_config(std::size_t channels) {
  ModelConfig c;
  c.in_channels = channels;
  c.trunk_channels = 6;
  c.proj_channels = 8;
  c.downsample_factor = 4;
  c.trunk_kernel = 7;
  c.res_kernel = 3;
  return c;
}

// Full-model check of focal + rank_weight * rank gradients, over every
// parameter and every input sample, against central differences.
inline nn::GradCheckResult model_gradient_check(std::uint64_t seed, std::size_t channels = 4,
                                                std::size_t time = 32, std::size_t batch = 4,
                                                Pooling pooling = Pooling::attention,
                                                double h = 1e-4) {
  auto config = tiny_model_config(channels);
  config.pooling = pooling;
  DetectorModel<double> model(config, seed);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  nn::Tensor<double> x({batch, channels, time});
  for (auto& v : x.values) v = nd(gen);
  std::vector<int> labels(batch);
  for (std::size_t b = 0; b < batch; ++b) labels[b] = b % 2 == 0 ? 1 : 0;
  const LossConfig loss_cfg;

  const auto loss_value = [&](bool backward, std::vector<double>* input_grad) {
    nn::Graph<double> g;
    g.track_branches(true);
    const auto in = g.input(x, backward);
    const auto out = model.forward(g, in, nn::Mode::train);
    const auto loss = detector_loss(g, out.logit, out.prob, labels, loss_cfg, seed);
    if (backward) {
      model.zero_grad();
      g.backward(loss);
      const auto gi = g.grad(in);
      input_grad->assign(gi.begin(), gi.end());
    }
    return nn::Probe{g.value(loss)[0], g.branch_signature()};
  };

  std::vector<double> input_grad;
  loss_value(true, &input_grad);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (auto* p : model.parameters())
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      coords.push_back(&p->value.values[i]);
      analytic.push_back(p->grad[i]);
    }
  for (std::size_t i = 0; i < x.size(); ++i) {
    coords.push_back(&x.values[i]);
    analytic.push_back(input_grad[i]);
  }
  return nn::compare_gradients(coords, analytic, [&] { return loss_value(false, nullptr); }, h);
}

}  // namespace nkws::testing
