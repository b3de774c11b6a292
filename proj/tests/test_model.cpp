#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "neurokws/model.hpp"
#include "support.hpp"

using namespace nkws;
using nn::Graph;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor<double> random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values) v = nd(gen);
  return t;
}

struct Forward {
  std::vector<double> logit, prob, z, w;
};

Forward run(DetectorModel<double>& m, const Tensor<double>& x, nn::Mode mode = nn::Mode::eval) {
  Graph<double> g;
  const auto out = m.forward(g, g.input(x), mode);
  return {g.value(out.logit).values, g.value(out.prob).values, g.value(out.per_time_logits).values,
          g.value(out.attention).values};
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(512 * 1 * 1 + 1 == 513);
  CHECK(306 * 128 * 7 + 128 == 274304);

  const ModelConfig def;
  // stem 274304 + norm 256; residual 2 x (49280 + 256); downsampler 49280 + 256;
  // projection 66048 + 1024; two heads of 513.
  const std::size_t expected = 274304 + 256 + 2 * (49280 + 256) + 49280 + 256 + 66048 + 1024 + 2 * 513;
  CHECK(expected == 491266);
  CHECK(count_parameters(def) == 491266);

  for (const auto& cfg : {testing::tiny_model_config(4), def}) {
    DetectorModel<float> m(cfg);
    CHECK(m.parameter_count() == count_parameters(cfg));
  }
  DetectorModel<float> m(testing::tiny_model_config(3));
  CHECK(m.parameter("head_z.weight").value.size() + m.parameter("head_z.bias").value.size() == 8 + 1);
}

TEST_CASE("output length follows floor((T - 1) / factor) + 1") {
  ModelConfig cfg = testing::tiny_model_config(306);
  CHECK(cfg.output_length(300) == 75);
  DetectorModel<double> m(cfg, 1);
  Graph<double> g;
  const auto out = m.forward(g, g.input(random_input({2, 306, 300}, 1)), nn::Mode::eval);
  CHECK(g.shape(out.per_time_logits) == Shape{2, 75});
  CHECK(g.shape(out.attention) == Shape{2, 75});
  CHECK(g.shape(out.logit) == Shape{2});
  for (std::size_t T : {1, 4, 5, 31, 32, 33})
    CHECK(m.predict_logits(random_input({1, 306, T}, T)).size() == 1);
}

TEST_CASE("a single output step pools to its own logit") {
  DetectorModel<double> m(testing::tiny_model_config(3), 2);
  const auto f = run(m, random_input({3, 3, 4}, 2));
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(f.w[b] == 1.0);
    CHECK(f.logit[b] == f.z[b]);
  }
}

TEST_CASE("a constant attention head gives the mean per-time logit") {
  DetectorModel<double> m(testing::tiny_model_config(3), 3);
  auto& w = m.parameter("head_a.weight").value.values;
  std::fill(w.begin(), w.end(), 0.0);
  m.parameter("head_a.bias").value.values[0] = 0.7;
  const auto f = run(m, random_input({2, 3, 40}, 3));
  const std::size_t Tp = f.z.size() / 2;
  for (std::size_t b = 0; b < 2; ++b) {
    const double mean = std::accumulate(f.z.begin() + b * Tp, f.z.begin() + (b + 1) * Tp, 0.0) / Tp;
    CHECK(f.logit[b] == Catch::Approx(mean).margin(1e-12));
  }
}

TEST_CASE("pool examples and contract") {
  const std::vector<double> z{1, 2, 3};
  CHECK(pool(z, std::vector<double>{0, 0, 1}, 3)[0] == 3.0);
  CHECK(pool(z, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, 3)[0] == Catch::Approx(2.0).margin(1e-15));
  CHECK_THROWS_AS(pool(z, std::vector<double>{0.5, 0.6, -0.1}, 3), ContractError);
  CHECK_THROWS_AS(pool(z, std::vector<double>{0.5, 0.6, 0.1}, 3), ContractError);
  CHECK_THROWS_AS(pool(z, std::vector<double>{0.5, 0.5}, 2), DimensionError);
}

TEST_CASE("pool is invariant to a shared permutation of time") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + trial % 9;
    std::vector<double> z(T), w(T);
    double s = 0;
    for (std::size_t t = 0; t < T; ++t) {
      z[t] = u(gen) * 10 - 5;
      s += w[t] = u(gen);
    }
    for (auto& x : w) x /= s;
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> zp(T), wp(T);
    for (std::size_t t = 0; t < T; ++t) {
      zp[t] = z[perm[t]];
      wp[t] = w[perm[t]];
    }
    CHECK(pool(zp, wp, T)[0] == Catch::Approx(pool(z, w, T)[0]).margin(1e-12));
  }
}

TEST_CASE("model pooling agrees with the free pool function") {
  DetectorModel<double> m(testing::tiny_model_config(5), 5);
  const auto f = run(m, random_input({4, 5, 64}, 5));
  const auto pooled = pool(f.z, f.w, f.z.size() / 4);
  for (std::size_t b = 0; b < 4; ++b) CHECK(pooled[b] == Catch::Approx(f.logit[b]).margin(1e-12));
}

TEST_CASE("topk pooling averages the largest per-time logits") {
  auto cfg = testing::tiny_model_config(3);
  cfg.pooling = Pooling::topk;
  cfg.topk_fraction = 0.25;
  DetectorModel<double> m(cfg, 6);
  const auto f = run(m, random_input({2, 3, 40}, 6));
  const std::size_t Tp = 10, k = 3;
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> row(f.z.begin() + b * Tp, f.z.begin() + (b + 1) * Tp);
    std::sort(row.rbegin(), row.rend());
    CHECK(f.logit[b] == Catch::Approx((row[0] + row[1] + row[2]) / k).margin(1e-12));
  }
}

TEST_CASE("outputs are valid probabilities and respond to input amplitude") {
  DetectorModel<double> m(testing::tiny_model_config(4), 7);
  // Move the running statistics off their initial values first.
  const auto x = random_input({4, 4, 48}, 7);
  for (int i = 0; i < 3; ++i) run(m, x, nn::Mode::train);
  const auto a = run(m, x);
  auto x2 = x;
  for (auto& v : x2.values) v *= 2.0;
  const auto b = run(m, x2);
  bool differs = false;
  for (std::size_t i = 0; i < a.prob.size(); ++i) {
    CHECK(a.prob[i] > 0.0);
    CHECK(a.prob[i] < 1.0);
    CHECK(std::isfinite(a.logit[i]));
    differs = differs || a.logit[i] != b.logit[i];
  }
  CHECK(differs);
}

TEST_CASE("channel mismatch is a dimension error") {
  DetectorModel<double> m(testing::tiny_model_config(4), 8);
  CHECK_THROWS_AS(m.predict_logits(random_input({1, 5, 32}, 8)), DimensionError);
}

TEST_CASE("invalid model configs are rejected") {
  ModelConfig c;
  c.trunk_kernel = 4;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig{};
  c.topk_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("initialization is seed-determined") {
  const auto cfg = testing::tiny_model_config(4);
  DetectorModel<float> a(cfg, 11), b(cfg, 11), c(cfg, 12);
  CHECK(a.parameter("stem.weight").value.values == b.parameter("stem.weight").value.values);
  CHECK(a.parameter("stem.weight").value.values != c.parameter("stem.weight").value.values);
  CHECK(a.parameter("stem.bias").value.values == std::vector<float>(6, 0.0f));
  CHECK(a.parameter("stem.norm.scale").value.values == std::vector<float>(6, 1.0f));
  const double bound = 1.0 / std::sqrt(4.0 * 7.0);
  for (float v : a.parameter("stem.weight").value.values) CHECK(std::abs(v) <= bound);
}

TEST_CASE("checkpoint round-trip reproduces outputs bit-for-bit") {
  const auto dir = testing::scratch_dir("model-ckpt");
  DetectorModel<float> m(testing::tiny_model_config(4), 9);
  Tensor<float> x({3, 4, 40});
  std::mt19937_64 gen(9);
  std::normal_distribution<float> nd;
  for (auto& v : x.values) v = nd(gen);
  {
    Graph<float> g;
    m.forward(g, g.input(x), nn::Mode::train);
  }
  save_model(dir / "m", m, {{"epoch", 3}});
  auto loaded = load_model<float>(dir / "m", m.config().hash());
  CHECK(loaded.header.at("epoch") == 3);
  CHECK(loaded.header.at("parameter_count") == m.parameter_count());
  CHECK(loaded.model.predict_logits(x) == m.predict_logits(x));
  CHECK(loaded.model.norm_state("stem.norm").running_mean == m.norm_state("stem.norm").running_mean);

  auto other = testing::tiny_model_config(4);
  other.proj_channels = 9;
  CHECK_THROWS_AS(load_model<float>(dir / "m", other.hash()), CheckpointError);
  CHECK_THROWS_AS(load_model<float>(dir / "absent"), CheckpointError);
}

TEST_CASE("full-model gradients match finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = testing::model_gradient_check(seed);
    INFO("seed " << seed << " rel " << r.relative_error << " over " << r.coordinates << " retries "
                 << r.kink_retries << " skipped " << r.skipped);
    CHECK(r.relative_error < 1e-4);
  }
  const auto topk = testing::model_gradient_check(4, 4, 32, 4, Pooling::topk);
  CHECK(topk.relative_error < 1e-4);
}
