#pragma once

// Class-balanced batch construction and training-time augmentation.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "neurokws/corpus.hpp"
#include "neurokws/random.hpp"

namespace nkws {

struct SamplerConfig {
  double positive_fraction = 0.5;
  std::size_t jitter_samples = 10;
  double noise_std_fraction = 0.1;
  std::size_t batch_size = 32;

  std::size_t positives_per_batch() const {
    return static_cast<std::size_t>(std::llround(positive_fraction * static_cast<double>(batch_size)));
  }

  void validate() const {
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
      throw ValidationError("sampler.positive_fraction must be in (0, 1)");
    if (positives_per_batch() < 1 || positives_per_batch() >= batch_size)
      throw ValidationError("sampler.batch_size too small for positive_fraction");
    if (noise_std_fraction < 0.0) throw ValidationError("sampler.noise_std_fraction must be >= 0");
  }
};

struct Batch {
  std::vector<std::size_t> indices;  // into the example list
  std::vector<int> labels;
};

// Positives are drawn with replacement; negatives without replacement from a
// fresh permutation each epoch. An epoch is one pass over the negatives:
// floor(N_neg / negatives_per_batch) batches, the remainder of the
// permutation is left for later epochs' permutations.
class BalancedBatchSampler {
 public:
  BalancedBatchSampler(std::span<const int> labels, SamplerConfig cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos_ : neg_).push_back(i);
    if (pos_.empty() || neg_.empty())
      throw InfeasibleError("balanced sampler needs at least one positive and one negative example");
  }

  std::size_t positives_per_batch() const { return cfg_.positives_per_batch(); }
  std::size_t negatives_per_batch() const { return cfg_.batch_size - cfg_.positives_per_batch(); }
  std::size_t batches_per_epoch() const { return std::max<std::size_t>(1, neg_.size() / negatives_per_batch()); }
  std::size_t n_positive() const { return pos_.size(); }
  std::size_t n_negative() const { return neg_.size(); }

  std::vector<Batch> epoch(std::size_t epoch_index) const {
    const std::size_t n_pos = positives_per_batch(), n_neg = negatives_per_batch();
    std::vector<std::size_t> order;
    std::size_t perm = 0;
    const auto refill = [&] {
      std::vector<std::size_t> p = neg_;
      CounterRng rng(seed_, {hash_tag("negatives"), epoch_index, perm++});
      rng.shuffle(std::span(p));
      order.insert(order.end(), p.begin(), p.end());
    };
    std::vector<Batch> batches(batches_per_epoch());
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      CounterRng rng(seed_, {hash_tag("positives"), epoch_index, b});
      auto& batch = batches[b];
      for (std::size_t k = 0; k < n_pos; ++k) {
        batch.indices.push_back(pos_[rng.index(pos_.size())]);
        batch.labels.push_back(1);
      }
      for (std::size_t k = 0; k < n_neg; ++k) {
        while (cursor >= order.size()) refill();
        batch.indices.push_back(order[cursor++]);
        batch.labels.push_back(0);
      }
    }
    return batches;
  }

 private:
  SamplerConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::size_t> pos_;
  std::vector<std::size_t> neg_;
};

// Re-slices the window from its source session at an integer offset drawn
// uniformly from [-jitter, +jitter] (no shift when that leaves the session),
// z-scores it, then adds Gaussian noise of std noise_std_fraction in
// normalized units, i.e. noise_std_fraction x the training per-channel std.
// Returns the realized shift.
template <class T>
std::int64_t augment(const WindowExample& window, const Normalizer& norm,
                     std::size_t jitter_samples, double noise_std_fraction, CounterRng& rng,
                     std::span<T> out) {
  std::int64_t shift = 0;
  if (jitter_samples > 0) {
    const auto j = static_cast<std::int64_t>(jitter_samples);
    shift = rng.integer(-j, j);
    if (!window.shift_in_bounds(shift)) shift = 0;
  }
  window.copy_signal(out, &norm, shift);
  if (noise_std_fraction > 0.0)
    for (auto& v : out) v = static_cast<T>(v + noise_std_fraction * rng.normal());
  return shift;
}

}  // namespace nkws
