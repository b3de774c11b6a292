#pragma once

// Imbalance-aware objective: focal loss on window probabilities plus a small
// pairwise logistic ranking term on window logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "neurokws/nn/graph.hpp"
#include "neurokws/nn/ops.hpp"
#include "neurokws/random.hpp"

namespace nkws {

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double rank_weight = 0.1;
  std::size_t rank_pairs_per_batch = 64;

  void validate() const {
    if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ValidationError("loss.focal_alpha must be in (0, 1)");
    if (focal_gamma < 0.0) throw ValidationError("loss.focal_gamma must be >= 0");
    if (rank_weight < 0.0) throw ValidationError("loss.rank_weight must be >= 0");
  }
};

inline constexpr double kProbClamp = 1e-7;

namespace detail {

struct FocalTerm {
  double value;
  double d_prob;  // derivative of the per-example loss w.r.t. the clamped prob
};

inline FocalTerm focal_term(double p, int label, double alpha, double gamma) {
  const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double pt = label ? p : 1.0 - p;
  const double at = label ? alpha : 1.0 - alpha;
  const double q = 1.0 - pt;
  const double value = -at * std::pow(q, gamma) * std::log(pt);
  const double d_pt =
      at * ((gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(pt)) - std::pow(q, gamma) / pt);
  return {value, clamped ? 0.0 : (label ? d_pt : -d_pt)};
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// Mean over the batch of -alpha_t (1 - p_t)^gamma log p_t.
inline double focal_loss(std::span<const double> prob, std::span<const int> labels, double alpha,
                         double gamma) {
  if (prob.size() != labels.size() || prob.empty()) throw DimensionError("focal_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    total += detail::focal_term(prob[i], labels[i], alpha, gamma).value;
  return total / static_cast<double>(prob.size());
}

template <class T>
nn::Var focal_loss(nn::Graph<T>& g, nn::Var prob, std::span<const int> labels, double alpha,
                   double gamma) {
  const auto& p = g.value(prob).values;
  if (p.size() != labels.size() || p.empty()) throw DimensionError("focal_loss: size mismatch");
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    total += detail::focal_term(p[i], y[i], alpha, gamma).value;
    if (g.tracking_branches() && (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp)) g.note_branch(i);
  }
  const double n = static_cast<double>(p.size());
  return g.record(nn::Tensor<T>(nn::Shape{1}, std::vector<T>{static_cast<T>(total / n)}), {prob},
                  [=](nn::Graph<T>& gr, std::size_t self) {
                    const double dy = gr.grad(self)[0];
                    const auto& pv = gr.value(prob).values;
                    auto dp = gr.grad_mut(prob);
                    for (std::size_t i = 0; i < pv.size(); ++i)
                      dp[i] += static_cast<T>(dy * detail::focal_term(pv[i], y[i], alpha, gamma).d_prob / n);
                  });
}

struct RankPair {
  std::size_t positive;
  std::size_t negative;
};

// n_pairs (positive, negative) index pairs drawn uniformly with replacement;
// empty when either class is absent.
inline std::vector<RankPair> sample_rank_pairs(std::span<const int> labels, std::size_t n_pairs,
                                               std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  std::vector<RankPair> pairs;
  if (pos.empty() || neg.empty()) return pairs;
  CounterRng rng(seed, {hash_tag("rank-pairs")});
  pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const auto i = pos[rng.index(pos.size())];
    const auto j = neg[rng.index(neg.size())];
    pairs.push_back({i, j});
  }
  return pairs;
}

// Mean of log(1 + exp(-(logit_i - logit_j))) over the sampled pairs.
inline double pairwise_rank_loss(std::span<const double> logits, std::span<const int> labels,
                                 std::size_t n_pairs, std::uint64_t seed) {
  const auto pairs = sample_rank_pairs(labels, n_pairs, seed);
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += detail::softplus(-(logits[i] - logits[j]));
  return total / static_cast<double>(pairs.size());
}

template <class T>
nn::Var pairwise_rank_loss(nn::Graph<T>& g, nn::Var logits, std::span<const int> labels,
                           std::size_t n_pairs, std::uint64_t seed) {
  const auto pairs = sample_rank_pairs(labels, n_pairs, seed);
  const auto& l = g.value(logits).values;
  if (l.size() != labels.size()) throw DimensionError("pairwise_rank_loss: size mismatch");
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += detail::softplus(-(static_cast<double>(l[i]) - l[j]));
  const double n = pairs.empty() ? 1.0 : static_cast<double>(pairs.size());
  return g.record(nn::Tensor<T>(nn::Shape{1}, std::vector<T>{static_cast<T>(total / n)}), {logits},
                  [=](nn::Graph<T>& gr, std::size_t self) {
                    const double dy = gr.grad(self)[0];
                    const auto& lv = gr.value(logits).values;
                    auto dl = gr.grad_mut(logits);
                    for (const auto& [i, j] : pairs) {
                      const double s = nn::sigmoid_scalar(-(static_cast<double>(lv[i]) - lv[j]));
                      dl[i] -= static_cast<T>(dy * s / n);
                      dl[j] += static_cast<T>(dy * s / n);
                    }
                  });
}

// focal(prob) + rank_weight * rank(logit)
template <class T>
nn::Var detector_loss(nn::Graph<T>& g, nn::Var logit, nn::Var prob, std::span<const int> labels,
                      const LossConfig& cfg, std::uint64_t pair_seed) {
  auto loss = focal_loss(g, prob, labels, cfg.focal_alpha, cfg.focal_gamma);
  if (cfg.rank_weight > 0.0) {
    auto rank = pairwise_rank_loss(g, logit, labels, cfg.rank_pairs_per_batch, pair_seed);
    loss = nn::add(g, loss, nn::scale(g, rank, static_cast<T>(cfg.rank_weight)));
  }
  return loss;
}

}  // namespace nkws
