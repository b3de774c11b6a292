#pragma once

// Central finite-difference comparison for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

namespace nkws::nn {

// Loss value plus the graph's branch signature (see Graph::track_branches).
struct Probe {
  double value = 0.0;
  std::uint64_t signature = 0;
};

struct GradCheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t kink_retries = 0;  // coordinates re-probed with a smaller step
  std::size_t skipped = 0;       // coordinates sitting on a kink at every step tried
};

// loss() recomputes the scalar loss from the current values behind coords;
// analytic[i] is the gradient already computed for *coords[i]. When loss()
// returns a Probe, a step whose +h or -h evaluation lands on a different
// branch pattern than the unperturbed point is retried with h/10 (down to
// h * 1e-4); coordinates still straddling a kink are left out of the norms.
template <class LossFn>
GradCheckResult compare_gradients(std::span<double* const> coords, std::span<const double> analytic,
                                  LossFn&& loss, double h = 1e-4) {
  constexpr bool probing = std::is_same_v<std::invoke_result_t<LossFn&>, Probe>;
  const auto eval = [&]() -> Probe {
    if constexpr (probing) return loss();
    else return Probe{static_cast<double>(loss()), 0};
  };
  const std::uint64_t base = eval().signature;

  GradCheckResult r;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& x = *coords[i];
    const double saved = x;
    double step = h;
    bool clean = false, retried = false;
    double numeric = 0.0;
    for (int attempt = 0; attempt < 5; ++attempt, step /= 10.0) {
      x = saved + step;
      const Probe up = eval();
      x = saved - step;
      const Probe down = eval();
      x = saved;
      numeric = (up.value - down.value) / (2.0 * step);
      if (up.signature == base && down.signature == base) {
        clean = true;
        break;
      }
      retried = true;
    }
    r.kink_retries += retried ? 1 : 0;
    if (!clean) {
      ++r.skipped;
      continue;
    }
    const double d = analytic[i] - numeric;
    diff2 += d * d;
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
    r.max_abs_error = std::max(r.max_abs_error, std::abs(d));
    ++r.coordinates;
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
  r.relative_error = std::sqrt(diff2) / scale;
  return r;
}

}  // namespace nkws::nn
