#pragma once

// The differentiable operations the detector needs, nothing more: temporal
// convolution, batch-statistics normalization, pointwise nonlinearities,
// softmax over time, elementwise arithmetic and reductions.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "neurokws/nn/graph.hpp"

namespace nkws::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// col[(c*K + k), t'] = x[c, t'*stride + k - padding], zero outside [0, T).
template <class T>
void im2col(const T* x, std::size_t cin, std::size_t T_in, std::size_t K, std::size_t stride,
            std::size_t padding, std::size_t T_out, T* col) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t k = 0; k < K; ++k) {
      T* row = col + (c * K + k) * T_out;
      const T* src = x + c * T_in;
      for (std::size_t t = 0; t < T_out; ++t) {
        const auto pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                         static_cast<std::ptrdiff_t>(padding);
        row[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(T_in)) ? src[pos] : T(0);
      }
    }
}

template <class T>
void col2im_add(const T* col, std::size_t cin, std::size_t T_in, std::size_t K,
                std::size_t stride, std::size_t padding, std::size_t T_out, T* dx) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t k = 0; k < K; ++k) {
      const T* row = col + (c * K + k) * T_out;
      T* dst = dx + c * T_in;
      for (std::size_t t = 0; t < T_out; ++t) {
        const auto pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                         static_cast<std::ptrdiff_t>(padding);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(T_in)) dst[pos] += row[t];
      }
    }
}

}  // namespace detail

inline std::size_t conv_output_length(std::size_t T, std::size_t K, std::size_t stride,
                                      std::size_t padding) {
  if (K > T + 2 * padding || stride == 0)
    throw DimensionError("conv1d: kernel " + std::to_string(K) + " longer than padded input " +
                         std::to_string(T + 2 * padding));
  return (T + 2 * padding - K) / stride + 1;
}

// Cross-correlation of x [B, Cin, T] with kernel [Cout, Cin, K] plus an
// optional bias [Cout]; output [B, Cout, T'].
template <class T>
Var conv1d(Graph<T>& g, Var x, Var kernel, std::optional<Var> bias, std::size_t stride = 1,
           std::size_t padding = 0) {
  const auto& xs = g.shape(x);
  const auto& ws = g.shape(kernel);
  detail::require(xs.size() == 3, "conv1d: input must be [B, Cin, T], got " + shape_string(xs));
  detail::require(ws.size() == 3 && ws[1] == xs[1],
                  "conv1d: kernel " + shape_string(ws) + " does not match input " + shape_string(xs));
  const std::size_t B = xs[0], cin = xs[1], T_in = xs[2], cout = ws[0], K = ws[2];
  if (bias) detail::require(g.shape(*bias) == Shape{cout}, "conv1d: bias must be [Cout]");
  const std::size_t T_out = conv_output_length(T_in, K, stride, padding);
  const bool pointwise = K == 1 && stride == 1 && padding == 0;
  const std::size_t ck = cin * K;

  auto cols = std::make_shared<std::vector<T>>(pointwise ? 0 : B * ck * T_out);
  Tensor<T> out(Shape{B, cout, T_out});
  {
    const T* xv = g.value(x).values.data();
    detail::ConstMapMat<T> W(g.value(kernel).values.data(), cout, ck);
    for (std::size_t b = 0; b < B; ++b) {
      const T* src = xv + b * cin * T_in;
      if (!pointwise) {
        T* col = cols->data() + b * ck * T_out;
        detail::im2col(src, cin, T_in, K, stride, padding, T_out, col);
        src = col;
      }
      detail::MapMat<T> Y(out.values.data() + b * cout * T_out, cout, T_out);
      Y.noalias() = W * detail::ConstMapMat<T>(src, ck, T_out);
      if (bias) {
        const T* bv = g.value(*bias).values.data();
        for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += bv[o];
      }
    }
  }
  const bool has_bias = bias.has_value();
  const Var bvar = bias.value_or(Var{});
  auto fn = [=](Graph<T>& gr, std::size_t self) {
    const T* dy = gr.grad(self).data();
    const T* xv = gr.value(x).values.data();
    detail::ConstMapMat<T> W(gr.value(kernel).values.data(), cout, ck);
    const bool need_w = gr.requires_grad(kernel);
    const bool need_x = gr.requires_grad(x);
    std::vector<T> dcol(need_x && !pointwise ? ck * T_out : 0);
    for (std::size_t b = 0; b < B; ++b) {
      detail::ConstMapMat<T> dY(dy + b * cout * T_out, cout, T_out);
      const T* col = pointwise ? xv + b * cin * T_in : cols->data() + b * ck * T_out;
      if (need_w) {
        detail::MapMat<T> dW(gr.grad_mut(kernel).data(), cout, ck);
        dW.noalias() += dY * detail::ConstMapMat<T>(col, ck, T_out).transpose();
      }
      if (need_x) {
        T* dx = gr.grad_mut(x).data() + b * cin * T_in;
        if (pointwise) {
          detail::MapMat<T>(dx, cin, T_in).noalias() += W.transpose() * dY;
        } else {
          detail::MapMat<T>(dcol.data(), ck, T_out).noalias() = W.transpose() * dY;
          detail::col2im_add(dcol.data(), cin, T_in, K, stride, padding, T_out, dx);
        }
      }
      if (has_bias && gr.requires_grad(bvar)) {
        auto db = gr.grad_mut(bvar);
        for (std::size_t o = 0; o < cout; ++o) db[o] += dY.row(o).sum();
      }
    }
  };
  if (bias) return g.record(std::move(out), {x, kernel, *bias}, fn);
  return g.record(std::move(out), {x, kernel}, fn);
}

// Running statistics of a normalization layer (not trainable).
template <class T>
struct NormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit NormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class Mode { train, eval };

// Per-channel normalization of x [B, C, T]. Train mode uses the batch mean and
// (biased) variance and moves the running statistics by `momentum`; eval mode
// uses the running statistics.
template <class T>
Var batch_norm(Graph<T>& g, Var x, Var scale, Var shift, NormState<T>& state, Mode mode,
               T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& xs = g.shape(x);
  detail::require(xs.size() == 3, "batch_norm: input must be [B, C, T]");
  const std::size_t B = xs[0], C = xs[1], Tn = xs[2];
  detail::require(g.shape(scale) == Shape{C} && g.shape(shift) == Shape{C},
                  "batch_norm: scale/shift must be [C]");
  detail::require(state.running_mean.size() == C, "batch_norm: running stats size mismatch");
  const std::size_t N = B * Tn;
  if (mode == Mode::train && N <= 1)
    throw DimensionError("batch_norm: train mode needs more than one value per channel");

  const auto& xv = g.value(x).values;
  const auto& gamma = g.value(scale).values;
  const auto& beta = g.value(shift).values;
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  Tensor<T> out(xs);
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) s += xv[(b * C + c) * Tn + t];
      const double m = s / static_cast<double>(N);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
          const double d = xv[(b * C + c) * Tn + t] - m;
          ss += d * d;
        }
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(N));
      state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mean;
      state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * var;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Tn; ++t) {
        const std::size_t i = (b * C + c) * Tn + t;
        (*xhat)[i] = (xv[i] - mean) * is;
        out.values[i] = gamma[c] * (*xhat)[i] + beta[c];
      }
  }
  const bool batch_stats = mode == Mode::train;
  return g.record(std::move(out), {x, scale, shift}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    const auto& gam = gr.value(scale).values;
    const bool need_x = gr.requires_grad(x);
    for (std::size_t c = 0; c < C; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
          const std::size_t i = (b * C + c) * Tn + t;
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * (*xhat)[i];
        }
      if (gr.requires_grad(scale)) gr.grad_mut(scale)[c] += sum_dy_xhat;
      if (gr.requires_grad(shift)) gr.grad_mut(shift)[c] += sum_dy;
      if (!need_x) continue;
      auto dx = gr.grad_mut(x);
      const T k = gam[c] * (*inv_std)[c];
      const T n = static_cast<T>(N);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
          const std::size_t i = (b * C + c) * Tn + t;
          if (batch_stats)
            dx[i] += k * (dy[i] - sum_dy / n - (*xhat)[i] * sum_dy_xhat / n);
          else
            dx[i] += k * dy[i];
        }
    }
  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values) v = v > T(0) ? v : T(0);
  if (g.tracking_branches())
    for (std::size_t i = 0; i < out.size(); ++i) g.note_branch(out.values[i] > T(0) ? 2 * i + 1 : 2 * i);
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    const auto& xv = gr.value(x).values;
    auto dx = gr.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > T(0)) dx[i] += dy[i];
  });
}

template <class T>
T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values) v = sigmoid_scalar(v);
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    const auto& y = gr.value(Var{self}).values;
    auto dx = gr.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
}

// Softmax along the last axis, max-subtracted.
template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, std::size_t row_len) {
  for (std::size_t r = 0; r * row_len < in.size(); ++r) {
    const T* src = in.data() + r * row_len;
    T* dst = out.data() + r * row_len;
    const T mx = *std::max_element(src, src + row_len);
    T total = 0;
    for (std::size_t t = 0; t < row_len; ++t) total += dst[t] = std::exp(src[t] - mx);
    for (std::size_t t = 0; t < row_len; ++t) dst[t] /= total;
  }
}

template <class T>
Var softmax_time(Graph<T>& g, Var x) {
  const auto& xs = g.shape(x);
  detail::require(!xs.empty(), "softmax_time: scalar input");
  const std::size_t L = xs.back();
  Tensor<T> out(xs);
  softmax_rows<T>(g.value(x).values, out.values, L);
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    const auto& y = gr.value(Var{self}).values;
    auto dx = gr.grad_mut(x);
    for (std::size_t r = 0; r * L < dy.size(); ++r) {
      T dot = 0;
      for (std::size_t t = 0; t < L; ++t) dot += dy[r * L + t] * y[r * L + t];
      for (std::size_t t = 0; t < L; ++t) dx[r * L + t] += y[r * L + t] * (dy[r * L + t] - dot);
    }
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::require(g.shape(a) == g.shape(b), "add: shape mismatch " + shape_string(g.shape(a)) +
                                                " vs " + shape_string(g.shape(b)));
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b).values;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += bv[i];
  return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      auto d = gr.grad_mut(v);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::require(g.shape(a) == g.shape(b), "mul: shape mismatch");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b).values;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= bv[i];
  return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    const auto& av = gr.value(a).values;
    const auto& bvv = gr.value(b).values;
    if (gr.requires_grad(a)) {
      auto d = gr.grad_mut(a);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * bvv[i];
    }
    if (gr.requires_grad(b)) {
      auto d = gr.grad_mut(b);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values) v *= factor;
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    auto dx = gr.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  detail::require(numel(shape) == g.value(x).size(), "reshape: element count changes");
  Tensor<T> out(std::move(shape), g.value(x).values);
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    auto dx = gr.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

// Sum over the last axis: [..., L] -> [...].
template <class T>
Var sum_time(Graph<T>& g, Var x) {
  const auto& xs = g.shape(x);
  detail::require(xs.size() >= 2, "sum_time: needs at least 2 axes");
  const std::size_t L = xs.back();
  Shape os(xs.begin(), xs.end() - 1);
  Tensor<T> out(os);
  const auto& xv = g.value(x).values;
  for (std::size_t r = 0; r < out.size(); ++r) {
    T s = 0;
    for (std::size_t t = 0; t < L; ++t) s += xv[r * L + t];
    out.values[r] = s;
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    auto dx = gr.grad_mut(x);
    for (std::size_t r = 0; r < dy.size(); ++r)
      for (std::size_t t = 0; t < L; ++t) dx[r * L + t] += dy[r];
  });
}

template <class T>
Var sum_all(Graph<T>& g, Var x) {
  const auto& xv = g.value(x).values;
  T s = 0;
  for (T v : xv) s += v;
  return g.record(Tensor<T>(Shape{1}, std::vector<T>{s}), {x},
                  [=](Graph<T>& gr, std::size_t self) {
                    const T dy = gr.grad(self)[0];
                    for (auto& d : gr.grad_mut(x)) d += dy;
                  });
}

template <class T>
Var mean_all(Graph<T>& g, Var x) {
  const auto n = static_cast<T>(g.value(x).size());
  return scale(g, sum_all(g, x), T(1) / n);
}

// Mean of the ceil(fraction * L) largest entries of each row of x [B, L];
// ties keep the earlier index.
template <class T>
Var topk_mean_time(Graph<T>& g, Var x, double fraction) {
  const auto& xs = g.shape(x);
  detail::require(xs.size() == 2, "topk_mean_time: input must be [B, L]");
  const std::size_t B = xs[0], L = xs[1];
  const auto k = std::max<std::size_t>(
      1, std::min<std::size_t>(L, static_cast<std::size_t>(std::ceil(fraction * L - 1e-9))));
  auto chosen = std::make_shared<std::vector<std::size_t>>(B * k);
  Tensor<T> out(Shape{B});
  const auto& xv = g.value(x).values;
  std::vector<std::size_t> idx(L);
  for (std::size_t b = 0; b < B; ++b) {
    std::iota(idx.begin(), idx.end(), 0);
    const T* row = xv.data() + b * L;
    std::stable_sort(idx.begin(), idx.end(),
                     [row](std::size_t i, std::size_t j) { return row[i] > row[j]; });
    T s = 0;
    for (std::size_t i = 0; i < k; ++i) {
      (*chosen)[b * k + i] = idx[i];
      s += row[idx[i]];
    }
    out.values[b] = s / static_cast<T>(k);
    if (g.tracking_branches())
      for (std::size_t i = 0; i < k; ++i) g.note_branch(b * L + idx[i]);
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const auto dy = gr.grad(self);
    auto dx = gr.grad_mut(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < k; ++i)
        dx[b * L + (*chosen)[b * k + i]] += dy[b] / static_cast<T>(k);
  });
}

}  // namespace nkws::nn
