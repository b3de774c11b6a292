#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "neurokws/error.hpp"

namespace nkws::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Dense row-major array.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != numel(shape))
      throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                           std::to_string(values.size()) + " values");
  }

  std::size_t size() const { return values.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
};

// Trainable array with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), T(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

}  // namespace nkws::nn
