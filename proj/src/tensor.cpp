#include "apseg/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "apseg/errors.hpp"

namespace apseg {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> dims, double fill_value)
    : shape(std::move(dims)), data(element_count(shape), fill_value) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values)
    : shape(std::move(dims)), data(std::move(values)) {
  if (data.size() != element_count(shape))
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

}  // namespace apseg
