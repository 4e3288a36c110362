// SPDX-License-Identifier: Apache-2.0

#include "shrinkpipe/tensor.hpp"

#include <cmath>
#include <sstream>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/rng.hpp"

namespace shrinkpipe {

std::size_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  std::size_t n = 1;
  for (const int d : shape) {
    if (d < 1) throw ShapeError("tensor: dim " + std::to_string(d) + " < 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}

Tensor Tensor::full(std::vector<int> s, float v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<float> values) {
  const std::size_t n = shape_numel(s);
  if (n != values.size()) {
    throw ShapeError("tensor: shape wants " + std::to_string(n) + " values, got " + std::to_string(values.size()));
  }
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(values);
  return t;
}

void Tensor::fill(float v) {
  for (float& x : data) x = v;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const {
  for (const float x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor gaussian_tensor(std::vector<int> shape, float stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& x : t.data) x = static_cast<float>(rng.gaussian(0.0, stddev));
  return t;
}

}  // namespace shrinkpipe
