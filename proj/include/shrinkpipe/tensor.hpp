// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major f32 tensor. All weight matrices and activations in the
// toolkit are instances of this one type; shape is carried at runtime.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace shrinkpipe {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v);
  static Tensor from(std::vector<int> s, std::vector<float> values);
  static Tensor scalar(float v) { return from({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)]; }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  void fill(float v);
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  bool all_finite() const;
};

// numel implied by a shape vector; throws on non-positive dims.
std::size_t shape_numel(const std::vector<int>& shape);

Tensor gaussian_tensor(std::vector<int> shape, float stddev, class Rng& rng);

}  // namespace shrinkpipe
