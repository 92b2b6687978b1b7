// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cuti {

/// Dense row-major array of doubles with rank 1..4.
///
/// Feature maps use the [N, C, H, W] layout; statistics use [N, C]; linear
/// weights use [out, in]. Shape never changes after construction except via
/// reshape(), which preserves the element count.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  /// Pointer to the [H, W] plane of sample n, channel c (rank-4 only).
  double* plane(int n, int c) {
    return data_.data() + (static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const double* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] * shape_[3];
  }

  Tensor reshaped(std::vector<int> shape) const;
  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Rows [begin, end) along axis 0.
  Tensor slice(int begin, int end) const;
  /// Gathers rows along axis 0.
  Tensor gather(std::span<const int> rows) const;

  std::string shape_string() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t element_count(const std::vector<int>& shape);

/// Throws InvalidInput unless t is rank 4 with every entry finite.
void require_feature_map(const Tensor& t, const char* what);

}  // namespace cuti
