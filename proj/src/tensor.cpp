// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cuti/error.hpp"

namespace cuti {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidInput("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  if (shape_.empty() || shape_.size() > 4) throw InvalidInput("tensor rank must be 1..4");
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 4) throw InvalidInput("tensor rank must be 1..4");
  if (element_count(shape_) != data_.size()) {
    throw InvalidInput("tensor value count does not match shape " + shape_string());
  }
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (element_count(shape) != data_.size()) {
    throw InvalidInput("cannot reshape " + shape_string());
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice(int begin, int end) const {
  if (begin < 0 || end > shape_.at(0) || begin > end) throw InvalidInput("slice out of range");
  std::size_t row = data_.size() / static_cast<std::size_t>(std::max(shape_[0], 1));
  std::vector<int> s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

Tensor Tensor::gather(std::span<const int> rows) const {
  std::size_t row = shape_.at(0) == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<int> s = shape_;
  s[0] = static_cast<int>(rows.size());
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= shape_[0]) throw InvalidInput("gather index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return Tensor(std::move(s), std::move(out));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? ", " : "") << shape_[i];
  os << ']';
  return os.str();
}

void require_feature_map(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw InvalidInput(std::string(what) + ": expected [N, C, H, W], got " + t.shape_string());
  if (t.dim(0) < 1 || t.dim(1) < 1 || t.dim(2) * t.dim(3) < 1) {
    throw InvalidInput(std::string(what) + ": empty feature map " + t.shape_string());
  }
  if (!t.all_finite()) throw InvalidInput(std::string(what) + ": non-finite entries");
}

}  // namespace cuti
