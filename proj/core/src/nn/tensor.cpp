#include "sam/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam::nn {

std::string shape_str(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError(fmt::format("{} values do not fill shape {}", data_.size(),
                                 shape_str(shape_)));
  }
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) {
    throw ShapeError(fmt::format("axis {} out of range for {}", i, shape_str(shape_)));
  }
  return shape_[static_cast<std::size_t>(i)];
}

double& Tensor::at(int c, int y, int x) {
  const int h = shape_[shape_.size() - 2];
  const int w = shape_.back();
  return data_[(static_cast<std::size_t>(c) * h + y) * w + x];
}

double Tensor::at(int c, int y, int x) const {
  const int h = shape_[shape_.size() - 2];
  const int w = shape_.back();
  return data_[(static_cast<std::size_t>(c) * h + y) * w + x];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.size() != size()) {
    throw ShapeError(fmt::format("cannot add {} to {}", shape_str(other.shape_),
                                 shape_str(shape_)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.size() != size()) {
    throw ShapeError(fmt::format("cannot subtract {} from {}", shape_str(other.shape_),
                                 shape_str(shape_)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError(fmt::format("max_abs_diff: {} vs {}", shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  return std::accumulate(t.values().begin(), t.values().end(), 0.0);
}

double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

void round_to_float(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace sam::nn
