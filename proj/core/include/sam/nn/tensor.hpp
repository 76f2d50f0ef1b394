#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sam::nn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Index into the trailing three axes of a [C,H,W] tensor.
  double& at(int c, int y, int x);
  double at(int c, int y, int x) const;

  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double squared_norm(const Tensor& t);

/// Rounds every value to the nearest float32, keeping double storage.
void round_to_float(Tensor& t);

/// Bit-level equality, NaN payloads included.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace sam::nn
