#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace drex {

// Dense row-major fp64 tensor. Shapes are validated by the free
// functions below; NaN/Inf are rejected at operation boundaries.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
  void fill(double v);
};

std::size_t numel(const std::vector<std::size_t>& shape);
bool all_finite(const Tensor& t);
void ensure_finite(const Tensor& t, const std::string& where);

enum class Activation { Sigmoid, Tanh, SoftmaxLastAxis, Hinge };

// Elementwise for Sigmoid/Tanh/Hinge; per-row normalization for
// SoftmaxLastAxis (max-subtracted for stability). Rejects non-finite input.
Tensor activate(const Tensor& x, Activation kind);

Tensor matmul(const Tensor& a, const Tensor& b);
// m: [rows x cols], x: [cols] -> [rows]
Tensor matvec(const Tensor& m, const Tensor& x);
// Valid convolution over flattened windows: x [n x w] row-major,
// filters [k x (window*w)], bias [k] -> [k x (n-window+1)]; output
// column i dots each filter against the span of `window` rows starting
// at row i, plus that filter's bias.
Tensor conv_valid_forward(const Tensor& x, const Tensor& filters, const Tensor& bias, int window);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double dot(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<const Tensor*>& parts);

double l2_norm(const Tensor& a);

namespace detail {
double sigmoid_scalar(double x);
double softplus_scalar(double x);

// Inner product over raw spans with four independent accumulators so
// the adds pipeline instead of serializing on one dependency chain;
// the fixed combine order keeps results deterministic.
inline double dot_span(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}
}  // namespace detail

}  // namespace drex
