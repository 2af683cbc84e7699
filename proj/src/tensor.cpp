#include "drex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "drex/errors.hpp"

namespace drex {

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.data.assign(numel(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t = zeros(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols)
    throw DimensionError("matrix: value count does not match rows*cols");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(values);
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  t.shape = {rows.size(), cols};
  t.data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("matrix: ragged initializer rows");
    t.data.insert(t.data.end(), row.begin(), row.end());
  }
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows: tensor is not rank-2, shape " + shape_str());
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols: tensor is not rank-2, shape " + shape_str());
  return shape[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void ensure_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t)) throw NumericError(where + ": non-finite value");
}

namespace detail {

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // log(1 + e^x), stable for large |x|.
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

Tensor activate(const Tensor& x, Activation kind) {
  ensure_finite(x, "activate");
  Tensor y = x;
  switch (kind) {
    case Activation::Sigmoid:
      for (double& v : y.data) v = detail::sigmoid_scalar(v);
      return y;
    case Activation::Tanh:
      for (double& v : y.data) v = std::tanh(v);
      return y;
    case Activation::Hinge:
      for (double& v : y.data) v = v > 0.0 ? v : 0.0;
      return y;
    case Activation::SoftmaxLastAxis: {
      std::size_t width = x.rank() == 0 ? 0 : x.shape.back();
      if (width == 0) throw DimensionError("softmax: empty last axis");
      std::size_t rows = x.size() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        double* row = y.data.data() + r * width;
        double mx = row[0];
        for (std::size_t i = 1; i < width; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < width; ++i) {
          row[i] = std::exp(row[i] - mx);
          sum += row[i];
        }
        for (std::size_t i = 0; i < width; ++i) row[i] /= sum;
      }
      return y;
    }
  }
  throw SpecError("activate: unknown kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expects rank-2 operands, got " + a.shape_str() + " and " +
                         b.shape_str());
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                         b.shape_str());
  std::size_t m = a.rows(), n = a.cols(), p = b.cols();
  Tensor out = Tensor::zeros({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * n;
    double* orow = out.data.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matvec(const Tensor& m, const Tensor& x) {
  if (m.rank() != 2 || x.rank() != 1)
    throw DimensionError("matvec: expects matrix and vector, got " + m.shape_str() + " and " +
                         x.shape_str());
  if (m.cols() != x.size())
    throw DimensionError("matvec: dimensions disagree, " + m.shape_str() + " vs " + x.shape_str());
  std::size_t r = m.rows(), c = m.cols();
  Tensor out = Tensor::zeros({r});
  for (std::size_t i = 0; i < r; ++i)
    out.data[i] = detail::dot_span(m.data.data() + i * c, x.data.data(), c);
  return out;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch, " + a.shape_str() + " vs " +
                         b.shape_str());
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  return detail::dot_span(a.data.data(), b.data.data(), a.size());
}

Tensor conv_valid_forward(const Tensor& x, const Tensor& filters, const Tensor& bias,
                          int window) {
  if (x.rank() != 2 || filters.rank() != 2)
    throw DimensionError("conv_valid: expects rank-2 input and filters, got " + x.shape_str() +
                         " and " + filters.shape_str());
  std::size_t n = x.rows(), w = x.cols();
  std::size_t k = filters.rows();
  if (window <= 0 || static_cast<std::size_t>(window) > n)
    throw DimensionError("conv_valid: window larger than input");
  std::size_t fw = static_cast<std::size_t>(window) * w;
  if (filters.cols() != fw)
    throw DimensionError("conv_valid: filter width " + std::to_string(filters.cols()) +
                         " does not match window*row_width " + std::to_string(fw));
  if (bias.size() != k) throw DimensionError("conv_valid: bias size does not match filter count");
  std::size_t m = n - static_cast<std::size_t>(window) + 1;

  // Window rows are contiguous in row-major layout, so column i of the
  // output dots filters against the flat span starting at row i.
  Tensor out = Tensor::zeros({k, m});
  for (std::size_t j = 0; j < k; ++j) {
    const double* f = filters.data.data() + j * fw;
    double* orow = out.data.data() + j * m;
    for (std::size_t i = 0; i < m; ++i)
      orow[i] = bias.data[j] + detail::dot_span(f, x.data.data() + i * w, fw);
  }
  return out;
}

Tensor concat(const std::vector<const Tensor*>& parts) {
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 1) throw DimensionError("concat: expects rank-1 parts");
    total += p->size();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
    off += p->size();
  }
  return out;
}

double l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace drex
