#include "drex/tensor.hpp"

#include <cmath>

#include "doctest.h"
#include "drex/errors.hpp"
#include "drex/rng.hpp"

using drex::Activation;
using drex::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, drex::Rng& rng) {
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data) v = rng.uniform() * 2.0 - 1.0;
  return t;
}

}  // namespace

TEST_CASE("matmul identity case") {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor out = drex::matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[i] == a.data[i]);
}

TEST_CASE("matmul hand arithmetic 1x2 by 2x1") {
  Tensor a = Tensor::matrix({{1, 2}});
  Tensor b = Tensor::matrix({{3}, {4}});
  Tensor out = drex::matmul(a, b);
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 1);
  CHECK(out.data[0] == 11.0);
}

TEST_CASE("matmul with a zero matrix annihilates") {
  Tensor a = Tensor::matrix({{1.5, -2}, {0.25, 4}});
  Tensor z = Tensor::zeros({2, 3});
  Tensor out = drex::matmul(a, z);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(drex::matmul(a, b), drex::DimensionError);
}

TEST_CASE("matmul associativity on random small tensors") {
  drex::Rng rng(99, "assoc");
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_matrix(3, 4, rng);
    Tensor b = random_matrix(4, 2, rng);
    Tensor c = random_matrix(2, 5, rng);
    Tensor left = drex::matmul(drex::matmul(a, b), c);
    Tensor right = drex::matmul(a, drex::matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i)
      CHECK(std::abs(left.data[i] - right.data[i]) < 1e-9);
  }
}

TEST_CASE("sigmoid of zero is one half") {
  Tensor x = Tensor::scalar(0.0);
  CHECK(drex::activate(x, Activation::Sigmoid).data[0] == 0.5);
}

TEST_CASE("softmax of equal entries is uniform for any constant") {
  for (double c : {-1000.0, -3.5, 0.0, 7.25, 1000.0}) {
    Tensor x = Tensor::vec({c, c});
    Tensor y = drex::activate(x, Activation::SoftmaxLastAxis);
    CHECK(y.data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.data[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("hinge matches max(0, x)") {
  Tensor x = Tensor::vec({-0.2, 0.2, 0.0});
  Tensor y = drex::activate(x, Activation::Hinge);
  CHECK(y.data[0] == 0.0);
  CHECK(y.data[1] == 0.2);
  CHECK(y.data[2] == 0.0);
}

TEST_CASE("softmax rows sum to one and entries lie in (0,1)") {
  drex::Rng rng(17, "softmax-prop");
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_matrix(4, 6, rng);
    for (double& v : x.data) v *= 20.0;
    Tensor y = drex::activate(x, Activation::SoftmaxLastAxis);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        double p = y.at(r, c);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sigmoid and tanh ranges hold for extreme finite inputs") {
  Tensor x = Tensor::vec({-745.0, -30.0, 0.0, 30.0, 745.0});
  Tensor s = drex::activate(x, Activation::Sigmoid);
  Tensor t = drex::activate(x, Activation::Tanh);
  for (double v : s.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::isfinite(v));
  }
  for (double v : t.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(std::isfinite(v));
  }
  // Away from fp64 saturation the open interval is strict.
  Tensor interior = Tensor::vec({-3.0, 3.0});
  Tensor si = drex::activate(interior, Activation::Sigmoid);
  Tensor ti = drex::activate(interior, Activation::Tanh);
  CHECK(si.data[0] > 0.0);
  CHECK(si.data[1] < 1.0);
  CHECK(ti.data[0] > -1.0);
  CHECK(ti.data[1] < 1.0);
}

TEST_CASE("activate rejects non-finite input") {
  Tensor x = Tensor::vec({0.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(drex::activate(x, Activation::Sigmoid), drex::NumericError);
}

TEST_CASE("concat joins in order and l2_norm matches hand value") {
  Tensor a = Tensor::vec({3.0});
  Tensor b = Tensor::vec({4.0});
  Tensor joined = drex::concat({&a, &b});
  CHECK(joined.size() == 2);
  CHECK(drex::l2_norm(joined) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("tensor shape accessors and invariants") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  t.at(1, 2) = 7.0;
  CHECK(t.data[5] == 7.0);
  Tensor v = Tensor::vec({1, 2, 3});
  CHECK_THROWS_AS(v.rows(), drex::DimensionError);
}
