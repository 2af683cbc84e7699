#include "drex/tape.hpp"

#include <cmath>

#include "doctest.h"
#include "drex/errors.hpp"
#include "drex/gradcheck.hpp"
#include "drex/rng.hpp"

using drex::Parameter;
using drex::ParameterStore;
using drex::Tape;
using drex::Tensor;

namespace {

void randomize(ParameterStore& store, drex::Rng& rng, double scale = 0.5) {
  for (auto& [name, p] : store)
    for (double& v : p.value.data) v = rng.normal() * scale;
}

// Runs the spec-form gradient check over `build`, which must map the
// current parameter values to a scalar tape root.
double checked_error(ParameterStore& store,
                     const std::function<Tape::Var(Tape&, ParameterStore&)>& build) {
  auto loss = [&] {
    Tape t;
    return t.scalar(build(t, store));
  };
  auto backward = [&] {
    Tape t;
    t.backward(build(t, store));
  };
  return drex::grad_check(store, loss, backward).max_rel_error;
}

}  // namespace

TEST_CASE("constant loss has zero gradient error") {
  ParameterStore store;
  store.add("x", Tensor::vec({1.0, 2.0}));
  auto err = checked_error(
      store, [](Tape& t, ParameterStore&) { return t.constant(Tensor::scalar(3.0)); });
  CHECK(err == 0.0);
}

TEST_CASE("quadratic oracle: loss = sum of squares at [1,2]") {
  ParameterStore store;
  store.add("x", Tensor::vec({1.0, 2.0}));
  auto build = [](Tape& t, ParameterStore& s) {
    auto x = t.param(s.get("x"));
    return t.sum(t.mul(x, x));
  };
  {
    Tape t;
    t.backward(build(t, store));
    CHECK(store.get("x").grad.data[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(store.get("x").grad.data[1] == doctest::Approx(4.0).epsilon(1e-12));
    store.get("x").grad.fill(0.0);
  }
  CHECK(checked_error(store, build) < 1e-7);
}

TEST_CASE("elementwise op chain passes gradient check below 1e-6") {
  ParameterStore store;
  drex::Rng rng(3, "tape-elementwise");
  store.add("a", Tensor::vec({0.3, -0.7, 1.2, 0.05}));
  store.add("b", Tensor::vec({-0.2, 0.4, 0.9, -1.1}));
  randomize(store, rng);
  auto build = [](Tape& t, ParameterStore& s) {
    auto a = t.param(s.get("a"));
    auto b = t.param(s.get("b"));
    auto mix = t.add(t.mul(t.tanh(a), t.sigmoid(b)), t.scale(t.sub(a, b), 0.3));
    auto hinged = t.hinge(mix);
    auto lg = t.log_sigmoid(t.sub(a, b));
    return t.add(t.mean(hinged), t.sum(lg));
  };
  CHECK(checked_error(store, build) < 1e-6);
}

TEST_CASE("softmax, pick and log compose correctly") {
  ParameterStore store;
  store.add("logits", Tensor::vec({0.1, -0.4, 0.7, 0.2, -1.0}));
  auto build = [](Tape& t, ParameterStore& s) {
    auto p = t.softmax(t.param(s.get("logits")));
    return t.scale(t.log(t.pick(p, 2)), -1.0);
  };
  CHECK(checked_error(store, build) < 1e-6);
}

TEST_CASE("matrix ops pass gradient check") {
  ParameterStore store;
  drex::Rng rng(9, "tape-matrix");
  store.add("m", Tensor::zeros({3, 4}));
  store.add("w", Tensor::zeros({4, 2}));
  store.add("x", Tensor::zeros({4}));
  randomize(store, rng);
  auto build = [](Tape& t, ParameterStore& s) {
    auto m = t.param(s.get("m"));
    auto w = t.param(s.get("w"));
    auto x = t.param(s.get("x"));
    auto prod = t.matmul(m, w);           // [3 x 2]
    auto mv = t.matvec(m, x);             // [3]
    auto picked = t.slice(mv, 1, 2);      // [2]
    auto cat = t.concat({t.sum(prod), t.dot(picked, picked)});
    return t.sum(t.tanh(cat));
  };
  CHECK(checked_error(store, build) < 1e-6);
}

TEST_CASE("gather_rows routes gradients to the right table rows") {
  ParameterStore store;
  drex::Rng rng(4, "tape-gather");
  store.add("table", Tensor::zeros({5, 3}));
  randomize(store, rng);
  auto build = [](Tape& t, ParameterStore& s) {
    auto rows = t.gather_rows(t.param(s.get("table")), {4, 0, 4});
    return t.sum(t.mul(rows, rows));
  };
  CHECK(checked_error(store, build) < 1e-6);
  // Row 2 is never gathered, so its gradient must be exactly zero.
  store.zero_grads();
  Tape t;
  auto rows = t.gather_rows(t.param(store.get("table")), {4, 0, 4});
  t.backward(t.sum(t.mul(rows, rows)));
  const Tensor& g = store.get("table").grad;
  for (std::size_t j = 0; j < 3; ++j) CHECK(g.at(2, j) == 0.0);
  // Row 4 is gathered twice, so it accumulates twice row 0's magnitude
  // pattern: grad = 2*value*count.
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(g.at(4, j) == doctest::Approx(4.0 * store.get("table").value.at(4, j)).epsilon(1e-12));
}

TEST_CASE("convolution and piecewise max pass gradient check") {
  ParameterStore store;
  drex::Rng rng(8, "tape-conv");
  const std::size_t tokens = 7, width = 4, filters = 3;
  const int window = 3;
  store.add("x", Tensor::zeros({tokens, width}));
  store.add("f", Tensor::zeros({filters, window * width}));
  store.add("bias", Tensor::zeros({filters}));
  randomize(store, rng);
  auto build = [&](Tape& t, ParameterStore& s) {
    auto c = t.conv_valid(t.param(s.get("x")), t.param(s.get("f")), t.param(s.get("bias")),
                          window);
    auto pooled = t.piecewise_max(c, 2, 4);
    return t.mean(t.tanh(pooled));
  };
  CHECK(checked_error(store, build) < 1e-6);
}

TEST_CASE("piecewise max keeps earliest column on ties") {
  Tape t;
  // One filter, columns [1, 5, 5, 2]; boundaries 2 and 3 make segments
  // {0,1}, {2}, {3}: the first segment max 5 sits at column 1.
  Parameter p("levels", Tensor::matrix({{1.0, 5.0, 5.0, 2.0}}));
  auto out = t.piecewise_max(t.param(p), 2, 3);
  CHECK(t.value(out).data[0] == 5.0);
  t.backward(t.sum(out));
  CHECK(p.grad.at(0, 0) == 0.0);
  CHECK(p.grad.at(0, 1) == 1.0);  // earliest of the tied columns
  CHECK(p.grad.at(0, 2) == 1.0);  // its own singleton segment
  CHECK(p.grad.at(0, 3) == 1.0);
}

TEST_CASE("token matrix backpropagates only into the position table") {
  ParameterStore store;
  drex::Rng rng(6, "tape-token");
  store.add("pos", Tensor::zeros({5, 2}));
  randomize(store, rng);
  Tensor words = Tensor::matrix({{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}});
  auto build = [&](Tape& t, ParameterStore& s) {
    auto m = t.token_matrix(words, t.param(s.get("pos")), {1, 3}, {2, 2});
    return t.sum(t.mul(m, m));
  };
  CHECK(checked_error(store, build) < 1e-6);
  store.zero_grads();
  Tape t;
  auto m = t.token_matrix(words, t.param(store.get("pos")), {1, 3}, {2, 2});
  CHECK(t.value(m).rows() == 2);
  CHECK(t.value(m).cols() == 3 + 2 * 2);
  t.backward(t.sum(t.mul(m, m)));
  // Row 0 and row 4 of the table are never referenced.
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(store.get("pos").grad.at(0, j) == 0.0);
    CHECK(store.get("pos").grad.at(4, j) == 0.0);
  }
}

TEST_CASE("dropout scales kept entries and is reproducible per stream") {
  Parameter p("x", Tensor::full({1000}, 1.0));
  Tape t;
  drex::Rng rng(10, "dropout");
  auto y = t.dropout(t.param(p), 0.5, rng);
  const Tensor& vy = t.value(y);
  int kept = 0;
  for (double v : vy.data) {
    CHECK((v == 0.0 || v == 2.0));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
  // Backward routes gradient only through kept entries, with the same 1/keep scale.
  t.backward(t.mean(y));
  for (std::size_t i = 0; i < 1000; ++i)
    CHECK(p.grad.data[i] == (vy.data[i] == 0.0 ? 0.0 : 2.0 / 1000.0));
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape t;
  Parameter p("x", Tensor::vec({1.0, 2.0}));
  auto v = t.param(p);
  CHECK_THROWS_AS(t.backward(v), drex::DimensionError);
}

TEST_CASE("log rejects non-positive inputs") {
  Tape t;
  CHECK_THROWS_AS(t.log(t.constant(Tensor::vec({0.5, -1.0}))), drex::NumericError);
}

TEST_CASE("repeated param calls share one node so gradients accumulate") {
  Parameter p("x", Tensor::scalar(3.0));
  Tape t;
  auto a = t.param(p);
  auto b = t.param(p);
  CHECK(a.id == b.id);
  t.backward(t.mul(a, b));  // d/dx x^2 = 2x
  CHECK(p.grad.data[0] == doctest::Approx(6.0).epsilon(1e-12));
}
