#include "drex/params.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "drex/errors.hpp"
#include "drex/rng.hpp"

using drex::AdamOptions;
using drex::Parameter;
using drex::ParameterStore;
using drex::Tensor;

namespace {

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("adam with zero gradient leaves the value unchanged") {
  Parameter p("w", Tensor::vec({1.0, -2.0, 3.5}));
  AdamOptions opt;
  opt.lr = 0.1;
  drex::adam_step(p, opt);
  CHECK(p.step_count == 1);
  CHECK(p.value.data[0] == 1.0);
  CHECK(p.value.data[1] == -2.0);
  CHECK(p.value.data[2] == 3.5);
}

TEST_CASE("first adam step with unit gradient moves a scalar by about lr") {
  // With m and v both equal to g after bias correction, the update is
  // lr * g / (|g| + eps) = lr to within eps.
  Parameter p("w", Tensor::scalar(1.0));
  p.grad.fill(1.0);
  AdamOptions opt;
  opt.lr = 0.1;
  drex::adam_step(p, opt);
  CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.step_count == 1);
  // Gradient is cleared by the step.
  CHECK(p.grad.data[0] == 0.0);
}

TEST_CASE("two identical optimization runs are bit-identical") {
  auto run = [] {
    drex::Rng rng(21, "adam-determinism");
    Parameter p("w", Tensor::vec({0.5, -0.25, 1.0, 2.0}));
    AdamOptions opt;
    opt.lr = 0.05;
    for (int step = 0; step < 25; ++step) {
      for (double& g : p.grad.data) g = rng.normal();
      drex::adam_step(p, opt);
    }
    return p.value;
  };
  Tensor a = run();
  Tensor b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("non-finite gradient raises and leaves the parameter untouched") {
  Parameter p("w", Tensor::vec({1.0, 2.0}));
  p.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
  AdamOptions opt;
  CHECK_THROWS_AS(drex::adam_step(p, opt), drex::NumericError);
  CHECK(p.value.data[0] == 1.0);
  CHECK(p.value.data[1] == 2.0);
  CHECK(p.step_count == 0);
  CHECK(p.adam_m.data[0] == 0.0);
}

TEST_CASE("parameter store rejects duplicate names and iterates sorted") {
  ParameterStore store;
  store.add("b", Tensor::scalar(2.0));
  store.add("a", Tensor::scalar(1.0));
  CHECK_THROWS_AS(store.add("a", Tensor::scalar(9.0)), drex::ValidationError);
  auto names = store.names();
  REQUIRE(names.size() == 2);
  CHECK(names[0] == "a");
  CHECK(names[1] == "b");
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ParameterStore store;
  drex::Rng rng(77, "ckpt");
  auto& w = store.add("encoder.filters", Tensor::zeros({3, 4}));
  for (double& v : w.value.data) v = rng.normal() * 1e3;
  for (double& v : w.adam_m.data) v = rng.normal();
  for (double& v : w.adam_v.data) v = rng.uniform();
  w.step_count = 17;
  auto& b = store.add("classifier.bias", Tensor::vec({-0.0, 1e-308, 3.14159265358979}));
  b.step_count = 2;

  std::map<std::string, Tensor> extras;
  extras["hrs.memory_cells"] = Tensor::full({2, 5}, 0.25);
  nlohmann::json meta;
  meta["relations"] = {"/a/b/c", "/a/b/d"};
  meta["config"] = {{"learning_rate", 0.02}, {"window", 3}};

  auto path = temp_file("drex_ckpt_roundtrip.bin");
  drex::save_checkpoint(path.string(), store, extras, meta);
  drex::Checkpoint loaded = drex::load_checkpoint(path.string());
  std::filesystem::remove(path);

  REQUIRE(loaded.params.size() == 2);
  const Parameter& w2 = loaded.params.get("encoder.filters");
  CHECK(w2.value.shape == w.value.shape);
  for (std::size_t i = 0; i < w.value.size(); ++i) {
    CHECK(w2.value.data[i] == w.value.data[i]);
    CHECK(w2.adam_m.data[i] == w.adam_m.data[i]);
    CHECK(w2.adam_v.data[i] == w.adam_v.data[i]);
  }
  CHECK(w2.step_count == 17);
  const Parameter& b2 = loaded.params.get("classifier.bias");
  CHECK(b2.value.data[0] == 0.0);
  CHECK(std::signbit(b2.value.data[0]));  // -0.0 survives
  CHECK(b2.value.data[1] == 1e-308);
  CHECK(b2.step_count == 2);
  REQUIRE(loaded.extras.count("hrs.memory_cells") == 1);
  CHECK(loaded.extras.at("hrs.memory_cells").shape == std::vector<std::size_t>{2, 5});
  CHECK(loaded.extras.at("hrs.memory_cells").data[3] == 0.25);
  CHECK(loaded.meta["relations"][1] == "/a/b/d");
  CHECK(loaded.meta["config"]["learning_rate"] == 0.02);
}

TEST_CASE("checkpoint loader rejects a corrupted magic header") {
  auto path = temp_file("drex_ckpt_badmagic.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(drex::load_checkpoint(path.string()), drex::FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("saving twice produces byte-identical files") {
  ParameterStore store;
  auto& p = store.add("detector.select_weight", Tensor::zeros({1, 6}));
  drex::Rng rng(5, "ckpt-bytes");
  for (double& v : p.value.data) v = rng.normal();
  nlohmann::json meta;
  meta["seed"] = 5;

  auto p1 = temp_file("drex_ckpt_a.bin");
  auto p2 = temp_file("drex_ckpt_b.bin");
  drex::save_checkpoint(p1.string(), store, {}, meta);
  drex::save_checkpoint(p2.string(), store, {}, meta);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
