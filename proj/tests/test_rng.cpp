#include "drex/rng.hpp"

#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "drex/errors.hpp"

using drex::Rng;

TEST_CASE("same seed and label give bit-identical streams") {
  Rng a(42, "stream");
  Rng b(42, "stream");
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different labels decorrelate streams from one seed") {
  Rng a(42, "alpha");
  Rng b(42, "beta");
  int same = 0;
  for (int i = 0; i < 256; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1) and covers both halves") {
  Rng rng(7, "uniform");
  int low = 0, high = 0;
  for (int i = 0; i < 4000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    (u < 0.5 ? low : high)++;
  }
  CHECK(low > 1500);
  CHECK(high > 1500);
}

TEST_CASE("uniform_int is inclusive on both ends and in range") {
  Rng rng(3, "ints");
  std::set<long> seen;
  for (int i = 0; i < 2000; ++i) {
    long v = rng.uniform_int(-2, 5);
    CHECK(v >= -2);
    CHECK(v <= 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 8);
  CHECK(rng.uniform_int(9, 9) == 9);
}

TEST_CASE("normal has roughly zero mean and unit variance") {
  Rng rng(11, "normal");
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("shuffle is a permutation and deterministic per key") {
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> w = v;
  Rng a(5, "shuffle");
  Rng b(5, "shuffle");
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("sample_without_replacement yields k distinct indices below n") {
  Rng rng(13, "sample");
  auto got = rng.sample_without_replacement(10, 4);
  CHECK(got.size() == 4);
  std::set<std::size_t> uniq(got.begin(), got.end());
  CHECK(uniq.size() == 4);
  for (auto i : got) CHECK(i < 10);
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), drex::ValidationError);
}
