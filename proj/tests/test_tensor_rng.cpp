// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dlvm/rng.hpp"
#include "dlvm/tensor.hpp"

using namespace dlvm;

TEST_CASE("shape utilities") {
  CHECK(shape_size({3, 4}) == 12);
  CHECK(shape_size({1}) == 1);
  CHECK(shape_str({3, 4, 5}) == "[3x4x5]");
}

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  t.at(1, 2) = 5.0;
  CHECK(t.data[5] == 5.0);
}

TEST_CASE("tensor grad slot") {
  Tensor t = Tensor::full({4}, 2.0);
  CHECK(!t.has_grad());
  t.require_grad();
  CHECK(t.has_grad());
  CHECK(t.grad.size() == 4);
  t.grad[0] = 1.0;
  t.zero_grad();
  CHECK(t.grad[0] == 0.0);
}

TEST_CASE("fixed seed reproduces the sample stream") {
  Rng a(42), b(42);
  Tensor ta = a.normal_tensor({4});
  Tensor tb = b.normal_tensor({4});
  for (int i = 0; i < 4; ++i) CHECK(ta.at(i) == tb.at(i));
}

TEST_CASE("different seeds give different first samples") {
  Rng a(1), b(2);
  CHECK(a.normal() != b.normal());
}

TEST_CASE("gaussian moments over 1e5 samples") {
  Rng rng(7);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double stdev = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(stdev - 1.0) < 0.02);
}

TEST_CASE("uniform_int stays in range and covers values") {
  Rng rng(3);
  std::array<int, 5> seen{};
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.uniform_int(5);
    REQUIRE(v >= 0);
    REQUIRE(v < 5);
    seen[static_cast<std::size_t>(v)]++;
  }
  for (int c : seen) CHECK(c > 100);
}

TEST_CASE("shuffle depends only on the seed") {
  std::vector<int> a{0, 1, 2, 3, 4, 5, 6, 7}, b = a;
  Rng ra(11), rb(11);
  ra.shuffle(a);
  rb.shuffle(b);
  CHECK(a == b);
  std::vector<int> c{0, 1, 2, 3, 4, 5, 6, 7};
  Rng rc(12);
  rc.shuffle(c);
  CHECK(a != c);
}

TEST_CASE("state round trip resumes the stream exactly") {
  Rng a(99);
  for (int i = 0; i < 17; ++i) a.normal();
  const auto snap = a.state();
  const double next = a.uniform();
  Rng b(0);
  b.set_state(snap);
  CHECK(b.uniform() == next);
}

TEST_CASE("derived cell seeds differ per index") {
  CHECK(Rng::derive_seed(5, 0) != Rng::derive_seed(5, 1));
  CHECK(Rng::derive_seed(5, 0) == Rng::derive_seed(5, 0));
}
