#include <catch2/catch_amalgamated.hpp>

#include "sssa/tensor.hpp"

using namespace sssa;

TEST_CASE("bernoulli degenerate rates") {
  RngState rng(1);
  SpikeTensor zeros = bernoulli_spikes({2, 3}, 0.0, rng);
  for (auto v : zeros.data) CHECK(v == 0);
  SpikeTensor ones = bernoulli_spikes({2, 3}, 1.0, rng);
  for (auto v : ones.data) CHECK(v == 1);
}

TEST_CASE("bernoulli empirical mean at p=0.15") {
  RngState rng(12345);
  SpikeTensor s = bernoulli_spikes({1, 100000}, 0.15, rng);
  double mean = 0.0;
  for (auto v : s.data) mean += v;
  mean /= static_cast<double>(s.numel());
  // 4 sigma of the sample mean at n = 1e5
  CHECK(std::abs(mean - 0.15) < 0.005);
}

TEST_CASE("bernoulli rejects rates outside [0,1]") {
  RngState rng(1);
  CHECK_THROWS_AS(bernoulli_spikes({2}, -0.1, rng), DomainError);
  CHECK_THROWS_AS(bernoulli_spikes({2}, 1.1, rng), DomainError);
}

TEST_CASE("rng determinism and stream independence") {
  RngState a(777), b(777);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // stream draws depend only on (seed, stream index, position)
  RngState base(9);
  RngState s3_first = base.stream(3);
  std::vector<std::uint64_t> draws;
  for (int i = 0; i < 8; ++i) draws.push_back(s3_first.next_u64());
  RngState other = base.stream(100);
  (void)other.next_u64();
  RngState s3_again = base.stream(3);
  for (int i = 0; i < 8; ++i) CHECK(s3_again.next_u64() == draws[i]);
}

TEST_CASE("spike tensors are binary by construction") {
  CHECK_THROWS_AS(SpikeTensor({2}, {0, 2}), DomainError);
  RngState rng(5);
  SpikeTensor s = bernoulli_spikes({4, 4, 4}, 0.3, rng);
  for (auto e : s.data) CHECK(e * (e - 1) == 0);
  RealTensor r = s.to_real();
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(r.data[i] == static_cast<double>(s.data[i]));
}

TEST_CASE("matmul identity and hand cases") {
  RealTensor eye({2, 2}, {1, 0, 0, 1});
  RealTensor a({2, 2}, {3, 1, 4, 1});
  RealTensor prod = matmul(eye, a);
  CHECK(prod.data == a.data);

  RealTensor m({2, 2}, {1, 2, 3, 4});
  RealTensor v({2, 1}, {1, 1});
  RealTensor mv = matmul(m, v);
  CHECK(mv.at(0, 0) == 3.0);
  CHECK(mv.at(1, 0) == 7.0);

  RealTensor z = matmul(RealTensor({3, 2}), RealTensor({2, 4}));
  for (double x : z.data) CHECK(x == 0.0);
}

TEST_CASE("matmul shape errors") {
  CHECK_THROWS_AS(matmul(RealTensor({2, 3}), RealTensor({2, 3})), ShapeError);
  CHECK_THROWS_AS(matmul(RealTensor({2}), RealTensor({2, 2})), ShapeError);
}

TEST_CASE("matmul associativity is exact on integer-valued inputs") {
  RngState rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    auto random_int_matrix = [&](std::size_t r, std::size_t c) {
      RealTensor m({r, c});
      for (double& v : m.data) v = std::floor(rng.next_double() * 9.0) - 4.0;
      return m;
    };
    RealTensor a = random_int_matrix(3, 4), b = random_int_matrix(4, 2), c = random_int_matrix(2, 5);
    RealTensor left = matmul(matmul(a, b), c);
    RealTensor right = matmul(a, matmul(b, c));
    REQUIRE(left.shape == right.shape);
    for (std::size_t i = 0; i < left.numel(); ++i) CHECK(left.data[i] == right.data[i]);
  }
}

TEST_CASE("sum_axis hand cases") {
  SpikeTensor s({2, 3}, {1, 0, 1, 0, 0, 0});
  RealTensor r = sum_axis(s, 1);
  REQUIRE(r.shape == Shape{2});
  CHECK(r.at(0) == 2.0);
  CHECK(r.at(1) == 0.0);

  RealTensor zeros = sum_axis(RealTensor({3, 4}), 0);
  for (double v : zeros.data) CHECK(v == 0.0);

  SpikeTensor ones({1, 2, 4}, std::vector<std::uint8_t>(8, 1));
  RealTensor d_sum = sum_axis(ones, 2);
  REQUIRE(d_sum.shape == (Shape{1, 2}));
  CHECK(d_sum.data[0] == 4.0);
  CHECK(d_sum.data[1] == 4.0);
}

TEST_CASE("sum_axis rejects bad axis") {
  CHECK_THROWS_AS(sum_axis(RealTensor({2, 2}), 2), ShapeError);
}

TEST_CASE("sum over a middle axis") {
  // [2,2,2] summed over axis 1
  RealTensor t({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  RealTensor r = sum_axis(t, 1);
  REQUIRE(r.shape == (Shape{2, 2}));
  CHECK(r.at(0, 0) == 4.0);
  CHECK(r.at(0, 1) == 6.0);
  CHECK(r.at(1, 0) == 12.0);
  CHECK(r.at(1, 1) == 14.0);
}

TEST_CASE("reshape validates element count") {
  RealTensor t({2, 3});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  RealTensor ok = t.reshaped({3, 2});
  CHECK(ok.shape == (Shape{3, 2}));
}

TEST_CASE("identical seeds give bit-identical tensors") {
  RngState a(31337), b(31337);
  SpikeTensor s1 = bernoulli_spikes({16, 16}, 0.4, a);
  SpikeTensor s2 = bernoulli_spikes({16, 16}, 0.4, b);
  CHECK(s1.data == s2.data);
  RngState g1(7), g2(7);
  for (int i = 0; i < 1000; ++i) CHECK(g1.next_gaussian() == g2.next_gaussian());
}
