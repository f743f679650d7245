#include <cmath>

#include "bevloc/gradcheck.hpp"
#include "bevloc/ops.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevloc;
using nn::Tensor;
using nn::Tensor64;

TEST_SUITE("nncore") {

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
  Rng rng(1);
  Tensor64 x = oracles::random_tensor({3, 5, 5}, rng);
  Tensor64 w = Tensor64::zeros({3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) w.at4(o, o, 0, 0) = 1.0;
  const Tensor64 y = nn::conv2d(x, w, {}, 1, 0);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("3x3 ones kernel on constant input gives 9 in the interior") {
  Tensor64 x = Tensor64::full({1, 6, 6}, 1.0);
  Tensor64 w = Tensor64::full({1, 1, 3, 3}, 1.0);
  const Tensor64 y = nn::conv2d(x, w, {}, 1, 1);
  for (int r = 1; r < 5; ++r)
    for (int c = 1; c < 5; ++c) CHECK(y.at3(0, r, c) == doctest::Approx(9.0));
  CHECK(y.at3(0, 0, 0) == doctest::Approx(4.0));  // corner sees 2x2
}

TEST_CASE("conv2d matches the scalar six-loop oracle") {
  Rng rng(2);
  Tensor64 x = oracles::random_tensor({2, 4, 5, 5}, rng);
  Tensor64 w = oracles::random_tensor({3, 4, 3, 3}, rng);
  Tensor64 b = oracles::random_tensor({3}, rng);
  const Tensor64 y = nn::conv2d(x, w, b, 1, 1);
  const Tensor64 o = oracles::conv2d_loops(x, w, b, 1, 1);
  REQUIRE(y.shape == o.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(o.data[i]).epsilon(1e-10));
}

TEST_CASE("conv2d matches the oracle over 100 random shapes") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int ci = 1 + static_cast<int>(rng.uniform_int(3));
    const int co = 1 + static_cast<int>(rng.uniform_int(3));
    const int k = 1 + 2 * static_cast<int>(rng.uniform_int(2));  // 1 or 3
    const int h = k + static_cast<int>(rng.uniform_int(5));
    const int w = k + static_cast<int>(rng.uniform_int(5));
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    Tensor64 x = oracles::random_tensor({n, ci, h, w}, rng);
    Tensor64 wt = oracles::random_tensor({co, ci, k, k}, rng);
    const Tensor64 y = nn::conv2d(x, wt, {}, stride, pad);
    const Tensor64 o = oracles::conv2d_loops(x, wt, {}, stride, pad);
    REQUIRE(y.shape == o.shape);
    double worst = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i)
      worst = std::max(worst, std::abs(y.data[i] - o.data[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("conv2d rejects incompatible shapes") {
  Tensor64 x({2, 4, 4});
  Tensor64 w({1, 3, 3, 3});
  CHECK_THROWS_AS(nn::conv2d(x, w, {}, 1, 0), Error);
  Tensor64 w2({1, 2, 3, 3});
  Tensor64 bad_bias({2});
  CHECK_THROWS_AS(nn::conv2d(x, w2, bad_bias, 1, 0), Error);
  CHECK_THROWS_AS(nn::conv2d(x, w2, {}, 0, 0), Error);
}

TEST_CASE("batchnorm train mode passes through normalized input") {
  Rng rng(4);
  // construct per-channel zero-mean unit-variance data
  Tensor64 x({2, 8, 8});
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 64; ++i) {
      const double v = rng.uniform(-1, 1);
      x.data[static_cast<std::size_t>(c) * 64 + i] = v;
      sum += v;
    }
    const double mean = sum / 64.0;
    for (int i = 0; i < 64; ++i) {
      x.data[static_cast<std::size_t>(c) * 64 + i] -= mean;
      sq += x.data[static_cast<std::size_t>(c) * 64 + i] * x.data[static_cast<std::size_t>(c) * 64 + i];
    }
    const double inv = 1.0 / std::sqrt(sq / 64.0);
    for (int i = 0; i < 64; ++i) x.data[static_cast<std::size_t>(c) * 64 + i] *= inv;
  }
  Tensor64 gamma = Tensor64::full({2}, 1.0), beta({2});
  Tensor64 rm({2}), rv = Tensor64::full({2}, 1.0);
  const Tensor64 y = nn::batchnorm2d(x, gamma, beta, rm, rv, true);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-5));
}

TEST_CASE("batchnorm with gamma 0 outputs beta") {
  Rng rng(5);
  Tensor64 x = oracles::random_tensor({3, 4, 4}, rng);
  Tensor64 gamma({3});
  Tensor64 beta = Tensor64::full({3}, 5.0);
  Tensor64 rm({3}), rv = Tensor64::full({3}, 1.0);
  const Tensor64 y = nn::batchnorm2d(x, gamma, beta, rm, rv, true);
  for (double v : y.data) CHECK(v == doctest::Approx(5.0));
}

TEST_CASE("batchnorm train statistics are mean 0 / var 1") {
  Rng rng(6);
  Tensor64 x = oracles::random_tensor({2, 3, 6, 6}, rng, -2.0, 3.0);
  Tensor64 gamma = Tensor64::full({3}, 1.0), beta({3});
  Tensor64 rm({3}), rv = Tensor64::full({3}, 1.0);
  const Tensor64 y = nn::batchnorm2d(x, gamma, beta, rm, rv, true);
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 36; ++i) {
        const double v = y.data[(static_cast<std::size_t>(n) * 3 + c) * 36 + i];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / 72.0;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(sq / 72.0 - mean * mean == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm rejects a zero-size batch in train mode") {
  Tensor64 x({2, 0, 0});
  Tensor64 gamma = Tensor64::full({2}, 1.0), beta({2});
  Tensor64 rm({2}), rv = Tensor64::full({2}, 1.0);
  CHECK_THROWS_AS(nn::batchnorm2d(x, gamma, beta, rm, rv, true), Error);
}

TEST_CASE("pointwise op identities") {
  CHECK(nn::sigmoid(Tensor64::from({1}, {0.0})).data[0] == doctest::Approx(0.5));
  Rng rng(7);
  Tensor64 x = oracles::random_tensor({6, 9}, rng, -4.0, 4.0);
  const Tensor64 s = nn::softmax(x, 1);
  for (int i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) sum += s.at2(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(nn::softmax(Tensor64({3, 0}), 1), Error);

  Tensor64 u = Tensor64::from({1, 2, 2}, {1, 2, 3, 4});
  const Tensor64 up = nn::upsample_nearest2x(u);
  CHECK(up.at3(0, 0, 0) == 1.0);
  CHECK(up.at3(0, 0, 1) == 1.0);
  CHECK(up.at3(0, 1, 1) == 1.0);
  CHECK(up.at3(0, 3, 3) == 4.0);
}

TEST_CASE("attention with one-hot keys matches the scalar oracle") {
  Rng rng(8);
  const int d = 6, nq = 4;
  Tensor64 q = oracles::random_tensor({nq, d}, rng);
  Tensor64 k = Tensor64::zeros({d, d});
  for (int i = 0; i < d; ++i) k.at2(i, i) = 1.0;
  Tensor64 v = k;  // one-hot basis
  Tensor64 wo = Tensor64::zeros({d, d});
  for (int i = 0; i < d; ++i) wo.at2(i, i) = 1.0;
  const Tensor64 y = nn::multi_head_attention(q, k, v, {}, wo, 1);
  const Tensor64 o = oracles::attention_scalar(q, k, v, {}, wo);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(o.data[i]).epsilon(1e-12));
}

TEST_CASE("a -inf bias on all but one key selects that key's value") {
  Rng rng(9);
  const int d = 4, nq = 3, nk = 5, keep = 2;
  Tensor64 q = oracles::random_tensor({nq, d}, rng);
  Tensor64 k = oracles::random_tensor({nk, d}, rng);
  Tensor64 v = oracles::random_tensor({nk, d}, rng);
  Tensor64 bias({1, nq, nk});
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nk; ++j)
      bias.data[static_cast<std::size_t>(i) * nk + j] =
          j == keep ? 0.0 : -std::numeric_limits<double>::infinity();
  Tensor64 wo = Tensor64::zeros({d, d});
  for (int i = 0; i < d; ++i) wo.at2(i, i) = 1.0;
  const Tensor64 y = nn::multi_head_attention(q, k, v, bias, wo, 1);
  for (int i = 0; i < nq; ++i)
    for (int t = 0; t < d; ++t) CHECK(y.at2(i, t) == doctest::Approx(v.at2(keep, t)));
}

TEST_CASE("uniform queries and keys give equal attention weights") {
  const int d = 4, nq = 2, nk = 7;
  Tensor64 q = Tensor64::full({nq, d}, 0.3);
  Tensor64 k = Tensor64::full({nk, d}, 0.3);
  Rng rng(10);
  Tensor64 v = oracles::random_tensor({nk, d}, rng);
  Tensor64 wo = Tensor64::zeros({d, d});
  for (int i = 0; i < d; ++i) wo.at2(i, i) = 1.0;
  const Tensor64 y = nn::multi_head_attention(q, k, v, {}, wo, 2);
  // equal weights -> output is the mean value row
  for (int i = 0; i < nq; ++i)
    for (int t = 0; t < d; ++t) {
      double mean = 0.0;
      for (int j = 0; j < nk; ++j) mean += v.at2(j, t);
      mean /= nk;
      CHECK(y.at2(i, t) == doctest::Approx(mean).epsilon(1e-9));
    }
}

TEST_CASE("mha rejects dimension mismatches") {
  Tensor64 q({3, 8}), k({4, 8}), v({4, 8}), wo({8, 8});
  CHECK_THROWS_AS(nn::multi_head_attention(q, k, v, {}, wo, 3), Error);  // 8 % 3 != 0
  Tensor64 vbad({5, 8});
  CHECK_THROWS_AS(nn::multi_head_attention(q, k, vbad, {}, wo, 2), Error);
}

TEST_CASE("grid_sample zero-pads outside and is exact at integers") {
  Tensor64 f = Tensor64::from({1, 2, 2}, {0, 1, 2, 3});
  Tensor64 pts = Tensor64::from({3, 2}, {1.0, 0.0, -0.5, 0.0, 0.5, 0.5});
  const Tensor64 y = nn::grid_sample(f, pts);
  CHECK(y.at2(0, 0) == 2.0);                       // integer coordinate, exact
  CHECK(y.at2(0, 1) == doctest::Approx(0.0));      // half outside: 0.5 * row0 = 0
  CHECK(y.at2(0, 2) == doctest::Approx(1.5));
}

TEST_CASE("forward ops are deterministic within a build") {
  Rng rng_a(42), rng_b(42);
  Tensor x1 = oracles::random_tensor({2, 3, 8, 8}, rng_a).cast<float>();
  Tensor x2 = oracles::random_tensor({2, 3, 8, 8}, rng_b).cast<float>();
  Tensor w1 = oracles::random_tensor({4, 3, 3, 3}, rng_a).cast<float>();
  Tensor w2 = oracles::random_tensor({4, 3, 3, 3}, rng_b).cast<float>();
  const Tensor y1 = nn::conv2d(x1, w1, {}, 1, 1);
  const Tensor y2 = nn::conv2d(x2, w2, {}, 1, 1);
  REQUIRE(y1.data.size() == y2.data.size());
  for (std::size_t i = 0; i < y1.data.size(); ++i) CHECK(y1.data[i] == y2.data[i]);
}

TEST_CASE("every VJP passes the finite-difference suite") {
  const auto rows = verify::gradcheck_all(1234);
  REQUIRE(rows.size() > 10);
  for (const auto& r : rows) {
    INFO(r.name, " rel err ", r.max_rel_err, " tol ", r.tolerance);
    CHECK(r.pass);
  }
}

}  // TEST_SUITE
