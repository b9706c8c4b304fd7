#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geomem/rng.hpp"
#include "geomem/tensor.hpp"

using namespace geomem;
using T = TensorT<double>;

namespace {

T random_tensor(Shape sh, Rng& rng, double scale = 1.0) {
  T t(sh);
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// independent triple-loop product, no Eigen
T matmul_oracle(const T& a, const T& b) {
  T r({a.dim(0), b.dim(1)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < b.dim(1); ++j) {
      double s = 0;
      for (int k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      r.at(i, j) = s;
    }
  return r;
}

}  // namespace

TEST_CASE("matmul identity and hand sum") {
  T I({2, 2}, {1, 0, 0, 1});
  T B({2, 2}, {3, -1, 2, 7});
  T r = matmul(I, B);
  for (int i = 0; i < 4; ++i) CHECK(r[i] == B[i]);

  T a({2, 2}, {1, 2, 3, 4});
  T v({2, 1}, {1, 1});
  T p = matmul(a, v);
  CHECK(p.at(0, 0) == 3);
  CHECK(p.at(1, 0) == 7);
}

TEST_CASE("matmul against triple-loop oracle") {
  Rng rng(11);
  T a = random_tensor({3, 4}, rng);
  T b = random_tensor({4, 2}, rng);
  T r = matmul(a, b);
  T o = matmul_oracle(a, b);
  for (int i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(o[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch") {
  T a({2, 3});
  T b({2, 3});
  CHECK_THROWS_AS((void)matmul(a, b), ShapeError);
}

TEST_CASE("softmax_rows") {
  T z({1, 3}, {0, 0, 0});
  T s = softmax_rows(z);
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  T big({1, 3}, {1000, 0, 0});
  T sb = softmax_rows(big);
  CHECK(std::abs(sb[0] - 1.0) < 1e-12);
  CHECK(sb[1] < 1e-12);
  CHECK(sb[2] < 1e-12);

  T r({1, 3}, {1, 2, 3});
  T sr = softmax_rows(r);
  // direct exp-normalize oracle
  double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  double sum = e1 + e2 + e3;
  CHECK(sr[0] == doctest::Approx(e1 / sum).epsilon(1e-14));
  CHECK(sr[1] == doctest::Approx(e2 / sum).epsilon(1e-14));
  CHECK(sr[2] == doctest::Approx(e3 / sum).epsilon(1e-14));
}

TEST_CASE("softmax_rows properties: row sums and shift invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    int m = rng.uniform_int(1, 6), n = rng.uniform_int(1, 8);
    T a = random_tensor({m, n}, rng, 3.0);
    T s = softmax_rows(a);
    for (int i = 0; i < m; ++i) {
      double rs = 0;
      for (int j = 0; j < n; ++j) {
        rs += s.at(i, j);
        CHECK(s.at(i, j) >= 0.0);
      }
      CHECK(std::abs(rs - 1.0) < 1e-12);
    }
    T shifted = a;
    const double cshift = rng.uniform(-5, 5);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) shifted.at(i, j) += cshift;
    T s2 = softmax_rows(shifted);
    for (int i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - s2[i]) < 1e-12);
  }
}

TEST_CASE("sigmoid") {
  T x({3}, {0.0, 30.0, 1.0});
  T y = sigmoid(x);
  CHECK(y[0] == 0.5);
  CHECK(1.0 - y[1] < 1e-12);
  CHECK(y[2] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
}

TEST_CASE("cosine_similarity") {
  T v({3}, {0.3, -1.2, 2.0});
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-14));

  T e1({2}, {1, 0});
  T e2({2}, {0, 1});
  CHECK(cosine_similarity(e1, e2) == 0.0);

  T a({3}, {1, 2, 3});
  T b({3}, {4, 5, 6});
  const double d = 1 * 4 + 2 * 5 + 3 * 6;
  const double na = std::sqrt(1 + 4 + 9), nb = std::sqrt(16 + 25 + 36);
  CHECK(cosine_similarity(a, b) == doctest::Approx(d / (na * nb)).epsilon(1e-14));

  T zero({3});
  CHECK(cosine_similarity(zero, a) == 0.0);
  CHECK(cosine_similarity(a, zero) == 0.0);
}

TEST_CASE("cosine_similarity properties") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(1, 12);
    T a = random_tensor({n}, rng);
    T b = random_tensor({n}, rng);
    double c = cosine_similarity(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(c == cosine_similarity(b, a));
    double lam = rng.uniform(0.1, 10.0);
    CHECK(std::abs(cosine_similarity(lam * a, b) - c) < 1e-12);
  }
}

TEST_CASE("concat") {
  Rng rng(3);
  T a = random_tensor({2, 3}, rng);
  T one = concat<double>({a}, 0);
  CHECK(one.shape == a.shape);
  for (int i = 0; i < a.size(); ++i) CHECK(one[i] == a[i]);

  T b = random_tensor({2, 3}, rng);
  T ab = concat<double>({a, b}, 0);
  CHECK(ab.shape == Shape{4, 3});
  for (int j = 0; j < 3; ++j) {
    CHECK(ab.at(0, j) == a.at(0, j));
    CHECK(ab.at(2, j) == b.at(0, j));
  }

  // round trip through slice for three random blocks on each axis
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<T> blocks;
    std::vector<int> lens;
    for (int p = 0; p < 3; ++p) {
      int len = rng.uniform_int(1, 4);
      lens.push_back(len);
      Shape sh = {2, 3};
      sh[axis] = len;
      blocks.push_back(random_tensor(sh, rng));
    }
    T cat = concat(blocks, axis);
    int start = 0;
    for (int p = 0; p < 3; ++p) {
      T back = slice(cat, axis, start, lens[p]);
      CHECK(back.shape == blocks[p].shape);
      for (int i = 0; i < back.size(); ++i) CHECK(back[i] == blocks[p][i]);
      start += lens[p];
    }
  }
}

TEST_CASE("concat extent mismatch") {
  T a({2, 3});
  T b({2, 4});
  CHECK_THROWS_AS((void)concat<double>({a, b}, 0), ShapeError);
}

TEST_CASE("mean_pool") {
  T c = T::full({3, 4}, 7.5);
  T m = mean_pool(c, {0, 1});
  CHECK(m.size() == 1);
  CHECK(m[0] == doctest::Approx(7.5).epsilon(1e-15));

  T v({4}, {1, 2, 3, 4});
  CHECK(mean_pool(v, {0})[0] == doctest::Approx(2.5).epsilon(1e-15));

  Rng rng(9);
  T x = random_tensor({4, 4, 3}, rng);
  T p = mean_pool(x, {0, 1});
  CHECK(p.shape == Shape{3});
  for (int k = 0; k < 3; ++k) {
    double s = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) s += x.at(i, j, k);
    CHECK(p[k] == doctest::Approx(s / 16.0).epsilon(1e-12));
  }
}

TEST_CASE("purity: identical inputs give bit-identical outputs") {
  Rng rng(23);
  T a = random_tensor({5, 7}, rng);
  T b = random_tensor({7, 4}, rng);
  T r1 = matmul(a, b), r2 = matmul(a, b);
  for (int i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
  T s1 = softmax_rows(a), s2 = softmax_rows(a);
  for (int i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}
