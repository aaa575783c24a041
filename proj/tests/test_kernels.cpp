#include <doctest.h>

#include "frozen_align/kernels.hpp"
#include "helpers.hpp"

using namespace frozen_align;
namespace ref = frozen_align::kernels::reference;

namespace {

struct Shape {
  std::size_t m, k, n;
};

// Odd sizes straddle the packing and blocking boundaries.
const Shape kShapes[] = {{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 64, 64}, {65, 130, 47}, {8, 300, 2}, {129, 7, 257}};

template <class T>
void check_all_kernels(int threads) {
  kernels::set_max_threads(threads);
  std::uint64_t seed = 100;
  for (const auto& s : kShapes) {
    CAPTURE(s.m);
    CAPTURE(s.k);
    CAPTURE(s.n);
    const auto a = testing::random_matrix<T>(s.m, s.k, ++seed);
    const auto b = testing::random_matrix<T>(s.k, s.n, ++seed);
    const auto bt = testing::random_matrix<T>(s.n, s.k, ++seed);
    const auto at = testing::random_matrix<T>(s.k, s.m, ++seed);
    Matrix<T> fast, slow;

    kernels::matmul(a, b, fast);
    ref::matmul(a, b, slow);
    CHECK(fast == slow);
    kernels::matmul_nt(a, bt, fast);
    ref::matmul_nt(a, bt, slow);
    CHECK(fast == slow);
    kernels::matmul_tn(at, b, fast);
    ref::matmul_tn(at, b, slow);
    CHECK(fast == slow);
    kernels::transpose(a, fast);
    ref::transpose(a, slow);
    CHECK(fast == slow);
    kernels::column_sums(a, fast);
    ref::column_sums(a, slow);
    CHECK(fast == slow);
  }
  kernels::set_max_threads(0);
}

}  // namespace

TEST_CASE("parallel kernels equal the serial reference bit for bit") {
  for (int threads : {1, 2, 3, 8}) {
    CAPTURE(threads);
    check_all_kernels<float>(threads);
    check_all_kernels<double>(threads);
  }
}

TEST_CASE("reference matmul on a hand-computed case") {
  Matrix<double> a(2, 3), b(3, 2), c;
  double v = 1.0;
  for (auto& x : a.flat()) x = v++;
  for (auto& x : b.flat()) x = v++;
  // a = [1 2 3; 4 5 6], b = [7 8; 9 10; 11 12]
  ref::matmul(a, b, c);
  CHECK(c(0, 0) == 58.0);
  CHECK(c(0, 1) == 64.0);
  CHECK(c(1, 0) == 139.0);
  CHECK(c(1, 1) == 154.0);
  kernels::matmul(a, b, c);
  CHECK(c(1, 1) == 154.0);
}

TEST_CASE("row broadcast and column sums") {
  Matrix<float> y(3, 2, 1.0f), bias(1, 2), sums;
  bias(0, 0) = 2.0f;
  bias(0, 1) = -1.0f;
  kernels::add_row_broadcast(y, bias);
  kernels::column_sums(y, sums);
  CHECK(sums(0, 0) == 9.0f);
  CHECK(sums(0, 1) == 0.0f);
}

TEST_CASE("empty inner dimension yields zeros") {
  Matrix<float> a(3, 0), b(0, 4), c;
  kernels::matmul(a, b, c);
  REQUIRE(c.rows() == 3);
  REQUIRE(c.cols() == 4);
  for (float x : c.flat()) CHECK(x == 0.0f);
}
