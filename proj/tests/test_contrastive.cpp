#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "frozen_align/contrastive.hpp"
#include "frozen_align/error.hpp"
#include "helpers.hpp"

using namespace frozen_align;

TEST_CASE("normalize on hand examples") {
  Matrix<double> m(2, 2);
  m(0, 0) = 3.0;
  m(0, 1) = 4.0;
  m(1, 0) = 0.0;
  m(1, 1) = -2.0;
  const auto z = normalize(m);
  CHECK(z.normalized);
  CHECK(z.data(0, 0) == doctest::Approx(0.6));
  CHECK(z.data(0, 1) == doctest::Approx(0.8));
  CHECK(z.data(1, 1) == -1.0);

  Matrix<float> zero(2, 3, 1.0f);
  zero(1, 0) = zero(1, 1) = zero(1, 2) = 0.0f;
  FA_CHECK_THROWS_CODE(normalize(zero), ErrorCode::ZeroVector);
}

TEST_CASE("normalized rows have unit norm") {
  const auto z = testing::random_unit<float>(64, 33, 5);
  for (std::size_t r = 0; r < 64; ++r) {
    double s = 0.0;
    for (float x : z.data.row(r)) s += double(x) * x;
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
}

TEST_CASE("similarity matrix entries are dot products in [-1, 1]") {
  const auto a = testing::random_unit<double>(5, 4, 1);
  const auto b = testing::random_unit<double>(7, 4, 2);
  const auto s = similarity_matrix(a, b);
  REQUIRE(s.rows() == 5);
  REQUIRE(s.cols() == 7);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 4; ++k) dot += a.data(i, k) * b.data(j, k);
      CHECK(s(i, j) == doctest::Approx(dot).epsilon(1e-12));
      CHECK(std::abs(s(i, j)) <= 1.0 + 1e-12);
    }
  FA_CHECK_THROWS_CODE(similarity_matrix(a, testing::random_unit<double>(2, 3, 3)), ErrorCode::ShapeMismatch);
  FA_CHECK_THROWS_CODE(similarity_matrix(a, EmbeddingBatch<double>{b.data, false}), ErrorCode::NotNormalized);
}

TEST_CASE("loss equals the term-by-term oracle") {
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    const std::size_t b = 1 + inst % 13;
    const std::size_t d = 2 + (inst * 7) % 19;
    const auto img = testing::random_unit<double>(b, d, 1000 + inst);
    const auto txt = testing::random_unit<double>(b, d, 2000 + inst);
    const auto brute = testing::brute_force_infonce(img.data, txt.data, 0.07);
    const auto out = infonce_loss(img, txt, 0.07);
    CHECK(testing::rel_error(out.total_loss, brute.total) < 1e-9);
    CHECK(testing::rel_error(out.loss_t2i, brute.t2i) < 1e-9);
    CHECK(testing::rel_error(out.loss_i2t, brute.i2t) < 1e-9);
  }
}

TEST_CASE("identical rows give exactly log B") {
  for (std::size_t b : {2, 5, 64}) {
    Matrix<double> same(b, 3, 0.0);
    for (std::size_t r = 0; r < b; ++r) same(r, 0) = 1.0;
    const auto z = normalize(same);
    const auto out = infonce_loss(z, z, 0.07);
    CHECK(out.total_loss == doctest::Approx(std::log(double(b))).epsilon(1e-12));
  }
}

TEST_CASE("a single pair has zero loss and zero gradient") {
  const auto a = testing::random_unit<double>(1, 6, 1);
  const auto b = testing::random_unit<double>(1, 6, 2);
  const auto out = infonce_loss(a, b, 0.07);
  CHECK(out.total_loss == 0.0);
  for (double g : out.grad_z_img.flat()) CHECK(g == 0.0);
  for (double g : out.grad_z_txt.flat()) CHECK(g == 0.0);
}

TEST_CASE("perfect alignment drives the loss toward zero") {
  // Orthogonal unit rows matched to themselves.
  Matrix<double> eye(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const auto z = normalize(eye);
  const double expected = std::log(1.0 + 3.0 * std::exp(-1.0 / 0.07));
  CHECK(infonce_loss(z, z, 0.07).total_loss == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected < 1e-5);
}

TEST_CASE("swapping the modalities swaps the directions") {
  const auto a = testing::random_unit<double>(9, 5, 3);
  const auto b = testing::random_unit<double>(9, 5, 4);
  const auto ab = infonce_loss(a, b, 0.07);
  const auto ba = infonce_loss(b, a, 0.07);
  CHECK(ab.total_loss == doctest::Approx(ba.total_loss).epsilon(1e-12));
  CHECK(ab.loss_i2t == doctest::Approx(ba.loss_t2i).epsilon(1e-12));
  for (std::size_t i = 0; i < ab.grad_z_img.size(); ++i)
    CHECK(ab.grad_z_img.data()[i] == doctest::Approx(ba.grad_z_txt.data()[i]).epsilon(1e-12));
}

TEST_CASE("loss is invariant to a joint permutation of the pairs") {
  const auto a = testing::random_unit<double>(8, 5, 5);
  const auto b = testing::random_unit<double>(8, 5, 6);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  EmbeddingBatch<double> pa{Matrix<double>(8, 5), true}, pb{Matrix<double>(8, 5), true};
  for (std::size_t r = 0; r < 8; ++r) {
    std::copy(a.data.row(perm[r]).begin(), a.data.row(perm[r]).end(), pa.data.row(r).begin());
    std::copy(b.data.row(perm[r]).begin(), b.data.row(perm[r]).end(), pb.data.row(r).begin());
  }
  CHECK(infonce_loss(a, b, 0.07).total_loss == doctest::Approx(infonce_loss(pa, pb, 0.07).total_loss).epsilon(1e-12));
}

TEST_CASE("gradients match finite differences of the oracle") {
  const std::size_t b = 6, d = 4;
  const auto img = testing::random_unit<double>(b, d, 11);
  const auto txt = testing::random_unit<double>(b, d, 12);
  const auto out = infonce_loss(img, txt, 0.07);
  const double h = 1e-6;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    auto up = img.data, down = img.data;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double numeric = (testing::brute_force_infonce(up, txt.data, 0.07).total -
                            testing::brute_force_infonce(down, txt.data, 0.07).total) /
                           (2 * h);
    CHECK(testing::rel_error(numeric, out.grad_z_img.data()[i]) < 1e-5);
    auto tu = txt.data, td = txt.data;
    tu.data()[i] += h;
    td.data()[i] -= h;
    const double numeric_t = (testing::brute_force_infonce(img.data, tu, 0.07).total -
                              testing::brute_force_infonce(img.data, td, 0.07).total) /
                             (2 * h);
    CHECK(testing::rel_error(numeric_t, out.grad_z_txt.data()[i]) < 1e-5);
  }
}

TEST_CASE("the logit gradient sums to zero") {
  // With every text equal to t, grad_img_i = (Σ_j g_ij)·t, and the softmax
  // rows and columns each sum to one, so Σ_ij g_ij = 0.
  const auto img = testing::random_unit<double>(7, 3, 21);
  Matrix<double> same(7, 3, 0.0);
  for (std::size_t r = 0; r < 7; ++r) same(r, 1) = 1.0;
  const auto out = infonce_loss(img, normalize(same), 0.07);
  double total = 0.0;
  for (std::size_t r = 0; r < 7; ++r) {
    CHECK(out.grad_z_img(r, 0) == 0.0);
    CHECK(out.grad_z_img(r, 2) == 0.0);
    total += out.grad_z_img(r, 1);
  }
  CHECK(std::abs(total) < 1e-12);
}

TEST_CASE("temperature validation") {
  const auto a = testing::random_unit<float>(3, 2, 1);
  FA_CHECK_THROWS_CODE(infonce_loss(a, a, 0.0), ErrorCode::InvalidTau);
  FA_CHECK_THROWS_CODE(infonce_loss(a, a, -0.1), ErrorCode::InvalidTau);
  FA_CHECK_THROWS_CODE(infonce_loss(a, a, INFINITY), ErrorCode::InvalidTau);
  FA_CHECK_THROWS_CODE(infonce_loss(a, testing::random_unit<float>(4, 2, 2)), ErrorCode::ShapeMismatch);
}

TEST_CASE("float loss is stable at large batch and small temperature") {
  const auto a = testing::random_unit<float>(256, 16, 31);
  const auto out = infonce_loss(a, a, 0.01);
  CHECK(std::isfinite(out.total_loss));
  CHECK(out.total_loss >= 0.0f);
  const auto far = infonce_loss(a, testing::random_unit<float>(256, 16, 32), 0.01);
  CHECK(std::isfinite(far.total_loss));
}

TEST_CASE("normalize backward matches finite differences") {
  auto raw = testing::random_matrix<double>(5, 4, 41, 2.0);
  const auto upstream = testing::random_matrix<double>(5, 4, 42);
  const auto g = normalize_backward(upstream, raw);
  auto objective = [&] {
    const auto z = normalize(raw);
    double s = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) s += z.data.data()[i] * upstream.data()[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double keep = raw.data()[i];
    raw.data()[i] = keep + h;
    const double up = objective();
    raw.data()[i] = keep - h;
    const double down = objective();
    raw.data()[i] = keep;
    CHECK(testing::rel_error((up - down) / (2 * h), g.data()[i]) < 1e-6);
  }
  // Radial directions carry no gradient.
  const auto radial = normalize_backward(raw, raw);
  for (double x : radial.flat()) CHECK(std::abs(x) < 1e-12);
}
