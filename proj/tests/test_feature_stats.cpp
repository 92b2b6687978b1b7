#include <cmath>

#include "cuti/error.hpp"
#include "cuti/feature_stats.hpp"
#include "doctest.h"
#include "test_util.hpp"

using cuti::Tensor;

TEST_CASE("style stats of a hand-built map") {
  // One channel, values 1, 2, 3, 4: mean 2.5, population variance 1.25.
  Tensor f({1, 1, 2, 2}, {1, 2, 3, 4});
  const cuti::StyleStats s = cuti::compute_style_stats(f);
  CHECK(s.mean.at(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(s.dev.at(0, 0) == doctest::Approx(std::sqrt(1.25 + cuti::kStatEpsilon)).epsilon(1e-15));
}

TEST_CASE("serial reference stats agree") {
  const Tensor f = testutil::normal_tensor({3, 5, 6, 4}, 3, 2.0, 3.0);
  const auto a = cuti::compute_style_stats(f);
  const auto b = cuti::reference::compute_style_stats(f);
  CHECK(testutil::max_abs_diff(a.mean, b.mean) < 1e-12);
  CHECK(testutil::max_abs_diff(a.dev, b.dev) < 1e-12);
}

TEST_CASE("semantic normalization gives zero mean and unit deviation") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor f = testutil::normal_tensor({2, 4, 8, 8}, seed, -3.0 + seed, 0.5 * seed + 0.2);
    const auto s = cuti::compute_style_stats(cuti::normalize_semantic(f));
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      CHECK(std::abs(s.mean[i]) <= 1e-6);
      CHECK(std::abs(s.dev[i] - 1.0) <= 1e-3);
    }
  }
}

TEST_CASE("a constant channel normalizes to zeros") {
  Tensor f({1, 1, 3, 3}, 7.0);
  const Tensor z = cuti::normalize_semantic(f);
  CHECK(z.all_finite());
  CHECK(testutil::max_abs_diff(z, Tensor(z.shape())) == 0.0);
}

TEST_CASE("restyle without noise reproduces the donor statistics") {
  // Unit-scale maps keep the epsilon's effect on the matched deviation far below tolerance.
  const Tensor content = testutil::normal_tensor({3, 4, 8, 8}, 5, 0.3, 1.2);
  const Tensor donor = testutil::normal_tensor({3, 4, 8, 8}, 6, -0.5, 0.9);
  const auto style = cuti::compute_style_stats(donor);
  const Tensor out = cuti::restyle(content, style, 0.0, 1);
  const auto got = cuti::compute_style_stats(out);
  CHECK(testutil::max_abs_diff(got.mean, style.mean) <= 1e-5);
  CHECK(testutil::max_abs_diff(got.dev, style.dev) <= 1e-5);
}

TEST_CASE("restyle noise is seeded") {
  const Tensor content = testutil::normal_tensor({2, 3, 4, 4}, 1);
  const auto style = cuti::compute_style_stats(testutil::normal_tensor({2, 3, 4, 4}, 2));
  const Tensor a = cuti::restyle(content, style, 0.5, 42);
  const Tensor b = cuti::restyle(content, style, 0.5, 42);
  const Tensor c = cuti::restyle(content, style, 0.5, 43);
  CHECK(testutil::max_abs_diff(a, b) == 0.0);
  CHECK(testutil::max_abs_diff(a, c) > 0.0);
}

TEST_CASE("style stats backward matches finite differences") {
  Tensor f = testutil::normal_tensor({2, 3, 3, 4}, 9);
  const Tensor rm = testutil::random_tensor({2, 3}, 10), rd = testutil::random_tensor({2, 3}, 11);
  const auto loss = [&] {
    const auto s = cuti::compute_style_stats(f);
    return testutil::dot(s.mean, rm) + testutil::dot(s.dev, rd);
  };
  const Tensor analytic = cuti::style_stats_backward(f, cuti::compute_style_stats(f), rm, rd);
  const Tensor numeric = testutil::numeric_grad(f, loss);
  CHECK(testutil::rel_error(analytic, numeric) <= 1e-6);
}

TEST_CASE("feature stats reject malformed input") {
  CHECK_THROWS_AS(cuti::compute_style_stats(Tensor({2, 3})), cuti::InvalidInput);
  Tensor bad({1, 1, 2, 2}, 0.0);
  bad[1] = std::nan("");
  CHECK_THROWS_AS(cuti::compute_style_stats(bad), cuti::InvalidInput);
  const Tensor f = testutil::normal_tensor({2, 3, 4, 4}, 1);
  const auto wrong = cuti::compute_style_stats(testutil::normal_tensor({2, 2, 4, 4}, 1));
  CHECK_THROWS_AS(cuti::restyle(f, wrong, 0.0, 0), cuti::InvalidInput);
  const auto ok = cuti::compute_style_stats(f);
  CHECK_THROWS_AS(cuti::restyle(f, ok, -1.0, 0), cuti::InvalidInput);
}
