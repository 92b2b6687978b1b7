#include <omp.h>

#include "cuti/kernels.hpp"
#include "doctest.h"
#include "test_util.hpp"

using cuti::Tensor;
namespace k = cuti::kernels;
namespace ref = cuti::kernels::reference;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("conv3x3 matches a hand-computed 3x3 example") {
  // x = 1..9 on a single 3x3 plane, weight = all ones except a -1 centre, bias 0.5.
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 3, 3}, {1, 1, 1, 1, -1, 1, 1, 1, 1});
  Tensor b({1}, {0.5});
  Tensor y;
  k::conv3x3_forward(x, w, b, y);
  // centre: sum(1..9) - 2*5 + 0.5 = 35.5; top-left: 2 + 4 + 5 - 1 + 0.5 = 10.5
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(35.5));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(10.5));
  // bottom-right: 5 + 6 + 8 - 9 + 0.5 = 10.5
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(10.5));
}

TEST_CASE("parallel kernels agree with the serial reference") {
  const Tensor x = random_tensor({3, 4, 9, 7}, 1);
  const Tensor w = random_tensor({5, 4, 3, 3}, 2);
  const Tensor b = random_tensor({5}, 3);
  Tensor y1, y2;
  k::conv3x3_forward(x, w, b, y1);
  ref::conv3x3_forward(x, w, b, y2);
  CHECK(max_abs_diff(y1, y2) < 1e-12);

  const Tensor dy = random_tensor(y1.shape(), 4);
  Tensor dx1, dx2;
  k::conv3x3_backward_input(dy, w, dx1);
  ref::conv3x3_backward_input(dy, w, dx2);
  CHECK(max_abs_diff(dx1, dx2) < 1e-12);

  Tensor dw1(w.shape()), db1(b.shape()), dw2(w.shape()), db2(b.shape());
  k::conv3x3_backward_params(x, dy, dw1, db1);
  ref::conv3x3_backward_params(x, dy, dw2, db2);
  CHECK(max_abs_diff(dw1, dw2) < 1e-11);
  CHECK(max_abs_diff(db1, db2) < 1e-11);

  Tensor p1, p2;
  std::vector<int> a1, a2;
  k::maxpool2_forward(x, p1, a1);
  ref::maxpool2_forward(x, p2, a2);
  CHECK(max_abs_diff(p1, p2) == 0.0);
  CHECK(a1 == a2);

  const Tensor xl = random_tensor({6, 11}, 5), wl = random_tensor({4, 11}, 6), bl = random_tensor({4}, 7);
  Tensor l1, l2;
  k::linear_forward(xl, wl, bl, l1);
  ref::linear_forward(xl, wl, bl, l2);
  CHECK(max_abs_diff(l1, l2) < 1e-12);
  const Tensor dl = random_tensor(l1.shape(), 8);
  Tensor g1, g2;
  k::linear_backward_input(dl, wl, g1);
  ref::linear_backward_input(dl, wl, g2);
  CHECK(max_abs_diff(g1, g2) < 1e-12);
  Tensor lw1(wl.shape()), lb1(bl.shape()), lw2(wl.shape()), lb2(bl.shape());
  k::linear_backward_params(xl, dl, lw1, lb1);
  ref::linear_backward_params(xl, dl, lw2, lb2);
  CHECK(max_abs_diff(lw1, lw2) < 1e-12);
  CHECK(max_abs_diff(lb1, lb2) < 1e-12);
}

TEST_CASE("kernel output does not depend on the thread count") {
  const Tensor x = random_tensor({4, 3, 8, 8}, 11);
  const Tensor w = random_tensor({6, 3, 3, 3}, 12);
  const Tensor b = random_tensor({6}, 13);
  const int saved = omp_get_max_threads();
  Tensor y1, y4;
  omp_set_num_threads(1);
  k::conv3x3_forward(x, w, b, y1);
  omp_set_num_threads(4);
  k::conv3x3_forward(x, w, b, y4);
  omp_set_num_threads(saved);
  CHECK(max_abs_diff(y1, y4) == 0.0);
}

TEST_CASE("maxpool picks the first maximum and drops odd edges") {
  Tensor x({1, 1, 3, 3}, {1, 1, 0, 1, 1, 0, 9, 9, 9});
  Tensor y;
  std::vector<int> arg;
  k::maxpool2_forward(x, y, arg);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y[0] == 1.0);
  CHECK(arg[0] == 0);

  Tensor dx;
  k::maxpool2_backward(Tensor({1, 1, 1, 1}, {2.0}), arg, x.shape(), dx);
  CHECK(dx[0] == 2.0);
  double rest = 0.0;
  for (std::size_t i = 1; i < dx.size(); ++i) rest += std::abs(dx[i]);
  CHECK(rest == 0.0);
}

TEST_CASE("relu backward masks non-positive outputs") {
  Tensor x({1, 4}, {-1.0, 0.0, 2.0, 3.0});
  k::relu_forward(x);
  CHECK(x[0] == 0.0);
  CHECK(x[3] == 3.0);
  Tensor dy({1, 4}, {1, 1, 1, 1});
  k::relu_backward(x, dy);
  CHECK(dy[0] == 0.0);
  CHECK(dy[1] == 0.0);
  CHECK(dy[2] == 1.0);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  Tensor logits({2, 3}, {1000.0, 1000.0, 1000.0, -5.0, 0.0, 5.0});
  const Tensor p = k::softmax_rows(logits);
  CHECK(p.all_finite());
  CHECK(p.at(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(p.at(1, 0) + p.at(1, 1) + p.at(1, 2) == doctest::Approx(1.0));
}
