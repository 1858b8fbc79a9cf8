#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crackseg/conv.hpp"
#include "oracles.hpp"

using namespace crackseg;

TEST_CASE("conv2d scalar and identity cases", "[conv]") {
  SECTION("1x1x1x1 times scalar weight") {
    Tensor x = Tensor::from_data({1, 1, 1, 1}, {3.0});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {-2.5});
    CHECK(conv2d(x, w).data() == std::vector<double>{-7.5});
  }
  SECTION("3x3 identity kernel with padding 1 is the identity") {
    Rng rng(1);
    Tensor x = oracles::random_tensor(rng, {2, 3, 4, 5});
    std::vector<double> wk(3 * 3 * 3 * 3, 0.0);
    for (int c = 0; c < 3; ++c) {
      std::vector<double> k(3 * 3 * 3, 0.0);
      k[c * 9 + 4] = 1.0;  // center tap on the matching channel
      std::copy(k.begin(), k.end(), wk.begin() + c * 27);
    }
    Tensor w = Tensor::from_data({3, 3, 3, 3}, wk);
    Tensor y = conv2d(x, w, Tensor(), 1, 1);
    CHECK(y.data() == x.data());
  }
}

TEST_CASE("conv2d matches the loop oracle", "[conv]") {
  Rng rng(2);
  SECTION("spec instance 1x2x5x5 by 3x2x3x3") {
    Tensor x = oracles::random_tensor(rng, {1, 2, 5, 5});
    Tensor w = oracles::random_tensor(rng, {3, 2, 3, 3});
    Tensor got = conv2d(x, w);
    Tensor ref = oracles::conv2d_loop_ref(x, w, nullptr, 1, 0);
    CHECK(oracles::max_abs_diff(got, ref) < 1e-12);
  }
  SECTION("random strides, paddings and bias") {
    for (int trial = 0; trial < 8; ++trial) {
      int n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 4), cout = rng.uniform_int(1, 4);
      int k = rng.uniform_int(1, 3), stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
      int h = rng.uniform_int(k, 7), wdt = rng.uniform_int(k, 7);
      Tensor x = oracles::random_tensor(rng, {n, cin, h, wdt});
      Tensor w = oracles::random_tensor(rng, {cout, cin, k, k});
      Tensor b = oracles::random_tensor(rng, {cout});
      Tensor got = conv2d(x, w, b, stride, pad);
      Tensor ref = oracles::conv2d_loop_ref(x, w, &b, stride, pad);
      CHECK(oracles::max_abs_diff(got, ref) < 1e-12);
    }
  }
  SECTION("channel mismatch names the axis") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_WITH(conv2d(x, w), Catch::Matchers::ContainsSubstring("axis 1"));
  }
  SECTION("kernel larger than padded input") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w), ShapeError);
  }
}

TEST_CASE("depthwise conv equivalences and oracle", "[conv]") {
  Rng rng(3);
  SECTION("C=1 equals full conv") {
    Tensor x = oracles::random_tensor(rng, {1, 1, 5, 5});
    Tensor w = oracles::random_tensor(rng, {1, 1, 3, 3});
    Tensor a = depthwise_conv2d(x, w, Tensor(), 1, 1);
    Tensor b = conv2d(x, w, Tensor(), 1, 1);
    CHECK(oracles::max_abs_diff(a, b) == 0.0);
  }
  SECTION("identity kernels per channel") {
    Tensor x = oracles::random_tensor(rng, {2, 3, 4, 4});
    std::vector<double> wk(3 * 9, 0.0);
    for (int c = 0; c < 3; ++c) wk[c * 9 + 4] = 1.0;
    Tensor w = Tensor::from_data({3, 1, 3, 3}, wk);
    CHECK(depthwise_conv2d(x, w, Tensor(), 1, 1).data() == x.data());
  }
  SECTION("per-channel loop oracle") {
    Tensor x = oracles::random_tensor(rng, {2, 4, 6, 5});
    Tensor w = oracles::random_tensor(rng, {4, 1, 3, 3});
    Tensor got = depthwise_conv2d(x, w, Tensor(), 1, 1);
    Tensor ref = oracles::conv2d_loop_ref(x, w, nullptr, 1, 1, /*groups=*/4);
    CHECK(oracles::max_abs_diff(got, ref) < 1e-12);
  }
}

TEST_CASE("pointwise conv is a per-pixel matmul", "[conv]") {
  Rng rng(4);
  SECTION("identity weight matrix") {
    Tensor x = oracles::random_tensor(rng, {1, 3, 4, 4});
    std::vector<double> wk(9, 0.0);
    wk[0] = wk[4] = wk[8] = 1.0;
    Tensor w = Tensor::from_data({3, 3, 1, 1}, wk);
    CHECK(pointwise_conv2d(x, w).data() == x.data());
  }
  SECTION("matches per-pixel matmul oracle") {
    Tensor x = oracles::random_tensor(rng, {2, 3, 5, 4});
    Tensor w = oracles::random_tensor(rng, {4, 3, 1, 1});
    Tensor b = oracles::random_tensor(rng, {4});
    Tensor got = pointwise_conv2d(x, w, b);
    Tensor ref = oracles::pointwise_matmul_ref(x, w, &b);
    CHECK(oracles::max_abs_diff(got, ref) < 1e-12);
  }
  SECTION("two-channel linear combination") {
    Tensor x = Tensor::from_data({1, 2, 1, 1}, {3.0, 5.0});
    Tensor w = Tensor::from_data({1, 2, 1, 1}, {2.0, -1.0});
    CHECK(pointwise_conv2d(x, w).value() == 2.0 * 3.0 - 1.0 * 5.0);
  }
}

TEST_CASE("group_norm statistics and oracle", "[conv]") {
  Rng rng(5);
  SECTION("constant input resolves to zero via eps") {
    Tensor x = Tensor::full({1, 4, 3, 3}, 7.0);
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor y = group_norm(x, 2, gamma, beta, 1e-5);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SECTION("normalized output has zero mean and near-unit variance") {
    double eps = 1e-5;
    Tensor x = oracles::random_tensor(rng, {2, 6, 4, 4}, -2, 2);
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta = Tensor::zeros({6});
    Tensor y = group_norm(x, 3, gamma, beta, eps);
    int cg = 2, plane = 16;
    for (int n = 0; n < 2; ++n)
      for (int g = 0; g < 3; ++g) {
        double mean = 0, var = 0;
        for (int cc = 0; cc < cg; ++cc)
          for (int p = 0; p < plane; ++p) mean += y.at({n, g * cg + cc, p / 4, p % 4});
        mean /= cg * plane;
        for (int cc = 0; cc < cg; ++cc)
          for (int p = 0; p < plane; ++p) {
            double d = y.at({n, g * cg + cc, p / 4, p % 4}) - mean;
            var += d * d;
          }
        var /= cg * plane;
        CHECK(std::fabs(mean) < 1e-10);
        CHECK(std::fabs(var - 1.0) < 1e-3);  // var = sigma^2/(sigma^2+eps)
      }
  }
  SECTION("matches the two-pass oracle") {
    double eps = 1e-5;
    Tensor x = oracles::random_tensor(rng, {2, 6, 3, 5}, -2, 2);
    Tensor gamma = oracles::random_tensor(rng, {6}, 0.5, 1.5);
    Tensor beta = oracles::random_tensor(rng, {6}, -0.5, 0.5);
    Tensor got = group_norm(x, 2, gamma, beta, eps);
    Tensor ref = oracles::group_norm_ref(x, 2, gamma, beta, eps);
    CHECK(oracles::max_abs_diff(got, ref) < 1e-10);
  }
  SECTION("indivisible groups are a configuration error") {
    Tensor x = Tensor::zeros({1, 5, 2, 2});
    Tensor affine = Tensor::full({5}, 1.0);
    CHECK_THROWS_AS(group_norm(x, 2, affine, affine, 1e-5), ConfigError);
  }
}

TEST_CASE("bilinear upsample", "[conv]") {
  SECTION("scale 1 is the identity") {
    Rng rng(6);
    Tensor x = oracles::random_tensor(rng, {1, 2, 3, 3});
    CHECK(bilinear_upsample(x, 1).data() == x.data());
  }
  SECTION("constant plane stays constant") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 3.0);
    Tensor y = bilinear_upsample(x, 4);
    CHECK(y.shape() == Shape{1, 1, 8, 8});
    for (double v : y.data()) CHECK(v == Catch::Approx(3.0).margin(1e-12));
  }
  SECTION("2x upsample of a 1x2 gradient interpolates between samples") {
    Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0});
    Tensor y = bilinear_upsample(x, 2);
    // half-pixel centers along x: [0, 0.25, 0.75, 1]; both output rows equal
    CHECK(y.shape() == Shape{1, 1, 2, 4});
    CHECK(y.data() == std::vector<double>{0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0});
  }
}
