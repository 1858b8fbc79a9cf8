#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crackseg/head.hpp"
#include "crackseg/model.hpp"
#include "oracles.hpp"

using namespace crackseg;

namespace {

NetworkConfig head_config() {
  NetworkConfig cfg;
  cfg.image_size = 16;
  cfg.embed_dim = 4;
  cfg.patch_size = 4;
  cfg.num_layers = 2;
  cfg.state_dim = 2;
  return cfg;
}

std::vector<Tensor> random_pyramid(Rng& rng, int levels, int n, int c, int h, int w) {
  std::vector<Tensor> p;
  for (int i = 0; i < levels; ++i) p.push_back(oracles::random_tensor(rng, {n, c, h, w}));
  return p;
}

}  // namespace

TEST_CASE("head output shape and sigmoid range", "[head]") {
  Rng rng(1);
  NetworkConfig cfg = head_config();
  MfsHead head = MfsHead::init(cfg, rng);
  auto pyramid = random_pyramid(rng, 2, 2, 4, 4, 4);
  Tensor logits = head.forward(pyramid, 16, 16);
  CHECK(logits.shape() == Shape{2, 1, 16, 16});
  Tensor prob = sigmoid(logits);
  for (double v : prob.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("head with unit scale skips upsampling", "[head]") {
  Rng rng(2);
  NetworkConfig cfg = head_config();
  MfsHead head = MfsHead::init(cfg, rng);
  auto pyramid = random_pyramid(rng, 2, 1, 4, 4, 4);
  Tensor logits = head.forward(pyramid, 4, 4);
  CHECK(logits.shape() == Shape{1, 1, 4, 4});
}

TEST_CASE("head rejects non-integer scales", "[head]") {
  Rng rng(3);
  NetworkConfig cfg = head_config();
  MfsHead head = MfsHead::init(cfg, rng);
  auto pyramid = random_pyramid(rng, 2, 1, 4, 4, 4);
  CHECK_THROWS_AS(head.forward(pyramid, 10, 10), ConfigError);
  CHECK_THROWS_AS(head.forward(pyramid, 16, 8), ConfigError);
}

TEST_CASE("head matches a transcription oracle built from primitives", "[head]") {
  Rng rng(4);
  NetworkConfig cfg = head_config();
  MfsHead head = MfsHead::init(cfg, rng);
  auto pyramid = random_pyramid(rng, 2, 1, 4, 4, 4);
  Tensor got = head.forward(pyramid, 16, 16);

  std::vector<Tensor> ups;
  for (int i = 0; i < 2; ++i) {
    const PixelMlp& m = head.level_mlps[i];
    Tensor h = pointwise_conv2d(relu(pointwise_conv2d(pyramid[i], m.w1, m.b1)), m.w2, m.b2);
    ups.push_back(bilinear_upsample(h, 4));
  }
  Tensor merged = concat(ups, 1);
  Tensor refined = add(head.fuse_gbc.branch(merged), merged);
  Tensor conv = conv2d(refined, head.conv_w, head.conv_b, 1, 1);
  Tensor ref = pointwise_conv2d(relu(pointwise_conv2d(conv, head.out_mlp.w1, head.out_mlp.b1)),
                                head.out_mlp.w2, head.out_mlp.b2);
  CHECK(oracles::max_abs_diff(got, ref) < 1e-12);
}

TEST_CASE("every pyramid level influences the output", "[head]") {
  Rng rng(5);
  NetworkConfig cfg = head_config();
  MfsHead head = MfsHead::init(cfg, rng);
  std::vector<Tensor> pyramid;
  for (int i = 0; i < 2; ++i) pyramid.push_back(oracles::random_tensor(rng, {1, 4, 4, 4}, -1, 1, true));
  Tensor logits = head.forward(pyramid, 16, 16);
  backward(mean_all(logits));
  for (const Tensor& f : pyramid) {
    double norm = 0;
    for (double v : f.grad()) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("binarize threshold semantics", "[head]") {
  Tensor prob = Tensor::from_data({1, 1, 1, 3}, {0.6, 0.5, 0.2});
  Tensor mask = binarize(prob, 0.5);
  CHECK(mask.data() == std::vector<double>{1, 0, 0});  // strict inequality at the tie
  CHECK_THROWS_AS(binarize(prob, 0.0), ConfigError);
  CHECK_THROWS_AS(binarize(prob, 1.0), ConfigError);
}

TEST_CASE("raising the threshold never adds positive pixels", "[head]") {
  Rng rng(6);
  Tensor prob = oracles::random_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0);
  long long prev = 1000000;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    Tensor mask = binarize(prob, t);
    long long count = 0;
    for (double v : mask.data()) count += v == 1.0;
    CHECK(count <= prev);
    prev = count;
  }
}

TEST_CASE("upsample-then-threshold count is monotone in the threshold", "[head]") {
  Rng rng(7);
  Tensor low = oracles::random_tensor(rng, {1, 1, 4, 4}, 0.0, 1.0);
  Tensor up = bilinear_upsample(low, 4);
  long long prev = 1LL << 40;
  for (double t = 0.1; t < 1.0; t += 0.1) {
    Tensor mask = binarize(up, t);
    long long count = 0;
    for (double v : mask.data()) count += v == 1.0;
    CHECK(count <= prev);
    prev = count;
  }
}
