#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crackseg/gbc.hpp"
#include "oracles.hpp"

using namespace crackseg;

namespace {

void zero_tensor(Tensor t) {
  for (double& v : t.raw_data()) v = 0.0;
}

void zero_branch(GbcBlock& b) {
  for (BottConv* bc : {&b.bott1, &b.bott2, &b.bott3, &b.bott4}) {
    zero_tensor(bc->pw_in_w);
    zero_tensor(bc->pw_in_b);
    zero_tensor(bc->dw_w);
    zero_tensor(bc->pw_out_w);
    zero_tensor(bc->pw_out_b);
  }
  for (GroupNormParams* gn : {&b.norm1, &b.norm2, &b.norm3, &b.norm4}) zero_tensor(gn->beta);
}

}  // namespace

TEST_CASE("bottconv rank invariant", "[gbc]") {
  Rng rng(1);
  CHECK_THROWS_AS(BottConv::init(8, 8, 3, 0, rng), ConfigError);
  CHECK_THROWS_AS(BottConv::init(8, 4, 3, 5, rng), ConfigError);
  CHECK_NOTHROW(BottConv::init(8, 4, 3, 4, rng));
}

TEST_CASE("bottconv with identity projections equals pure depthwise", "[gbc]") {
  Rng rng(2);
  int c = 3, k = 3;
  BottConv b = BottConv::init(c, c, k, c, rng);
  // pw_in = pw_out = identity, biases zero
  zero_tensor(b.pw_in_w);
  zero_tensor(b.pw_in_b);
  zero_tensor(b.pw_out_w);
  zero_tensor(b.pw_out_b);
  for (int i = 0; i < c; ++i) {
    b.pw_in_w.raw_data()[i * c + i] = 1.0;
    b.pw_out_w.raw_data()[i * c + i] = 1.0;
  }
  Tensor x = oracles::random_tensor(rng, {2, c, 5, 5});
  Tensor got = b.forward(x);
  Tensor ref = depthwise_conv2d(x, b.dw_w, Tensor(), 1, k / 2);
  CHECK(oracles::max_abs_diff(got, ref) == 0.0);
}

TEST_CASE("bottconv parameter counts", "[gbc]") {
  Rng rng(3);
  SECTION("16->16 k=3 r=4 weight count is 164") {
    BottConv b = BottConv::init(16, 16, 3, 4, rng);
    CHECK(b.weight_param_count() == 164);  // 16*4 + 4*9 + 16*4
    CHECK(b.param_count() == 164 + 4 + 16);
    CHECK(full_conv_weight_count(16, 16, 3) == 2304);
    double ratio = double(b.weight_param_count()) / double(full_conv_weight_count(16, 16, 3));
    CHECK(ratio == Catch::Approx(164.0 / 2304.0));
    CHECK(ratio < 0.08);
  }
  SECTION("low-rank reduction holds whenever r <= min(Cin,Cout)/2 and k=3") {
    Rng pick(4);
    for (int trial = 0; trial < 30; ++trial) {
      int cin = pick.uniform_int(2, 64);
      int cout = pick.uniform_int(2, 64);
      int r = std::max(1, pick.uniform_int(1, std::min(cin, cout) / 2));
      BottConv b = BottConv::init(cin, cout, 3, r, pick);
      REQUIRE(b.weight_param_count() < full_conv_weight_count(cin, cout, 3));
    }
  }
}

TEST_CASE("bottconv zero input yields zero output when biases are zero", "[gbc]") {
  Rng rng(5);
  BottConv b = BottConv::init(4, 4, 3, 2, rng);
  zero_tensor(b.pw_in_b);
  zero_tensor(b.pw_out_b);
  Tensor x = Tensor::zeros({1, 4, 6, 6});
  Tensor y = b.forward(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("gbc zero-branch residual identity is bitwise", "[gbc]") {
  Rng rng(6);
  for (int c : {3, 4, 8}) {
    GbcBlock block = GbcBlock::init(c, 4, 4, rng);
    zero_branch(block);
    Tensor x = oracles::random_tensor(rng, {2, c, 5, 5});
    Tensor y = block.forward(x);
    CHECK(y.data() == x.data());
  }
}

TEST_CASE("gbc output shape equals input shape", "[gbc]") {
  Rng rng(7);
  for (int c : {2, 4, 6}) {
    GbcBlock block = GbcBlock::init(c, 4, 4, rng);
    Tensor x = oracles::random_tensor(rng, {1, c, 7, 4});
    CHECK(block.forward(x).shape() == x.shape());
  }
  GbcBlock block = GbcBlock::init(4, 4, 4, rng);
  CHECK_THROWS_AS(block.forward(Tensor::zeros({1, 5, 4, 4})), ConfigError);
}

TEST_CASE("gbc matches a straight-line transcription of its equations", "[gbc]") {
  Rng rng(8);
  int c = 4;
  GbcBlock b = GbcBlock::init(c, 4, 4, rng);
  Tensor x = oracles::random_tensor(rng, {1, c, 6, 6});

  // straight-line composition from the primitive ops
  Tensor g1 = relu(group_norm(b.bott1.forward(x), b.norm1.groups, b.norm1.gamma, b.norm1.beta, b.norm1.eps));
  Tensor x1 = relu(group_norm(b.bott2.forward(g1), b.norm2.groups, b.norm2.gamma, b.norm2.beta, b.norm2.eps));
  Tensor g2 = relu(group_norm(b.bott3.forward(x), b.norm3.groups, b.norm3.gamma, b.norm3.beta, b.norm3.eps));
  Tensor m = mul(x1, g2);
  Tensor y = relu(group_norm(b.bott4.forward(m), b.norm4.groups, b.norm4.gamma, b.norm4.beta, b.norm4.eps));
  Tensor ref = add(y, x);

  CHECK(oracles::max_abs_diff(b.forward(x), ref) < 1e-12);
}

TEST_CASE("gate output is nonnegative and masks the main branch", "[gbc]") {
  Rng rng(9);
  int c = 4;
  GbcBlock b = GbcBlock::init(c, 4, 4, rng);
  Tensor x = oracles::random_tensor(rng, {1, c, 5, 5});
  Tensor g2 = relu(b.norm3.forward(b.bott3.forward(x)));
  Tensor x1 = relu(b.norm2.forward(b.bott2.forward(relu(b.norm1.forward(b.bott1.forward(x))))));
  Tensor m = mul(x1, g2);
  const auto& g2d = g2.data();
  const auto& x1d = x1.data();
  const auto& md = m.data();
  for (size_t i = 0; i < md.size(); ++i) {
    CHECK(g2d[i] >= 0.0);
    if (g2d[i] > 0.0) {
      // sign of m follows sign of x1 wherever the gate is active
      CHECK(((md[i] > 0) == (x1d[i] > 0) || md[i] == 0.0));
    } else {
      CHECK(md[i] == 0.0);
    }
  }
}

TEST_CASE("gbc gradients match finite differences", "[gbc]") {
  Rng rng(10);
  int c = 2;
  GbcBlock b = GbcBlock::init(c, 2, 2, rng);
  Tensor x = oracles::random_tensor(rng, {1, c, 4, 4}, -1, 1, true);
  Tensor mask = oracles::random_tensor(rng, {1, c, 4, 4});
  auto f = [&] { return sum_all(mul(mask, b.forward(x))); };
  std::vector<Tensor> inputs{x,
                             b.bott1.pw_in_w,
                             b.bott1.dw_w,
                             b.bott1.pw_out_w,
                             b.bott2.pw_in_b,
                             b.bott3.pw_out_w,
                             b.bott4.dw_w,
                             b.norm1.gamma,
                             b.norm2.beta,
                             b.norm3.gamma,
                             b.norm4.beta};
  CHECK(oracles::fd_max_error(f, inputs, 1e-5, 24) < 1e-4);
}
