// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "nrt/gradcheck.hpp"
#include "nrt/nn.hpp"
#include "nrt/rng.hpp"
#include "nrt/tensor.hpp"

using namespace nrt;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// straight-line single-head attention: softmax(q kT / sqrt(C)) v
void attention_oracle(const std::vector<double>& q, const std::vector<double>& k,
                      const std::vector<double>& v, int B, int Lq, int Lk, int C,
                      std::vector<double>& out, std::vector<double>& weights) {
  out.assign(static_cast<size_t>(B) * Lq * C, 0.0);
  weights.assign(static_cast<size_t>(B) * Lq * Lk, 0.0);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < Lq; ++i) {
      std::vector<double> s(Lk, 0.0);
      for (int j = 0; j < Lk; ++j)
        for (int c = 0; c < C; ++c)
          s[j] += q[(b * Lq + i) * C + c] * k[(b * Lk + j) * C + c];
      double mx = -1e300;
      for (int j = 0; j < Lk; ++j) {
        s[j] /= std::sqrt(static_cast<double>(C));
        mx = std::max(mx, s[j]);
      }
      double denom = 0.0;
      for (int j = 0; j < Lk; ++j) {
        s[j] = std::exp(s[j] - mx);
        denom += s[j];
      }
      for (int j = 0; j < Lk; ++j) {
        const double w = s[j] / denom;
        weights[(b * Lq + i) * Lk + j] = w;
        for (int c = 0; c < C; ++c)
          out[(b * Lq + i) * C + c] += w * v[(b * Lk + j) * C + c];
      }
    }
}

}  // namespace

TEST_SUITE_BEGIN("numkernel");

TEST_CASE("tensor basics and rejected inputs") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), TensorError);
  CHECK_THROWS_AS(add(t, Tensor::zeros({3, 2})), TensorError);
  CHECK_THROWS_AS(matmul(t, Tensor::zeros({2, 2})), TensorError);
}

TEST_CASE("non-finite values trip a diagnostic error") {
  Tensor big = Tensor::full({2}, 1e308);
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(11);
  const int B = 3, M = 4, K = 5, N = 6;
  auto av = random_vec(rng, B * M * K);
  auto bv = random_vec(rng, K * N);
  Tensor a = Tensor::from_data({B, M, K}, av);
  Tensor b = Tensor::from_data({K, N}, bv);
  Tensor c = matmul(a, b);
  for (int t = 0; t < B; ++t)
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += av[(t * M + i) * K + k] * bv[k * N + j];
        CHECK(c.values()[(t * M + i) * N + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(3);
  Tensor x = Tensor::from_data({5, 7}, random_vec(rng, 35, -4, 4));
  Tensor y = softmax(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += y.values()[r * 7 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tensor y2 = softmax(adds(x, 123.456));
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.values()[i] == doctest::Approx(y2.values()[i]).epsilon(1e-12));
}

TEST_CASE("layernorm of a constant vector is zero before scale/shift") {
  Tensor x = Tensor::full({2, 8}, 3.25);
  Tensor gamma = Tensor::full({8}, 1.0);
  Tensor beta = Tensor::zeros({8});
  Tensor y = layernorm(x, gamma, beta);
  for (double v : y.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("attention: singleton key gets weight one and passes value through") {
  Rng rng(5);
  Tensor q = Tensor::from_data({2, 3, 4}, random_vec(rng, 24));
  Tensor k = Tensor::from_data({2, 1, 4}, random_vec(rng, 8));
  Tensor v = Tensor::from_data({2, 1, 4}, random_vec(rng, 8));
  AttnResult r = attention(q, k, v, 2);
  for (double w : r.weights.values()) CHECK(w == doctest::Approx(1.0));
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 4; ++c)
        CHECK(r.out.values()[(b * 3 + i) * 4 + c] ==
              doctest::Approx(v.values()[b * 4 + c]).epsilon(1e-12));
}

TEST_CASE("attention: identical keys give uniform weights") {
  Rng rng(6);
  auto krow = random_vec(rng, 4);
  std::vector<double> kv;
  for (int j = 0; j < 5; ++j) kv.insert(kv.end(), krow.begin(), krow.end());
  Tensor q = Tensor::from_data({1, 2, 4}, random_vec(rng, 8));
  Tensor k = Tensor::from_data({1, 5, 4}, kv);
  Tensor v = Tensor::from_data({1, 5, 4}, random_vec(rng, 20));
  AttnResult r = attention(q, k, v, 1);
  for (double w : r.weights.values()) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("attention matches the brute-force oracle") {
  Rng rng(7);
  const int B = 2, Lq = 3, Lk = 5, C = 4;
  auto qv = random_vec(rng, B * Lq * C), kv = random_vec(rng, B * Lk * C),
       vv = random_vec(rng, B * Lk * C);
  Tensor q = Tensor::from_data({B, Lq, C}, qv);
  Tensor k = Tensor::from_data({B, Lk, C}, kv);
  Tensor v = Tensor::from_data({B, Lk, C}, vv);
  AttnResult r = attention(q, k, v, 1);
  std::vector<double> oo, ow;
  attention_oracle(qv, kv, vv, B, Lq, Lk, C, oo, ow);
  for (size_t i = 0; i < oo.size(); ++i) CHECK(std::abs(r.out.values()[i] - oo[i]) < 1e-10);
  for (size_t i = 0; i < ow.size(); ++i) CHECK(std::abs(r.weights.values()[i] - ow[i]) < 1e-10);
}

TEST_CASE("masked attention zeroes excluded keys exactly") {
  Rng rng(8);
  const int B = 2, Lq = 2, Lk = 4, C = 4;
  Tensor q = Tensor::from_data({B, Lq, C}, random_vec(rng, B * Lq * C));
  Tensor k = Tensor::from_data({B, Lk, C}, random_vec(rng, B * Lk * C));
  Tensor v = Tensor::from_data({B, Lk, C}, random_vec(rng, B * Lk * C));
  AttnMask mask;
  mask.shape = {B, Lk};
  mask.keep = {1, 1, 0, 1, 0, 1, 1, 1};
  AttnResult r = attention(q, k, v, 2, &mask);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < Lq; ++i)
        for (int j = 0; j < Lk; ++j) {
          const double w = r.weights.values()[((b * 2 + h) * Lq + i) * Lk + j];
          if (!mask.keep[b * Lk + j]) CHECK(w == 0.0);
        }
  // a fully-masked row yields zeros, not NaN
  AttnMask all;
  all.shape = {B, Lk};
  all.keep.assign(B * Lk, 0);
  AttnResult rz = attention(q, k, v, 2, &all);
  for (double w : rz.weights.values()) CHECK(w == 0.0);
  for (double o : rz.out.values()) CHECK(o == 0.0);
}

TEST_CASE("projected multi-head attention: singleton key returns the projected value") {
  Rng rng(9);
  nn::ParamRegistry reg;
  nn::MultiHeadAttention mha(reg, "mha", 6, 3, rng);
  Tensor q = Tensor::from_data({1, 2, 6}, random_vec(rng, 12));
  Tensor kv = Tensor::from_data({1, 1, 6}, random_vec(rng, 6));
  AttnResult r = mha(q, kv);
  Tensor expect = mha.wo(mha.wv(kv));
  for (int c = 0; c < 6; ++c) {
    CHECK(r.out.values()[c] == doctest::Approx(expect.values()[c]).epsilon(1e-12));
    CHECK(r.out.values()[6 + c] == doctest::Approx(expect.values()[c]).epsilon(1e-12));
  }
}

TEST_CASE("backward: sum and half-sum-of-squares") {
  Rng rng(10);
  auto data = random_vec(rng, 12);
  Tensor theta = Tensor::param({3, 4}, data, "theta");
  backward(sum(theta));
  for (double g : theta.grad()) CHECK(g == doctest::Approx(1.0));

  theta.zero_grad();
  backward(muls(sum(mul(theta, theta)), 0.5));
  for (int i = 0; i < 12; ++i) CHECK(theta.grad()[i] == doctest::Approx(data[i]).epsilon(1e-12));
}

TEST_CASE("backward accumulates across calls without zeroing") {
  Tensor theta = Tensor::param({3}, {1, 2, 3}, "theta");
  backward(sum(theta));
  backward(sum(theta));
  for (double g : theta.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("backward on a detached tensor is a usage error") {
  Tensor t = Tensor::from_data({1}, {2.0});
  CHECK_THROWS_AS(backward(t), NumericError);
}

TEST_CASE("grad_check: single linear layer is exact to 1e-7") {
  Rng rng(12);
  nn::ParamRegistry reg;
  nn::Linear lin(reg, "lin", 5, 3, rng);
  Tensor x = Tensor::from_data({4, 5}, random_vec(rng, 20));
  Tensor tgt = Tensor::from_data({4, 3}, random_vec(rng, 12));
  GradCheckOptions opt;
  opt.tolerance = 1e-7;
  auto rep = grad_check(reg.params(), [&] { return nn::mse(lin(x), tgt); }, opt);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("grad_check: layernorm + softmax chain passes at 1e-4") {
  Rng rng(13);
  nn::ParamRegistry reg;
  nn::Linear lin(reg, "lin", 6, 6, rng);
  nn::LayerNorm ln(reg, "ln", 6);
  Tensor x = Tensor::from_data({3, 6}, random_vec(rng, 18));
  Tensor w = Tensor::from_data({3, 6}, random_vec(rng, 18));
  auto rep = grad_check(reg.params(), [&] { return sum(mul(softmax(ln(lin(x))), w)); });
  CHECK(rep.pass);
}

TEST_CASE("grad_check detects a corrupted gradient") {
  Rng rng(14);
  auto data = random_vec(rng, 6, 0.5, 1.5);
  Tensor theta = Tensor::param({6}, data, "theta");
  auto loss_fn = [&] {
    Tensor y = mul(theta, theta);
    auto node = y.node();
    auto orig = node->backprop;
    auto tn = theta.node();
    node->backprop = [orig, tn](Node& self) {
      orig(self);
      tn->grad[2] *= 2.0;  // injected fault
    };
    return sum(y);
  };
  auto rep = grad_check({theta}, loss_fn);
  CHECK(!rep.pass);
  CHECK(rep.worst.index == 2);
}

TEST_CASE("every primitive passes finite-difference checks on random shapes") {
  Rng rng(15);
  for (int trial = 0; trial < 3; ++trial) {
    const int a = 2 + static_cast<int>(rng.uniform_index(2));
    const int b = 2 + static_cast<int>(rng.uniform_index(3));
    const int c = 2 + static_cast<int>(rng.uniform_index(3));
    const int d = 4;
    const Shape s4{a, b, c, d};
    const int64_t n = shape_numel(s4);
    Tensor p = Tensor::param(s4, random_vec(rng, n), "p");
    Tensor p2 = Tensor::param(s4, random_vec(rng, n), "p2");
    Tensor wgt = Tensor::from_data(s4, random_vec(rng, n));

    auto check = [&](const char* what, std::function<Tensor()> fn) {
      auto rep = grad_check({p, p2}, fn);
      INFO(what, " max_rel_err=", rep.max_rel_err, " worst=", rep.worst.param, "[",
           rep.worst.index, "]");
      CHECK(rep.pass);
    };
    check("add", [&] { return sum(mul(add(p, p2), wgt)); });
    check("sub", [&] { return sum(mul(sub(p, p2), wgt)); });
    check("mul", [&] { return sum(mul(mul(p, p2), wgt)); });
    check("muls/adds", [&] { return sum(mul(adds(muls(p, 1.7), 0.3), wgt)); });
    check("relu", [&] { return sum(mul(relu(p), wgt)); });
    check("sigmoid", [&] { return sum(mul(sigmoid(p), wgt)); });
    check("sin/cos", [&] { return sum(mul(sin_of(p), cos_of(p2))); });
    check("softmax", [&] { return sum(mul(softmax(p), wgt)); });
    check("mean", [&] { return mean(mul(p, p2)); });
    check("reshape", [&] { return sum(mul(reshape(p, {a * b, c * d}), reshape(wgt, {a * b, c * d}))); });
    check("permute", [&] {
      return sum(mul(permute(p, {2, 0, 3, 1}), permute(wgt, {2, 0, 3, 1})));
    });
    check("slice/concat", [&] {
      Tensor left = slice(p, 1, 0, 1);
      Tensor right = slice(p, 1, 1, b - 1);
      return sum(mul(concat({left, right}, 1), wgt));
    });
    check("matmul", [&] {
      Tensor q = reshape(p, {a * b, c, d});
      Tensor r = reshape(p2, {a * b, c, d});
      return sum(matmul(q, permute(r, {0, 2, 1})));
    });
    check("badd", [&] {
      Tensor bias = slice(reshape(p2, {static_cast<int>(n) / d, d}), 0, 0, 1);
      return sum(mul(badd(p, reshape(bias, {d})), wgt));
    });
  }
}

TEST_CASE("attention gradient passes finite differences") {
  Rng rng(16);
  nn::ParamRegistry reg;
  nn::MultiHeadAttention mha(reg, "mha", 8, 2, rng);
  Tensor x = Tensor::from_data({2, 3, 8}, random_vec(rng, 48));
  Tensor w = Tensor::from_data({2, 3, 8}, random_vec(rng, 48));
  auto rep = grad_check(reg.params(), [&] {
    AttnResult r = mha(x, x);
    return sum(mul(r.out, w));
  });
  CHECK(rep.pass);
}

TEST_CASE("conv2d matches direct convolution and its gradient") {
  Rng rng(17);
  const int H = 6, W = 5, Cin = 3, Cout = 4, K = 3, stride = 2;
  nn::ParamRegistry reg;
  Tensor wt = reg.add("w", {K, K, Cin, Cout}, random_vec(rng, K * K * Cin * Cout));
  Tensor bt = reg.add("b", {Cout}, random_vec(rng, Cout));
  auto xv = random_vec(rng, H * W * Cin);
  Tensor x = Tensor::from_data({H, W, Cin}, xv);

  Tensor y = conv2d(x, wt, bt, stride);
  const int Ho = y.dim(0), Wo = y.dim(1);
  CHECK(Ho == 3);
  CHECK(Wo == 3);
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return i;
  };
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int co = 0; co < Cout; ++co) {
        double acc = bt.values()[co];
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx)
            for (int ci = 0; ci < Cin; ++ci) {
              const int sy = reflect(oy * stride - 1 + ky, H);
              const int sx = reflect(ox * stride - 1 + kx, W);
              acc += xv[(sy * W + sx) * Cin + ci] *
                     wt.values()[((ky * K + kx) * Cin + ci) * Cout + co];
            }
        CHECK(y.values()[(oy * Wo + ox) * Cout + co] == doctest::Approx(acc).epsilon(1e-12));
      }

  Tensor tgt = Tensor::from_data({Ho, Wo, Cout}, random_vec(rng, Ho * Wo * Cout));
  auto rep = grad_check(reg.params(), [&] { return nn::mse(conv2d(x, wt, bt, stride), tgt); });
  CHECK(rep.pass);
}

TEST_CASE("upsample2x and bilinear_sample gradients") {
  Rng rng(18);
  nn::ParamRegistry reg;
  Tensor fmap = reg.add("f", {4, 4, 3}, random_vec(rng, 48));
  std::vector<double> ys{0.0, 1.5, 2.25, 3.0}, xs{0.0, 0.5, 1.75, 3.0};
  std::vector<uint8_t> valid{1, 1, 1, 0};

  Tensor s = bilinear_sample(fmap, ys, xs, valid);
  // lattice point
  for (int c = 0; c < 3; ++c) CHECK(s.values()[c] == doctest::Approx(fmap.values()[c]));
  // invalid row is zero
  for (int c = 0; c < 3; ++c) CHECK(s.values()[3 * 3 + c] == 0.0);
  // midpoint of four nodes averages them
  std::vector<double> ym{1.5}, xm{1.5};
  std::vector<uint8_t> vm{1};
  Tensor m = bilinear_sample(fmap, ym, xm, vm);
  for (int c = 0; c < 3; ++c) {
    const double avg = (fmap.values()[(1 * 4 + 1) * 3 + c] + fmap.values()[(1 * 4 + 2) * 3 + c] +
                        fmap.values()[(2 * 4 + 1) * 3 + c] + fmap.values()[(2 * 4 + 2) * 3 + c]) /
                       4.0;
    CHECK(m.values()[c] == doctest::Approx(avg).epsilon(1e-12));
  }

  Tensor w1 = Tensor::from_data({4, 3}, random_vec(rng, 12));
  auto rep = grad_check(reg.params(), [&] {
    return sum(mul(bilinear_sample(fmap, ys, xs, valid), w1));
  });
  CHECK(rep.pass);
  Tensor w2 = Tensor::from_data({8, 8, 3}, random_vec(rng, 192));
  rep = grad_check(reg.params(), [&] { return sum(mul(upsample2x(fmap), w2)); });
  CHECK(rep.pass);
}

TEST_CASE("layernorm gradient") {
  Rng rng(19);
  nn::ParamRegistry reg;
  nn::LayerNorm ln(reg, "ln", 6);
  Tensor x = reg.add("x", {4, 6}, random_vec(rng, 24));
  Tensor w = Tensor::from_data({4, 6}, random_vec(rng, 24));
  auto rep = grad_check(reg.params(), [&] { return sum(mul(ln(x), w)); });
  CHECK(rep.pass);
}

TEST_CASE("mlp with identity-initialized single layer is the identity map") {
  Rng rng(20);
  nn::ParamRegistry reg;
  nn::Mlp mlp(reg, "mlp", {4, 4}, rng);
  auto& wdata = mlp.layers[0].w.leaf_data();
  std::fill(wdata.begin(), wdata.end(), 0.0);
  for (int i = 0; i < 4; ++i) wdata[i * 4 + i] = 1.0;
  Tensor x = Tensor::from_data({3, 4}, random_vec(rng, 12));
  Tensor y = mlp(x);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("permute then inverse permute restores the tensor bit-exactly") {
  Rng rng(21);
  Tensor x = Tensor::from_data({2, 3, 4, 5}, random_vec(rng, 120));
  Tensor y = permute(permute(x, {3, 1, 0, 2}), {2, 1, 3, 0});
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("fixed seed reproduces forward and backward bit-exactly") {
  auto run = [](std::vector<double>& out_vals, std::vector<double>& out_grads) {
    Rng rng(42);
    nn::ParamRegistry reg;
    nn::SelfAttnLayer layer(reg, "blk", 8, 2, 2, rng);
    Tensor x = Tensor::from_data({1, 4, 8}, random_vec(rng, 32));
    AttnResult r = layer(x);
    Tensor loss = mean(mul(r.out, r.out));
    backward(loss);
    out_vals = r.out.values();
    out_grads.clear();
    for (const auto& p : reg.params())
      out_grads.insert(out_grads.end(), p.grad().begin(), p.grad().end());
  };
  std::vector<double> v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("f32 mode rounds stored values through float") {
  Tensor x = Tensor::from_data({3}, {1.0 / 3.0, 2.0 / 3.0, 1e-10});
  Tensor y = x.astype(DType::f32);
  for (int i = 0; i < 3; ++i) {
    CHECK(y.values()[i] == static_cast<double>(static_cast<float>(x.values()[i])));
    CHECK(y.values()[i] != x.values()[i]);  // all three are inexact in f32
  }
  Tensor z = add(y, y);
  CHECK(z.dtype() == DType::f32);
  CHECK(add(y, x).dtype() == DType::f64);
}

TEST_SUITE_END();
