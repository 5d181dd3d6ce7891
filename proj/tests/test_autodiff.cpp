#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "umi/autodiff.hpp"
#include "umi/denoiser.hpp"
#include "umi/rng.hpp"

using namespace umi;
using autodiff::Mode;
using autodiff::Param;
using autodiff::ParamRole;
using autodiff::ParamStore;
using autodiff::Tape;
using autodiff::Tensor4;

namespace {

Tensor4 random_tensor(int n, int c, int h, int w, uint64_t seed) {
  Tensor4 t(n, c, h, w);
  for (size_t i = 0; i < t.size(); ++i) t.v[i] = gaussian(hash_combine(seed, i));
  return t;
}

// Direct 6-loop same-padded cross-correlation, the convolution oracle.
Tensor4 conv_oracle(const Tensor4& x, const Tensor4& w, const Tensor4& b) {
  int k = w.h, pad = k / 2;
  Tensor4 out(x.n, w.n, x.h, x.w);
  for (int s = 0; s < x.n; ++s)
    for (int co = 0; co < w.n; ++co)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          double acc = b.v[size_t(co)];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int sy = y + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                acc += w.at(co, ci, ky, kx) * x.at(s, ci, sy, sx);
              }
          out.at(s, co, y, xx) = acc;
        }
  return out;
}

struct BnParams {
  ParamStore store;
  BnParams(int c, double gamma, double beta) {
    Tensor4 g(1, c, 1, 1), b(1, c, 1, 1), rm(1, c, 1, 1), rv(1, c, 1, 1);
    std::fill(g.v.begin(), g.v.end(), gamma);
    std::fill(b.v.begin(), b.v.end(), beta);
    std::fill(rv.v.begin(), rv.v.end(), 1.0);
    store.add("bn.gamma", ParamRole::bn_gamma, g);
    store.add("bn.beta", ParamRole::bn_beta, b);
    store.add("bn.running_mean", ParamRole::bn_running_mean, rm);
    store.add("bn.running_var", ParamRole::bn_running_var, rv);
    store.add("bn.count", ParamRole::bn_count, Tensor4(1, 1, 1, 1));
  }
  int forward(Tape& tape, int x, Mode mode) {
    return tape.batch_norm(x, store.at("bn.gamma"), store.at("bn.beta"),
                           store.at("bn.running_mean"), store.at("bn.running_var"),
                           store.at("bn.count"), mode);
  }
};

} // namespace

TEST_CASE("conv2d: identity kernel, ones kernel, brute-force oracle") {
  ParamStore store;
  Tensor4 ident(1, 1, 3, 3);
  ident.at(0, 0, 1, 1) = 1.0;
  Param& w_id = store.add("id.weight", ParamRole::weight, ident);
  Param& b0 = store.add("id.bias", ParamRole::bias, Tensor4(1, 1, 1, 1));

  Tensor4 x = random_tensor(2, 1, 6, 6, 10);
  Tape tape;
  int y = tape.conv2d(tape.constant(x), w_id, b0);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(tape.value(y).v[i] == doctest::Approx(x.v[i]).epsilon(1e-15));

  Tensor4 ones(1, 1, 3, 3);
  std::fill(ones.v.begin(), ones.v.end(), 1.0);
  Param& w_ones = store.add("ones.weight", ParamRole::weight, ones);
  Tensor4 c(1, 1, 5, 5);
  std::fill(c.v.begin(), c.v.end(), 2.5);
  Tape tape2;
  int y2 = tape2.conv2d(tape2.constant(c), w_ones, b0);
  CHECK(tape2.value(y2).at(0, 0, 2, 2) == doctest::Approx(9.0 * 2.5).epsilon(1e-14));

  Tensor4 w = random_tensor(3, 2, 3, 3, 20);
  Tensor4 bias = random_tensor(1, 3, 1, 1, 21);
  Param& pw = store.add("r.weight", ParamRole::weight, w);
  Param& pb = store.add("r.bias", ParamRole::bias, bias);
  Tensor4 xin = random_tensor(2, 2, 5, 7, 22);
  Tape tape3;
  int y3 = tape3.conv2d(tape3.constant(xin), pw, pb);
  Tensor4 want = conv_oracle(xin, w, bias);
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(tape3.value(y3).v[i] - want.v[i]) < 1e-10);

  // 1x1 kernels are supported; 5x5 and channel mismatches are not.
  Tensor4 w1 = random_tensor(2, 2, 1, 1, 23);
  Param& pw1 = store.add("one.weight", ParamRole::weight, w1);
  Param& pb1 = store.add("one.bias", ParamRole::bias, Tensor4(1, 2, 1, 1));
  Tape tape4;
  int y4 = tape4.conv2d(tape4.constant(xin), pw1, pb1);
  Tensor4 want1 = conv_oracle(xin, w1, Tensor4(1, 2, 1, 1));
  for (size_t i = 0; i < want1.size(); ++i)
    CHECK(std::abs(tape4.value(y4).v[i] - want1.v[i]) < 1e-12);

  Tensor4 wbad = random_tensor(2, 3, 3, 3, 24); // 3 in-channels vs 2
  Param& pwb = store.add("bad.weight", ParamRole::weight, wbad);
  Tape tape5;
  CHECK_THROWS_AS(tape5.conv2d(tape5.constant(xin), pwb, pb1), std::invalid_argument);
}

TEST_CASE("conv2d: backward matches finite differences through a mse loss") {
  ParamStore store;
  Tensor4 w = random_tensor(2, 2, 3, 3, 30);
  for (double& v : w.v) v *= 0.5;
  Param& pw = store.add("c.weight", ParamRole::weight, w);
  Param& pb = store.add("c.bias", ParamRole::bias, random_tensor(1, 2, 1, 1, 31));
  Tensor4 x = random_tensor(2, 2, 4, 4, 32);
  Tensor4 target = random_tensor(2, 2, 4, 4, 33);

  auto loss = [&](bool with_grad) {
    Tape tape;
    int out = tape.conv2d(tape.constant(x), pw, pb);
    int l = tape.mse_const(out, target);
    if (with_grad) tape.backward(l);
    return tape.scalar(l);
  };
  auto res = autodiff::gradient_check(store, loss, 1e-3, 500, 1);
  CHECK(res.max_rel_error <= 1e-6); // quadratic loss: FD nearly exact
}

TEST_CASE("batch_norm: train-mode statistics and affine transform") {
  BnParams bn(3, 1.0, 0.0);
  Tensor4 x = random_tensor(4, 3, 5, 5, 40);
  Tape tape;
  int y = bn.forward(tape, tape.constant(x), Mode::train);
  const Tensor4& out = tape.value(y);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 25; ++i) mean += out.v[out.idx(s, c, i / 5, i % 5)];
    mean /= 100.0;
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 25; ++i) {
        double d = out.v[out.idx(s, c, i / 5, i % 5)] - mean;
        var += d * d;
      }
    var /= 100.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3); // epsilon shrinks variance slightly
  }

  BnParams bn2(3, 2.0, 3.0);
  Tape tape2;
  int y2 = bn2.forward(tape2, tape2.constant(x), Mode::train);
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(tape2.value(y2).v[i] == doctest::Approx(2.0 * out.v[i] + 3.0).epsilon(1e-9));
}

TEST_CASE("batch_norm: matches the hand-computed normalization oracle") {
  BnParams bn(2, 1.3, -0.4);
  Tensor4 x = random_tensor(3, 2, 4, 4, 50);
  Tape tape;
  int y = bn.forward(tape, tape.constant(x), Mode::train);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    int m = 3 * 16;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 16; ++i) mean += x.at(s, c, i / 4, i % 4);
    mean /= m;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 16; ++i) {
        double d = x.at(s, c, i / 4, i % 4) - mean;
        var += d * d;
      }
    var /= m;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 16; ++i) {
        double want = 1.3 * (x.at(s, c, i / 4, i % 4) - mean) / std::sqrt(var + 1e-5) - 0.4;
        CHECK(std::abs(tape.value(y).at(s, c, i / 4, i % 4) - want) < 1e-8);
      }
  }
  // Running statistics moved toward the batch statistics (momentum 0.1).
  CHECK(bn.store.at("bn.count").value.v[0] == 1.0);
  CHECK(bn.store.at("bn.running_var").value.v[0] != 1.0);
}

TEST_CASE("batch_norm: inference before any training step is an error") {
  BnParams bn(2, 1.0, 0.0);
  Tensor4 x = random_tensor(1, 2, 4, 4, 60);
  Tape tape;
  CHECK_THROWS_AS(bn.forward(tape, tape.constant(x), Mode::infer), std::logic_error);

  Tape t2;
  bn.forward(t2, t2.constant(x), Mode::train);
  Tape t3;
  CHECK_NOTHROW(bn.forward(t3, t3.constant(x), Mode::infer));
}

TEST_CASE("leaky_relu: values and gradient routing") {
  Tape tape;
  Tensor4 x(1, 1, 1, 3);
  x.v = {5.0, -4.0, -2.0};
  int xn = tape.constant(x);
  int y = tape.leaky_relu(xn, 0.1);
  CHECK(tape.value(y).v[0] == 5.0);
  CHECK(tape.value(y).v[1] == doctest::Approx(-0.4));

  Tensor4 target(1, 1, 1, 3); // mae grad: sign(y - 0) elementwise / 3
  int l = tape.mae_const(y, target);
  tape.backward(l);
  CHECK(tape.grad(xn).v[2] == doctest::Approx(-1.0 / 3.0 * 0.1)); // slope at x=-2
  CHECK(tape.grad(xn).v[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("max_pool2: window max, tie-break to top-left, loop oracle") {
  Tape tape;
  Tensor4 x(1, 1, 2, 2);
  x.v = {1.0, 2.0, 3.0, 4.0};
  int y = tape.max_pool2(tape.constant(x));
  CHECK(tape.value(y).v[0] == 4.0);

  Tensor4 c(1, 1, 4, 4);
  std::fill(c.v.begin(), c.v.end(), 7.0);
  Tape t2;
  int xn = t2.constant(c);
  int y2 = t2.max_pool2(xn);
  int l = t2.mae_const(y2, Tensor4(1, 1, 2, 2));
  t2.backward(l);
  // Gradient routes to the top-left of each constant window.
  for (int wy = 0; wy < 2; ++wy)
    for (int wx = 0; wx < 2; ++wx) {
      CHECK(t2.grad(xn).at(0, 0, 2 * wy, 2 * wx) != 0.0);
      CHECK(t2.grad(xn).at(0, 0, 2 * wy + 1, 2 * wx) == 0.0);
      CHECK(t2.grad(xn).at(0, 0, 2 * wy, 2 * wx + 1) == 0.0);
      CHECK(t2.grad(xn).at(0, 0, 2 * wy + 1, 2 * wx + 1) == 0.0);
    }

  Tensor4 r = random_tensor(2, 3, 6, 8, 70);
  Tape t3;
  int y3 = t3.max_pool2(t3.constant(r));
  for (int s = 0; s < 2; ++s)
    for (int ch = 0; ch < 3; ++ch)
      for (int py = 0; py < 3; ++py)
        for (int px = 0; px < 4; ++px) {
          double want = std::max({r.at(s, ch, 2 * py, 2 * px), r.at(s, ch, 2 * py, 2 * px + 1),
                                  r.at(s, ch, 2 * py + 1, 2 * px),
                                  r.at(s, ch, 2 * py + 1, 2 * px + 1)});
          CHECK(t3.value(y3).at(s, ch, py, px) == want);
        }

  Tensor4 odd(1, 1, 3, 4);
  Tape t4;
  CHECK_THROWS_AS(t4.max_pool2(t4.constant(odd)), std::invalid_argument);
}

TEST_CASE("bilinear_up2: constants, 1x1 input, closed-form weights") {
  Tensor4 c(1, 1, 2, 2);
  std::fill(c.v.begin(), c.v.end(), 3.25);
  Tape tape;
  int y = tape.bilinear_up2(tape.constant(c));
  for (double v : tape.value(y).v) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));

  Tensor4 one(1, 1, 1, 1);
  one.v[0] = -1.5;
  Tape t2;
  int y2 = t2.bilinear_up2(t2.constant(one));
  REQUIRE(t2.value(y2).size() == 4);
  for (double v : t2.value(y2).v) CHECK(v == -1.5);

  // Hand-computed 0.25/0.75 weights for a 2x2 input (align corners false).
  Tensor4 q(1, 1, 2, 2);
  q.v = {1.0, 2.0, 3.0, 4.0};
  Tape t3;
  int y3 = t3.bilinear_up2(t3.constant(q));
  const Tensor4& o = t3.value(y3);
  CHECK(o.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(o.at(0, 0, 0, 1) == doctest::Approx(0.75 * 1.0 + 0.25 * 2.0));
  CHECK(o.at(0, 0, 0, 2) == doctest::Approx(0.25 * 1.0 + 0.75 * 2.0));
  CHECK(o.at(0, 0, 1, 1) ==
        doctest::Approx(0.75 * (0.75 * 1 + 0.25 * 2) + 0.25 * (0.75 * 3 + 0.25 * 4)));
  CHECK(o.at(0, 0, 3, 3) == doctest::Approx(4.0));
}

TEST_CASE("concat_channels: shapes, ordering, gradient split") {
  Tensor4 a = random_tensor(1, 4, 8, 8, 80);
  Tensor4 b = random_tensor(1, 4, 8, 8, 81);
  Tape tape;
  int na = tape.constant(a), nb = tape.constant(b);
  int y = tape.concat_channels(na, nb);
  CHECK(tape.value(y).c == 8);
  CHECK(tape.value(y).at(0, 0, 3, 3) == a.at(0, 0, 3, 3)); // a first
  CHECK(tape.value(y).at(0, 4, 3, 3) == b.at(0, 0, 3, 3));

  int l = tape.mae_const(y, Tensor4(1, 8, 8, 8));
  tape.backward(l);
  // Round trip: concatenated gradient splits back to both inputs.
  double norm_a = 0.0, norm_b = 0.0;
  for (double v : tape.grad(na).v) norm_a += std::abs(v);
  for (double v : tape.grad(nb).v) norm_b += std::abs(v);
  CHECK(norm_a > 0.0);
  CHECK(norm_b > 0.0);

  Tensor4 wrong = random_tensor(1, 4, 8, 7, 82);
  Tape t2;
  CHECK_THROWS_AS(t2.concat_channels(t2.constant(a), t2.constant(wrong)),
                  std::invalid_argument);
}

TEST_CASE("tape: inputs are not mutated; gradients accumulate across uses") {
  ParamStore store;
  Tensor4 w = random_tensor(1, 1, 3, 3, 90);
  Param& pw = store.add("w.weight", ParamRole::weight, w);
  Param& pb = store.add("w.bias", ParamRole::bias, Tensor4(1, 1, 1, 1));
  Tensor4 x1 = random_tensor(1, 1, 4, 4, 91);
  Tensor4 x2 = random_tensor(1, 1, 4, 4, 92);
  Tensor4 x1_copy = x1;

  // Shared parameter used twice: gradient is the sum of per-use gradients.
  Tape tape;
  int l = tape.scalar_sum({{1.0, tape.mae_const(tape.conv2d(tape.constant(x1), pw, pb),
                                                Tensor4(1, 1, 4, 4))},
                           {1.0, tape.mae_const(tape.conv2d(tape.constant(x2), pw, pb),
                                                Tensor4(1, 1, 4, 4))}});
  store.zero_grads();
  tape.backward(l);
  std::vector<double> both = pw.grad.v;

  Tape ta;
  int la = ta.mae_const(ta.conv2d(ta.constant(x1), pw, pb), Tensor4(1, 1, 4, 4));
  store.zero_grads();
  ta.backward(la);
  std::vector<double> ga = pw.grad.v;

  Tape tb;
  int lb = tb.mae_const(tb.conv2d(tb.constant(x2), pw, pb), Tensor4(1, 1, 4, 4));
  store.zero_grads();
  tb.backward(lb);
  for (size_t i = 0; i < both.size(); ++i)
    CHECK(both[i] == doctest::Approx(ga[i] + pw.grad.v[i]).epsilon(1e-12));

  CHECK(x1.v == x1_copy.v);
}

TEST_CASE("unet: forward determinism is bitwise") {
  denoiser::UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  ParamStore params = denoiser::init_unet_params(cfg, 5);
  Tensor4 x = random_tensor(1, 1, 16, 16, 100);
  Tensor4 a = denoiser::unet_forward(cfg, params, x, Mode::train);
  Tensor4 b = denoiser::unet_forward(cfg, params, x, Mode::train);
  CHECK(std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient_check: quadratic loss on a single conv layer is exact") {
  ParamStore store;
  Tensor4 w = random_tensor(2, 1, 3, 3, 110);
  for (double& v : w.v) v *= 0.3;
  Param& pw = store.add("lin.weight", ParamRole::weight, w);
  Param& pb = store.add("lin.bias", ParamRole::bias, Tensor4(1, 2, 1, 1));
  Tensor4 x = random_tensor(2, 1, 6, 6, 111);
  Tensor4 target = random_tensor(2, 2, 6, 6, 112);
  auto loss = [&](bool with_grad) {
    Tape tape;
    int l = tape.mse_const(tape.conv2d(tape.constant(x), pw, pb), target);
    if (with_grad) tape.backward(l);
    return tape.scalar(l);
  };
  auto res = autodiff::gradient_check(store, loss, 1e-3, 10000, 3);
  CHECK(res.n_checked == store.trainable_scalars());
  CHECK(res.max_rel_error <= 1e-6);
}

TEST_CASE("gradient_check: constant loss has zero error under the floored denominator") {
  ParamStore store;
  store.add("w.weight", ParamRole::weight, random_tensor(1, 1, 3, 3, 120));
  auto loss = [&](bool) { return 42.0; };
  auto res = autodiff::gradient_check(store, loss, 1e-3, 100, 4);
  CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("gradient_check: 2-level U-Net with the composite loss stays under 1e-3") {
  // The composite MAE loss is piecewise linear (activation and pooling
  // kinks sit ~2e-4 apart along parameter axes), so the probe step must be
  // below the kink spacing for central differences to be a valid oracle.
  denoiser::UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  ParamStore params = denoiser::init_unet_params(cfg, 17);
  REQUIRE(params.trainable_scalars() <= 10000);
  // Targets offset away from the |.| kink so residual sign flips cannot
  // land inside the probe interval.
  Tensor4 y1 = random_tensor(2, 1, 12, 12, 130);
  Tensor4 y2 = random_tensor(2, 1, 12, 12, 131);
  for (double& v : y1.v) v = 0.3 * v + 5.0;
  for (double& v : y2.v) v = 0.3 * v - 5.0;

  const double lambda_c = 0.5, lambda_l1 = 1e-5;
  auto loss = [&](bool with_grad) {
    Tape tape;
    int n1 = tape.constant(y1), n2 = tape.constant(y2);
    int o1 = denoiser::unet_forward_tape(tape, cfg, params, n1, Mode::train);
    int o2 = denoiser::unet_forward_tape(tape, cfg, params, n2, Mode::train);
    double norm = 2.0 + lambda_c;
    int l = tape.scalar_sum({{1.0 / norm, tape.mae_const(o1, y2)},
                             {1.0 / norm, tape.mae_const(o2, y1)},
                             {lambda_c / norm, tape.mae(o1, o2)}});
    double total = tape.scalar(l) + lambda_l1 * denoiser::param_l1(params);
    if (with_grad) {
      tape.backward(l);
      for (size_t e = 0; e < params.count(); ++e) {
        Param& p = params.entry(e);
        if (p.role != ParamRole::weight) continue;
        for (size_t i = 0; i < p.value.size(); ++i)
          p.grad.v[i] += lambda_l1 * (p.value.v[i] > 0 ? 1.0 : (p.value.v[i] < 0 ? -1.0 : 0.0));
      }
    }
    return total;
  };
  auto res = autodiff::gradient_check(params, loss, 1e-5, 200, 1);
  CHECK(res.n_checked == 200);
  CHECK(res.max_rel_error <= 1e-3);
}

TEST_CASE("checkpoint: bitwise round-trip with running statistics") {
  std::string path = (std::filesystem::temp_directory_path() / "umi_ckpt_test.bin").string();
  denoiser::UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  ParamStore params = denoiser::init_unet_params(cfg, 33);
  // Checkpoints store IEEE-754 32-bit; quantize first so identity is bitwise.
  for (size_t e = 0; e < params.count(); ++e)
    for (double& v : params.entry(e).value.v) v = double(float(v));
  params.at("enc0.bn0.running_mean").value.v[0] = 0.25;
  params.at("enc0.bn0.count").value.v[0] = 3.0;

  autodiff::save_checkpoint(params, path);
  ParamStore back = autodiff::load_checkpoint(path);
  REQUIRE(back.count() == params.count());
  for (size_t e = 0; e < params.count(); ++e) {
    const Param& a = params.entry(e);
    const Param& b = back.entry(e);
    CHECK(a.name == b.name);
    CHECK(a.role == b.role);
    REQUIRE(a.value.size() == b.value.size());
    CHECK(std::memcmp(a.value.v.data(), b.value.v.data(),
                      a.value.v.size() * sizeof(double)) == 0);
  }
  CHECK(back.at("enc0.bn0.count").value.v[0] == 3.0);
}
