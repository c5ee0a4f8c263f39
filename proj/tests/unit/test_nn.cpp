#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hdrx/dsp.hpp"
#include "hdrx/nn.hpp"
#include "hdrx/rng.hpp"

using namespace hdrx;
using namespace hdrx::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Same-padded cross-correlation by direct loops.
Tensor naive_conv(const Tensor& x, const ConvLayer& layer) {
  const int h = x.dim(0);
  const int w = x.dim(1);
  const int k = layer.kernel_size();
  const int r = k / 2;
  Tensor y({h, w, layer.out_channels()});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int o = 0; o < layer.out_channels(); ++o) {
        double acc = layer.bias.value[static_cast<std::size_t>(o)];
        for (int di = 0; di < k; ++di)
          for (int dj = 0; dj < k; ++dj) {
            const int ii = i + di - r;
            const int jj = j + dj - r;
            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
            for (int c = 0; c < layer.in_channels(); ++c) {
              const std::size_t widx =
                  ((static_cast<std::size_t>(di) * k + dj) * layer.in_channels() + c) * layer.out_channels() + o;
              acc += x.at(ii, jj, c) * layer.weight.value[widx];
            }
          }
        y.at(i, j, o) = acc;
      }
  return y;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void randomize(ConvLayer& l, std::uint64_t seed) {
  l.weight.value = random_tensor(l.weight.value.shape(), seed, 0.5);
  l.bias.value = random_tensor(l.bias.value.shape(), seed + 1, 0.5);
}

// Numeric gradient of f with respect to every element of x.
template <class F>
Tensor numeric_grad(Tensor x, F f, double h = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max({den, std::abs(a[i]), std::abs(b[i])});
  }
  return num / std::max(den, 1e-12);
}

// Deliberately wrong adjoint: scales the upstream gradient by 1.5.
Var bad_square(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (auto& v : out.values()) v = v * v;
  return tape.push(std::move(out), tape.requires_grad(x), [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 1.5 * 2.0 * xv[i] * g[i];
  });
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  ConvLayer l("id", 1, 3, 3);
  l.zero();
  for (int c = 0; c < 3; ++c) l.weight.value[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  const auto x = random_tensor({5, 4, 3}, 1);
  Tape tape;
  EXPECT_EQ(max_diff(tape.value(conv2d(tape, tape.input(x), l)), x), 0.0);
}

TEST(Conv2d, ZeroInputGivesBias) {
  ConvLayer l("b", 3, 2, 4);
  randomize(l, 2);
  Tape tape;
  const auto& y = tape.value(conv2d(tape, tape.input(Tensor({6, 5, 2})), l));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j)
      for (int o = 0; o < 4; ++o) EXPECT_EQ(y.at(i, j, o), l.bias.value[static_cast<std::size_t>(o)]);
}

TEST(Conv2d, MatchesNaiveLoops) {
  for (int k : {1, 3}) {
    ConvLayer l("c", k, 5, 7);
    randomize(l, 3 + k);
    const auto x = random_tensor({9, 14, 5}, 4);
    Tape tape(false);
    EXPECT_LT(max_diff(tape.value(conv2d(tape, tape.input(x), l)), naive_conv(x, l)), 1e-12);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  ConvLayer l("c", 3, 2, 3);
  Tape tape;
  EXPECT_THROW(conv2d(tape, tape.input(Tensor({4, 4, 3})), l), ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  ConvLayer l("c", 3, 2, 3);
  randomize(l, 5);
  const auto x = random_tensor({6, 6, 2}, 6);
  const auto w = random_tensor({6, 6, 3}, 7);
  auto loss = [&](const Tensor& xin) {
    Tape t(false);
    return t.value(weighted_sum(t, conv2d(t, t.input(xin), l), w))[0];
  };
  Tape tape;
  const Var xi = tape.input(x);
  tape.backward(weighted_sum(tape, conv2d(tape, xi, l), w));
  EXPECT_LT(rel_err(tape.grad(xi), numeric_grad(x, loss)), 1e-6);

  Parameter* ps[] = {&l.weight, &l.bias};
  const auto report = grad_check(
      [&](bool with_grad) {
        Tape t(with_grad);
        const Var out = weighted_sum(t, conv2d(t, t.input(x), l), w);
        if (with_grad) {
          t.backward(out);
          accumulate_grads(t, ps);
        }
        return t.value(out)[0];
      },
      ps, {1e-5, 1000, 1e-6});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.coords, 3 * 3 * 2 * 3 + 3);
}

TEST(Relu, ForwardAndGradient) {
  Tensor x({1, 1, 4});
  x[0] = -1.0;
  x[1] = 2.0;
  x[2] = 0.5;
  x[3] = -0.1;
  Tape tape;
  const Var xi = tape.input(x);
  const Var y = relu(tape, xi);
  EXPECT_EQ(tape.value(y)[0], 0.0);
  EXPECT_EQ(tape.value(y)[1], 2.0);
  tape.backward(y, Tensor({1, 1, 4}, 1.0));
  EXPECT_EQ(tape.grad(xi)[0], 0.0);
  EXPECT_EQ(tape.grad(xi)[1], 1.0);
}

TEST(ResBlockTest, ZeroWeightsIsIdentity) {
  ResBlock b("b", 4, 4);
  b.conv1.zero();
  b.conv2.zero();
  EXPECT_FALSE(b.projection.has_value());
  const auto x = random_tensor({5, 7, 4}, 8);
  Tape tape;
  EXPECT_EQ(max_diff(tape.value(b.forward(tape, tape.input(x))), x), 0.0);
}

TEST(ResBlockTest, ProjectionOnChannelChange) {
  ResBlock b("b", 2, 64);
  b.init(1);
  ASSERT_TRUE(b.projection.has_value());
  EXPECT_EQ(b.projection->kernel_size(), 1);
  Tape tape(false);
  const auto& y = tape.value(b.forward(tape, tape.input(random_tensor({6, 5, 2}, 9))));
  EXPECT_EQ(y.shape(), (std::vector<int>{6, 5, 64}));
}

TEST(ResBlockTest, GradientCheck) {
  ResBlock b("b", 2, 3);
  b.init(11);
  const auto x = random_tensor({6, 6, 2}, 12);
  const auto w = random_tensor({6, 6, 3}, 13);
  auto ps = b.parameters();
  const auto report = grad_check(
      [&](bool with_grad) {
        Tape t(with_grad);
        const Var out = weighted_sum(t, b.forward(t, t.input(x)), w);
        if (with_grad) {
          t.backward(out);
          accumulate_grads(t, ps);
        }
        return t.value(out)[0];
      },
      ps, {1e-5, 1000, 1e-6});
  EXPECT_TRUE(report.passed) << report.max_rel_error;

  auto loss = [&](const Tensor& xin) {
    Tape t(false);
    return t.value(weighted_sum(t, b.forward(t, t.input(xin)), w))[0];
  };
  Tape tape;
  const Var xi = tape.input(x);
  tape.backward(weighted_sum(tape, b.forward(tape, xi), w));
  EXPECT_LT(rel_err(tape.grad(xi), numeric_grad(x, loss)), 1e-6);
}

TEST(GradCheck, LinearModelExact) {
  Parameter p("w", {3});
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  p.value[2] = 0.5;
  const Tensor c = random_tensor({3}, 14);
  Parameter* ps[] = {&p};
  const auto report = grad_check(
      [&](bool with_grad) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += c[static_cast<std::size_t>(i)] * p.value[static_cast<std::size_t>(i)];
        if (with_grad)
          for (int i = 0; i < 3; ++i) p.grad[static_cast<std::size_t>(i)] += c[static_cast<std::size_t>(i)];
        return s;
      },
      ps);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, KinkInsideStencilRefined) {
  // relu(w) at w = 3e-6: the h = 1e-5 stencil straddles the kink and reads 0.65
  Parameter p("w", {1});
  p.value[0] = 3e-6;
  Parameter* ps[] = {&p};
  const auto report = grad_check(
      [&](bool with_grad) {
        if (with_grad) p.grad[0] += p.value[0] > 0.0 ? 1.0 : 0.0;
        return std::max(p.value[0], 0.0);
      },
      ps);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.refined, 1);
}

TEST(GradCheck, CorruptedBackwardFails) {
  ConvLayer l("c", 1, 2, 2);
  randomize(l, 15);
  const auto x = random_tensor({3, 3, 2}, 16);
  const auto w = random_tensor({3, 3, 2}, 17);
  Parameter* ps[] = {&l.weight, &l.bias};
  const auto report = grad_check(
      [&](bool with_grad) {
        Tape t(with_grad);
        const Var out = weighted_sum(t, bad_square(t, conv2d(t, t.input(x), l)), w);
        if (with_grad) {
          t.backward(out);
          accumulate_grads(t, ps);
        }
        return t.value(out)[0];
      },
      ps);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 0.1);
}

TEST(Bridge, LoopbackThroughOfdm) {
  for (const auto& cfg : {dsp::LinkConfig::mini(), dsp::LinkConfig::paper()}) {
    const auto& pts = dsp::constellation(cfg.modulation);
    Rng rng(18);
    dsp::ResourceGrid x(cfg.num_data_subcarriers, cfg.num_symbols, dsp::GridKind::TxSymbols);
    for (auto& v : x.data()) v = pts[rng() % pts.size()];
    const auto f = dsp::ofdm_modulate(x, cfg);
    Tensor z({f.rows(), f.symbols(), 2});
    for (int r = 0; r < f.rows(); ++r)
      for (int l = 0; l < f.symbols(); ++l) {
        z.at(r, l, 0) = f(r, l).real();
        z.at(r, l, 1) = f(r, l).imag();
      }
    const auto y = fft_bridge_forward(z, cfg);
    EXPECT_EQ(y.shape(), (std::vector<int>{cfg.num_data_subcarriers, cfg.num_symbols, 2}));
    double err = 0.0;
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc)
      for (int l = 0; l < cfg.num_symbols; ++l)
        err = std::max(err, std::abs(cdouble(y.at(sc, l, 0), y.at(sc, l, 1)) - x(sc, l)));
    EXPECT_LT(err, 1e-10);
  }
}

TEST(Bridge, ZeroAndLinearity) {
  const auto cfg = dsp::LinkConfig::mini();
  const auto zero = fft_bridge_forward(Tensor({70, 14, 2}), cfg);
  for (auto v : zero.values()) EXPECT_EQ(v, 0.0);
  const auto zb = fft_bridge_backward(Tensor({36, 14, 2}), cfg);
  for (auto v : zb.values()) EXPECT_EQ(v, 0.0);

  const auto z1 = random_tensor({70, 14, 2}, 19);
  const auto z2 = random_tensor({70, 14, 2}, 20);
  const double a = 0.7;
  const double b = -1.9;
  Tensor mix({70, 14, 2});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * z1[i] + b * z2[i];
  const auto y1 = fft_bridge_forward(z1, cfg);
  const auto y2 = fft_bridge_forward(z2, cfg);
  const auto ym = fft_bridge_forward(mix, cfg);
  for (std::size_t i = 0; i < ym.size(); ++i) EXPECT_NEAR(ym[i], a * y1[i] + b * y2[i], 1e-10);
}

TEST(Bridge, AdjointIdentity) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    EXPECT_LT(fft_bridge_adjoint_error(dsp::LinkConfig::mini(), s), 1e-10);
    EXPECT_LT(fft_bridge_adjoint_error(dsp::LinkConfig::paper(), s), 1e-10);
  }
}

TEST(Bridge, CompositeLossFiniteDifferences) {
  const auto cfg = dsp::LinkConfig::mini();
  ConvLayer l("c", 3, 2, 2);
  randomize(l, 21);
  const auto w = random_tensor({36, 14, 2}, 22);
  const auto z = random_tensor({70, 14, 2}, 23, 0.1);
  auto loss = [&](const Tensor& zin) {
    Tape t(false);
    return t.value(weighted_sum(t, relu(t, fft_bridge(t, conv2d(t, t.input(zin), l), cfg)), w))[0];
  };
  Tape tape;
  const Var zi = tape.input(z);
  tape.backward(weighted_sum(tape, relu(tape, fft_bridge(tape, conv2d(tape, zi, l), cfg)), w));
  EXPECT_LT(rel_err(tape.grad(zi), numeric_grad(z, loss)), 1e-6);
}

TEST(Bce, ZeroLogitsGiveLn2) {
  Tensor logits({3, 2, 8});
  std::vector<std::uint8_t> labels(logits.size());
  std::vector<std::uint8_t> mask(logits.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  EXPECT_NEAR(bce_with_logits(logits, labels, mask).loss, std::log(2.0), 1e-15);
}

TEST(Bce, StableAtLargeLogits) {
  Tensor logits({2}, 40.0);
  logits[1] = 1000.0;
  const std::vector<std::uint8_t> labels{1, 1};
  const std::vector<std::uint8_t> mask{1, 1};
  const auto r = bce_with_logits(logits, labels, mask);
  EXPECT_LT(r.loss, 1e-12);
  EXPECT_TRUE(std::isfinite(r.grad[1]));
  Tensor neg({1}, -1000.0);
  const std::vector<std::uint8_t> one{1};
  EXPECT_NEAR(bce_with_logits(neg, one, one).loss, 1000.0, 1e-9);
}

TEST(Bce, MaskedGradientMatchesFiniteDifferences) {
  const auto logits = random_tensor({4, 3, 8}, 24, 2.0);
  std::vector<std::uint8_t> labels(logits.size());
  std::vector<std::uint8_t> mask(logits.size());
  Rng rng(25);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = rng() & 1U;
    mask[i] = (i % 8) < 4;
  }
  const auto r = bce_with_logits(logits, labels, mask);
  const auto num = numeric_grad(logits, [&](const Tensor& l) { return bce_with_logits(l, labels, mask).loss; });
  for (std::size_t i = 0; i < logits.size(); ++i) {
    EXPECT_NEAR(r.grad[i], num[i], 1e-7);
    if (!mask[i]) {
      EXPECT_EQ(r.grad[i], 0.0);
    }
  }
}

TEST(Bce, EmptyMaskThrows) {
  Tensor logits({4});
  const std::vector<std::uint8_t> zeros(4, 0);
  EXPECT_THROW(bce_with_logits(logits, zeros, zeros), ArgumentError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p("p", {4});
  p.value = random_tensor({4}, 26);
  const Tensor before = p.value;
  Parameter* ps[] = {&p};
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(ps, st);
  EXPECT_EQ(max_diff(p.value, before), 0.0);
}

TEST(Adam, HandComputedFirstStep) {
  Parameter p("p", {2});
  p.value[0] = 1.0;
  p.value[1] = -1.0;
  p.grad[0] = 0.5;
  p.grad[1] = -2e-9;
  Parameter* ps[] = {&p};
  AdamState st;
  st.config.lr = 0.1;
  adam_step(ps, st);
  // m_hat = g, v_hat = g^2, step = lr g / (|g| + eps)
  EXPECT_NEAR(p.value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], -1.0 + 0.1 * 2e-9 / (2e-9 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  Parameter p("p", {3});
  const double target[] = {1.5, -0.5, 3.0};
  Parameter* ps[] = {&p};
  AdamState st;
  st.config.lr = 1e-2;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    double dist = 0.0;
    for (int i = 0; i < 3; ++i) {
      p.grad[static_cast<std::size_t>(i)] = 2.0 * (p.value[static_cast<std::size_t>(i)] - target[i]);
      dist = std::max(dist, std::abs(p.value[static_cast<std::size_t>(i)] - target[i]));
    }
    if (dist < 1e-6) break;
    adam_step(ps, st);
  }
  EXPECT_LT(steps, 2000);
}

TEST(Clip, ScalesGlobalNorm) {
  Parameter a("a", {2});
  Parameter b("b", {1});
  a.grad[0] = 3.0;
  a.grad[1] = 0.0;
  b.grad[0] = 4.0;
  Parameter* ps[] = {&a, &b};
  EXPECT_DOUBLE_EQ(grad_norm(ps), 5.0);
  clip_grad_norm(ps, 1.0);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-15);
  EXPECT_NEAR(a.grad[0] / b.grad[0], 0.75, 1e-15);
}

TEST(Forward, Deterministic) {
  ResBlock b("b", 2, 8);
  b.init(27);
  const auto x = random_tensor({10, 14, 2}, 28);
  Tape t1(false);
  Tape t2(false);
  EXPECT_EQ(max_diff(t1.value(b.forward(t1, t1.input(x))), t2.value(b.forward(t2, t2.input(x)))), 0.0);
}

TEST(HeInit, BoundsAndSeeding) {
  ConvLayer a("layer", 3, 4, 5);
  ConvLayer b("layer", 3, 4, 5);
  ConvLayer c("other", 3, 4, 5);
  a.init_he_uniform(1);
  b.init_he_uniform(1);
  c.init_he_uniform(1);
  EXPECT_EQ(max_diff(a.weight.value, b.weight.value), 0.0);
  EXPECT_GT(max_diff(a.weight.value, c.weight.value), 0.0);
  const double bound = std::sqrt(6.0 / (3 * 3 * 4));
  for (auto v : a.weight.value.values()) EXPECT_LE(std::abs(v), bound);
  for (auto v : a.bias.value.values()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  ConvLayer l("layer", 3, 2, 3);
  randomize(l, 29);
  Parameter* ps[] = {&l.weight, &l.bias};
  const Parameter* cps[] = {&l.weight, &l.bias};
  for (auto* p : ps) p->grad = random_tensor(p->value.shape(), 30);
  AdamState st;
  adam_step(ps, st);
  const auto path = std::filesystem::temp_directory_path() / "hdrx_nn_ckpt_test.bin";
  save_checkpoint(path.string(), R"({"kind":"test"})", cps, &st);
  const auto ck = load_checkpoint(path.string());
  EXPECT_EQ(ck.architecture_json, R"({"kind":"test"})");
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 1u);
  EXPECT_EQ(max_diff(ck.optimizer->first_moment[0], st.first_moment[0]), 0.0);

  ConvLayer l2("layer", 3, 2, 3);
  Parameter* ps2[] = {&l2.weight, &l2.bias};
  restore_parameters(ck, ps2);
  EXPECT_EQ(max_diff(l2.weight.value, l.weight.value), 0.0);
  EXPECT_EQ(max_diff(l2.bias.value, l.bias.value), 0.0);

  ConvLayer wrong("layer", 3, 2, 4);
  Parameter* ps3[] = {&wrong.weight, &wrong.bias};
  EXPECT_THROW(restore_parameters(ck, ps3), IoError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFileThrows) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}
