#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cplmix/diffcore.hpp"
#include "cplmix/rng.hpp"

using namespace cplmix;
using namespace cplmix::diff;

namespace {

Tensor randn(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (double& v : t.values) v = scale * rng.normal();
  return t;
}

std::vector<std::vector<double>> grads_of(std::span<Tensor* const> params) {
  std::vector<std::vector<double>> g;
  for (const Tensor* p : params) g.push_back(p->grad);
  return g;
}

}  // namespace

TEST_CASE("layer_apply identity and relu shortcuts") {
  Rng rng(1);
  Tensor x = randn(3, 4, rng);
  Tensor w(4, 4);
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
  Tensor b(1, 4);

  Tape tape;
  const Tape::Id out = layer_apply(tape, tape.input(x), tape.param(w),
                                   tape.param(b), Activation::kLinear, 0.0,
                                   nullptr);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(tape.value(out).values[i] == doctest::Approx(x.values[i]));

  Tensor neg(2, 3);
  for (double& v : neg.values) v = -1.0;
  Tensor w2(3, 3);
  for (std::size_t i = 0; i < 3; ++i) w2.at(i, i) = 1.0;
  Tensor b2(1, 3);
  Tape tape2;
  const Tape::Id in = tape2.param(neg);
  const Tape::Id out2 = layer_apply(tape2, in, tape2.param(w2),
                                    tape2.param(b2), Activation::kRelu, 0.0,
                                    nullptr);
  // all zero output, zero gradient back to the input
  Tape::Id loss = tape2.mean_gaussian_recon(out2, Tensor(2, 3, 1.0));
  tape2.backward(loss);
  for (double v : tape2.value(out2).values) CHECK(v == 0.0);
  for (double g : neg.grad) CHECK(g == 0.0);
}

TEST_CASE("dense layer gradients match finite differences") {
  Rng rng(2);
  Tensor x = randn(5, 7, rng);
  Tensor w = randn(7, 4, rng, 0.5);
  Tensor b = randn(1, 4, rng, 0.1);
  Tensor target = randn(5, 4, rng);

  std::vector<Tensor*> params{&w, &b};
  auto loss_fn = [&]() {
    Tape tape;
    const Tape::Id out =
        layer_apply(tape, tape.input(x), tape.param(w), tape.param(b),
                    Activation::kTanh, 0.0, nullptr);
    return tape.scalar(tape.mean_gaussian_recon(out, target));
  };
  w.zero_grad();
  b.zero_grad();
  {
    Tape tape;
    const Tape::Id out =
        layer_apply(tape, tape.input(x), tape.param(w), tape.param(b),
                    Activation::kTanh, 0.0, nullptr);
    tape.backward(tape.mean_gaussian_recon(out, target));
  }
  const double err =
      finite_difference_check(loss_fn, params, grads_of(params), 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("softmax rows are normalized and shift invariant") {
  Rng rng(3);
  Tensor x = randn(6, 5, rng, 2.0);
  Tape tape;
  const Tape::Id sm = tape.softmax_rows(tape.input(x));
  Tensor shifted = x;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) shifted.at(i, j) += 3.7;
  const Tape::Id sm2 = tape.softmax_rows(tape.input(shifted));
  for (std::size_t i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += tape.value(sm).at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < x.cols; ++j)
      CHECK(tape.value(sm).at(i, j) ==
            doctest::Approx(tape.value(sm2).at(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("gaussian reparameterization") {
  Rng rng(4);
  Tensor mu = randn(3, 2, rng);
  Tensor lv = randn(3, 2, rng, 0.3);

  {
    Tape tape;
    const Tape::Id s = tape.gaussian_reparam(tape.param(mu), tape.param(lv),
                                             Tensor(3, 2, 0.0));
    for (std::size_t i = 0; i < mu.size(); ++i)
      CHECK(tape.value(s).values[i] == doctest::Approx(mu.values[i]));
  }
  {
    Tensor zero_lv(3, 2, 0.0);
    Tensor n = randn(3, 2, rng);
    Tape tape;
    const Tape::Id s =
        tape.gaussian_reparam(tape.param(mu), tape.input(zero_lv), n);
    for (std::size_t i = 0; i < mu.size(); ++i)
      CHECK(tape.value(s).values[i] ==
            doctest::Approx(mu.values[i] + n.values[i]));
  }
  // gradient wrt mu and logvar against finite differences
  Tensor noise = randn(3, 2, rng);
  Tensor target = randn(3, 2, rng);
  std::vector<Tensor*> params{&mu, &lv};
  auto loss_fn = [&]() {
    Tape tape;
    const Tape::Id s =
        tape.gaussian_reparam(tape.param(mu), tape.param(lv), noise);
    return tape.scalar(tape.mean_gaussian_recon(s, target));
  };
  mu.zero_grad();
  lv.zero_grad();
  {
    Tape tape;
    const Tape::Id s =
        tape.gaussian_reparam(tape.param(mu), tape.param(lv), noise);
    tape.backward(tape.mean_gaussian_recon(s, target));
  }
  CHECK(finite_difference_check(loss_fn, params, grads_of(params), 1e-6) <
        1e-6);
}

TEST_CASE("gumbel softmax behavior and gradients") {
  Rng rng(5);
  // equal logits, zero noise -> uniform
  {
    Tensor logits(2, 4, 0.3);
    Tape tape;
    const Tape::Id c =
        tape.gumbel_softmax(tape.input(logits), 0.67, Tensor(2, 4, 0.0));
    for (double v : tape.value(c).values)
      CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
  // low temperature concentrates on the argmax of logits + noise
  {
    Tensor logits = randn(4, 5, rng);
    Tensor noise = randn(4, 5, rng);
    Tape tape;
    const Tape::Id c = tape.gumbel_softmax(tape.input(logits), 0.01, noise);
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t best = 0;
      double mx = -1e300;
      for (std::size_t j = 0; j < 5; ++j) {
        const double z = logits.at(i, j) + noise.at(i, j);
        if (z > mx) {
          mx = z;
          best = j;
        }
      }
      CHECK(tape.value(c).at(i, best) >= 0.99);
    }
  }
  // gradient at tau = 0.67 with frozen noise
  Tensor logits = randn(3, 4, rng);
  Tensor noise(3, 4);
  for (double& g : noise.values) g = rng.gumbel();
  Tensor target = randn(3, 4, rng, 0.2);
  std::vector<Tensor*> params{&logits};
  auto loss_fn = [&]() {
    Tape tape;
    const Tape::Id c = tape.gumbel_softmax(tape.param(logits), 0.67, noise);
    return tape.scalar(tape.mean_gaussian_recon(c, target));
  };
  logits.zero_grad();
  {
    Tape tape;
    const Tape::Id c = tape.gumbel_softmax(tape.param(logits), 0.67, noise);
    tape.backward(tape.mean_gaussian_recon(c, target));
  }
  CHECK(finite_difference_check(loss_fn, params, grads_of(params), 1e-5) <
        1e-5);

  Tape tape;
  CHECK_THROWS_AS(tape.gumbel_softmax(tape.input(logits), 0.0, noise),
                  std::domain_error);
}

TEST_CASE("adam step hand-checked") {
  // zero gradient leaves parameters unchanged
  Tensor p(1, 1);
  p.values[0] = 0.7;
  p.ensure_grad();
  std::vector<Tensor*> params{&p};
  OptimizerState st;
  st.learning_rate = 1e-3;
  st.init(params);
  adam_step(params, st);
  CHECK(p.values[0] == doctest::Approx(0.7));

  // fresh state, scalar gradient 0.5: step is lr * g / (|g| + eps)
  Tensor q(1, 1);
  q.values[0] = 1.0;
  q.ensure_grad();
  q.grad[0] = 0.5;
  std::vector<Tensor*> params2{&q};
  OptimizerState st2;
  st2.learning_rate = 1e-3;
  st2.init(params2);
  adam_step(params2, st2);
  const double expected = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8));
  CHECK(q.values[0] == doctest::Approx(expected).epsilon(1e-12));

  // identical calls from identical state produce identical results
  Tensor a(2, 2, 0.5), b(2, 2, 0.5);
  a.ensure_grad();
  b.ensure_grad();
  for (std::size_t i = 0; i < 4; ++i) {
    a.grad[i] = 0.1 * double(i + 1);
    b.grad[i] = 0.1 * double(i + 1);
  }
  std::vector<Tensor*> pa{&a}, pb{&b};
  OptimizerState sa, sb;
  sa.init(pa);
  sb.init(pb);
  adam_step(pa, sa);
  adam_step(pb, sb);
  CHECK(a.values == b.values);
}

TEST_CASE("finite differences are exact for linear and tight for quadratic") {
  Tensor p(1, 3);
  p.values = {0.3, -0.7, 1.1};
  p.ensure_grad();
  std::vector<Tensor*> params{&p};

  // linear loss: 2 p0 - 3 p1 + 0.5 p2
  auto linear = [&]() {
    return 2.0 * p.values[0] - 3.0 * p.values[1] + 0.5 * p.values[2];
  };
  const std::vector<std::vector<double>> g{{2.0, -3.0, 0.5}};
  CHECK(finite_difference_check(linear, params, g, 1e-5) < 1e-9);

  auto quadratic = [&]() {
    return p.values[0] * p.values[0] + 4.0 * p.values[1] * p.values[1];
  };
  const std::vector<std::vector<double>> g2{
      {2.0 * p.values[0], 8.0 * p.values[1], 0.0}};
  CHECK(finite_difference_check(quadratic, params, g2, 1e-5) < 1e-8);
}

TEST_CASE("dropout uses the recorded mask in both passes") {
  Rng rng(6);
  Tensor x = randn(4, 6, rng);
  Rng mask_rng(99);
  Tensor w(6, 6);
  for (std::size_t i = 0; i < 6; ++i) w.at(i, i) = 1.0;
  Tensor b(1, 6);
  Tape tape;
  const Tape::Id xin = tape.param(x);
  const Tape::Id out = layer_apply(tape, xin, tape.input(w), tape.input(b),
                                   Activation::kLinear, 0.5, &mask_rng);
  // output is either 0 or x / keep
  const Tensor& y = tape.value(out);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool zero = y.values[i] == 0.0;
    const bool scaled =
        std::abs(y.values[i] - x.values[i] / 0.5) < 1e-12;
    CHECK((zero || scaled));
  }
  x.zero_grad();
  tape.backward(tape.mean_gaussian_recon(out, Tensor(4, 6, 0.0)));
  // gradient respects the same mask: zero where dropped
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y.values[i] == 0.0 && x.values[i] != 0.0) CHECK(x.grad[i] == 0.0);
}

TEST_CASE("bernoulli reconstruction gradients") {
  Rng rng(7);
  Tensor logits = randn(4, 3, rng);
  Tensor x(4, 3);
  for (double& v : x.values) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  std::vector<Tensor*> params{&logits};
  auto loss_fn = [&]() {
    Tape tape;
    return tape.scalar(
        tape.mean_bernoulli_recon_logits(tape.param(logits), x));
  };
  logits.zero_grad();
  {
    Tape tape;
    tape.backward(tape.mean_bernoulli_recon_logits(tape.param(logits), x));
  }
  CHECK(finite_difference_check(loss_fn, params, grads_of(params), 1e-5) <
        1e-6);
}
