#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "gml/gradcheck.hpp"
#include "gml/tape.hpp"
#include "oracles.hpp"

using namespace gml;
using oracle::rand_tensor;

TEST_SUITE("autograd") {

TEST_CASE("sum of a leaf has all-ones gradient") {
  SplitMix64 rng(31);
  const Tensor<double> xv = rand_tensor({1, 2, 2, 3, 3}, rng);
  Tape<double> tp;
  const int x = tp.input(xv, true);
  tp.backward(tp.weighted_sum(x, Tensor<double>(xv.shape, 1.0)));
  for (double v : tp.grad_of(x).data) CHECK(v == 1.0);
}

TEST_CASE("l1 of a positive tensor has all-ones gradient") {
  SplitMix64 rng(32);
  const Tensor<double> xv = rand_tensor({1, 1, 2, 3, 3}, rng, 0.25, 1.0);
  Tape<double> tp;
  const int x = tp.input(xv, true);
  tp.backward(tp.l1_norm(x));
  for (double v : tp.grad_of(x).data) CHECK(v == 1.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  SplitMix64 rng(33);
  Tape<double> tp;
  const int x = tp.input(rand_tensor({1, 2, 1, 2, 2}, rng), true);
  const int y = tp.relu(x);
  CHECK_THROWS_AS(tp.backward(y), Error);
}

TEST_CASE("nodes that cannot reach a trainable leaf carry no gradient") {
  SplitMix64 rng(34);
  Tape<double> tp;
  const int x = tp.input(rand_tensor({1, 1, 1, 2, 2}, rng));  // want_grad = false
  const int y = tp.relu(x);
  const int loss = tp.l1_norm(y);
  tp.backward(loss);  // nothing trainable below: silently a no-op
  CHECK_FALSE(tp.has_gradient(x));
  CHECK_FALSE(tp.has_gradient(y));
  CHECK_THROWS_AS(tp.grad_of(x), Error);
}

TEST_CASE("interior gradients are freed, leaf gradients survive") {
  SplitMix64 rng(35);
  Tape<double> tp;
  const int x = tp.input(rand_tensor({1, 2, 1, 3, 3}, rng), true);
  const int mid = tp.add(x, x);
  const int loss = tp.l1_norm(mid);
  tp.backward(loss);
  CHECK(tp.has_gradient(x));
  CHECK_FALSE(tp.has_gradient(mid));
}

TEST_CASE("parameter nodes are cached per slot") {
  ParamStore<double> ps;
  SplitMix64 rng(36);
  const int slot = ps.add("k", rand_tensor({2, 3, 3}, rng));
  Tape<double> tp(&ps);
  CHECK(tp.param(slot) == tp.param(slot));
  CHECK(tp.param(slot) == tp.param("k"));
  CHECK_THROWS_AS(ps.add("k", rand_tensor({1, 3, 3}, rng)), Error);
  CHECK_THROWS_AS(ps.slot_of("missing"), Error);
}

TEST_CASE("shared parameter accumulates both uses in one pass") {
  // the same kernel applied twice must receive the sum of both paths
  ParamStore<double> ps;
  SplitMix64 rng(37);
  const Tensor<double> xv = rand_tensor({1, 2, 2, 4, 4}, rng, 0.2, 1.0);
  const int kslot = ps.add("k", rand_tensor({2, 3, 3}, rng, 0.2, 0.8));
  Tape<double> tp(&ps);
  const int k = tp.param(kslot);
  const int x = tp.input(xv);
  const int once = tp.conv_cw_spatial(x, k);
  const int twice = tp.conv_cw_spatial(once, k);
  tp.backward(tp.weighted_sum(twice, Tensor<double>(xv.shape, 1.0)));
  tp.accumulate_param_grads(ps);
  // finite-difference the same composition
  const double h = 1e-6;
  for (std::int64_t i = 0; i < 4; ++i) {
    Tensor<double> kp = ps.at(kslot).value;
    auto eval = [&](double delta) {
      Tensor<double> kk = kp;
      kk.data[static_cast<std::size_t>(i)] += delta;
      const Tensor<double> o = ops::conv_channelwise_spatial(
          ops::conv_channelwise_spatial(xv, kk), kk);
      double s = 0;
      for (double v : o.data) s += v;
      return s;
    };
    const double fd = (eval(h) - eval(-h)) / (2 * h);
    CHECK(ps.at(kslot).grad.data[static_cast<std::size_t>(i)] ==
          doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("accumulate_param_grads rejects a foreign store") {
  ParamStore<double> ps, other;
  SplitMix64 rng(38);
  ps.add("w", rand_tensor({2, 2}, rng));
  other.add("w", rand_tensor({2, 2}, rng));
  Tape<double> tp(&ps);
  const int v = tp.input(rand_tensor({1, 2}, rng));
  const int out = tp.linear(v, tp.param("w"), tp.input(Tensor<double>({2}, 0.0)));
  tp.backward(tp.softmax_cross_entropy(out, {0}));
  CHECK_THROWS_AS(tp.accumulate_param_grads(other), Error);
  CHECK_NOTHROW(tp.accumulate_param_grads(ps));
}

TEST_CASE("gradients accumulate across tapes") {
  ParamStore<double> ps;
  SplitMix64 rng(39);
  const int slot = ps.add("w", rand_tensor({2, 3}, rng));
  const Tensor<double> v1 = rand_tensor({1, 3}, rng);
  const Tensor<double> v2 = rand_tensor({1, 3}, rng);
  const Tensor<double> b({2}, 0.0);

  auto run = [&](const Tensor<double>& v) {
    Tape<double> tp(&ps);
    tp.backward(tp.softmax_cross_entropy(tp.linear(tp.input(v), tp.param(slot), tp.input(b)), {1}));
    tp.accumulate_param_grads(ps);
  };

  ps.zero_grad();
  run(v1);
  const Tensor<double> g1 = ps.at(slot).grad;
  ps.zero_grad();
  run(v2);
  const Tensor<double> g2 = ps.at(slot).grad;
  ps.zero_grad();
  run(v1);
  run(v2);
  for (std::int64_t i = 0; i < g1.numel(); ++i)
    CHECK(ps.at(slot).grad.data[static_cast<std::size_t>(i)] ==
          doctest::Approx(g1.data[static_cast<std::size_t>(i)] +
                          g2.data[static_cast<std::size_t>(i)])
              .epsilon(1e-12));
}

TEST_CASE("mixed graph matches central finite differences") {
  // stem conv -> spatial conv -> shifted_subtract -> pool -> gap -> linear -> ce
  SplitMix64 rng(40);
  const Tensor<double> xv = rand_tensor({1, 3, 2, 4, 4}, rng);
  ParamStore<double> ps;
  const int s_w = ps.add("w", rand_tensor({2, 3}, rng));
  const int s_b = ps.add("b", rand_tensor({2}, rng));
  const int s_k = ps.add("k", rand_tensor({2, 3, 3}, rng));
  const int s_hw = ps.add("hw", rand_tensor({2, 2}, rng));
  const int s_hb = ps.add("hb", rand_tensor({2}, rng));

  auto loss_value = [&]() {
    const Tensor<double> f = ops::conv_pointwise(xv, ps.at(s_w).value, ps.at(s_b).value);
    const Tensor<double> e = ops::conv_channelwise_spatial(f, ps.at(s_k).value);
    const Tensor<double> d = ops::shifted_subtract(e, f);
    const Tensor<double> p = ops::mean_pool_2x2(d);
    const Tensor<double> v = ops::global_avg_pool(p);
    const Tensor<double> lg = ops::linear(v, ps.at(s_hw).value, ps.at(s_hb).value);
    return ops::softmax_cross_entropy(lg, {1});
  };

  ps.zero_grad();
  Tape<double> tp(&ps);
  const int f = tp.conv_pointwise(tp.input(xv), tp.param(s_w), tp.param(s_b));
  const int e = tp.conv_cw_spatial(f, tp.param(s_k));
  const int d = tp.shifted_subtract(e, f);
  const int p = tp.mean_pool_2x2(d);
  const int v = tp.global_avg_pool(p);
  const int lg = tp.linear(v, tp.param(s_hw), tp.param(s_hb));
  tp.backward(tp.softmax_cross_entropy(lg, {1}));
  tp.accumulate_param_grads(ps);

  const double h = 1e-5;
  for (int s = 0; s < ps.size(); ++s) {
    auto& entry = ps.at(s);
    for (std::int64_t i = 0; i < entry.value.numel(); ++i) {
      double& coord = entry.value.data[static_cast<std::size_t>(i)];
      const double orig = coord;
      coord = orig + h;
      const double fp = loss_value();
      coord = orig - h;
      const double fm = loss_value();
      coord = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = entry.grad.data[static_cast<std::size_t>(i)];
      CHECK(std::abs(an - fd) <= 1e-6 * std::max({std::abs(an), std::abs(fd), 1.0}));
    }
  }
}

TEST_CASE("registered finite-difference checks pass at seed 1") {
  for (const std::string name :
       {"conv_pointwise", "conv_channelwise_spatial", "conv_channelwise_temporal",
        "shifted_subtract", "add", "relu", "mean_pool_2x2", "global_avg_pool", "linear",
        "softmax_cross_entropy", "l1_mean", "masked_l1"}) {
    const gradcheck::Report rep = gradcheck::run_check(name, 1);
    CAPTURE(name);
    CHECK(rep.pass());
  }
  // piecewise-linear-free ops resolve far below the shared tolerance
  CHECK(gradcheck::run_check("shifted_subtract", 1).max_rel_err <= 1e-6);
  CHECK(gradcheck::run_check("conv_channelwise_spatial", 1).max_rel_err <= 1e-4);
  CHECK_THROWS_AS(gradcheck::run_check("no_such_op", 1), ConfigError);
}

}  // TEST_SUITE
