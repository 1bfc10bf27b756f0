#include <doctest.h>

#include <cmath>
#include <cstring>

#include "oxygan/adam.hpp"
#include "oxygan/gradcheck.hpp"
#include "oxygan/tape.hpp"

using namespace oxygan;

TEST_CASE("backward: sum gives all-ones gradient") {
  Rng rng(1);
  Tensor w = Tensor::randn({3, 4}, rng);
  Tape t;
  auto wid = t.leaf(w, true);
  t.backward(t.sum_all(wid));
  for (float g : t.grad(wid).data) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward: d/dw sum(w^2) = 2w") {
  Tape t;
  auto wid = t.leaf(Tensor::scalar(3.0f), true);
  t.backward(t.sum_all(t.square(wid)));
  CHECK(t.grad(wid).data[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  auto wid = t.leaf(Tensor::full({2, 2}, 1.0f), true);
  auto sq = t.square(wid);
  CHECK_THROWS_AS(t.backward(sq), Error);
}

TEST_CASE("unreachable parameters keep zero gradients") {
  Tape t;
  auto a = t.leaf(Tensor::scalar(2.0f), true);
  auto b = t.leaf(Tensor::scalar(5.0f), true);
  t.backward(t.sum_all(t.square(a)));
  CHECK(t.grad(a).data[0] == doctest::Approx(4.0f));
  CHECK(t.grad(b).data[0] == 0.0f);
}

TEST_CASE("tape isolation: backward on one tape leaves another untouched") {
  Tensor w = Tensor::full({4}, 2.0f);
  Tape t1;
  Tape t2;
  auto id1 = t1.leaf(w, true);
  auto id2 = t2.leaf(w, true);
  t1.backward(t1.sum_all(t1.square(id1)));
  for (float g : t1.grad(id1).data) CHECK(g == doctest::Approx(4.0f));
  for (float g : t2.grad(id2).data) CHECK(g == 0.0f);
  // and the original tensor the leaves copied from is untouched
  for (float v : w.data) CHECK(v == 2.0f);
}

TEST_CASE("every op's analytic gradient matches central finite differences") {
  auto results = gradcheck::run_all(20240901, 1e-4, 1e-3);
  CHECK(results.size() >= 20);
  for (const auto& r : results) {
    INFO(r.op, " max rel err ", r.max_rel_err);
    CHECK(r.passed);
  }
  CHECK(gradcheck::all_passed(results));
}

TEST_CASE("concat gradient splits back to both inputs") {
  const auto build = [](TapeF64& t, const std::vector<TapeF64::Id>& in) {
    auto cat = t.concat_channels(in[0], in[1]);
    return t.mean_all(t.square(cat));
  };
  Rng rng(2);
  std::vector<TensorF64> inputs = {TensorF64::randn({1, 2, 3, 3}, rng),
                                   TensorF64::randn({1, 1, 3, 3}, rng)};
  CHECK(gradcheck::max_rel_error(build, inputs, 1e-4) < 1e-3);
}

TEST_CASE("gradient flows through a conv-norm-act-tconv chain") {
  const auto build = [](TapeF64& t, const std::vector<TapeF64::Id>& in) {
    auto h = t.conv2d(in[0], in[1], std::nullopt, 2, 1);
    auto n = t.batch_norm2d(h, in[2], in[3], nullptr, nullptr, 0.1, 1e-5, true);
    auto a = t.leaky_relu(n, 0.2);
    auto u = t.conv_transpose2d(a, in[4], std::nullopt, 2, 1);
    return t.mean_all(t.square(t.tanh_act(u)));
  };
  Rng rng(3);
  std::vector<TensorF64> inputs = {
      TensorF64::randn({2, 1, 4, 4}, rng), TensorF64::randn({2, 1, 4, 4}, rng),
      TensorF64::uniform({2}, rng, 0.5, 1.5), TensorF64::randn({2}, rng),
      TensorF64::randn({2, 1, 4, 4}, rng)};
  CHECK(gradcheck::max_rel_error(build, inputs, 1e-4) < 1e-3);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::full({3}, 1.5f);
  Tensor g = Tensor::zeros({3});
  AdamState st = AdamState::init({}, {&p});
  adam_step({&p}, {&g}, st);
  CHECK(st.step_count == 1);
  for (float v : p.data) CHECK(v == 1.5f);
}

TEST_CASE("adam: first step moves by ~lr for unit gradient") {
  Tensor p = Tensor::scalar(1.0f);
  Tensor g = Tensor::scalar(1.0f);
  AdamConfig cfg;  // lr 2e-4
  AdamState st = AdamState::init(cfg, {&p});
  adam_step({&p}, {&g}, st);
  // bias correction makes mhat = vhat = 1 on step one
  const float expected = 1.0f - cfg.lr * 1.0f / (1.0f + cfg.eps);
  CHECK(p.data[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps on w^2 from w=1 converge near zero") {
  AdamConfig cfg;
  cfg.lr = 0.1f;

  // independent scalar recurrence
  double w_ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * w_ref;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(static_cast<double>(cfg.beta1), t));
    const double vhat = v / (1.0 - std::pow(static_cast<double>(cfg.beta2), t));
    w_ref -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }

  Tensor p = Tensor::scalar(1.0f);
  AdamState st = AdamState::init(cfg, {&p});
  for (int t = 1; t <= 100; ++t) {
    Tensor g = Tensor::scalar(2.0f * p.data[0]);
    adam_step({&p}, {&g}, st);
  }
  CHECK(st.step_count == 100);
  CHECK(std::abs(p.data[0]) < 0.1f);
  CHECK(p.data[0] == doctest::Approx(static_cast<float>(w_ref)).epsilon(1e-3));
}

TEST_CASE("adam rejects mismatched shapes") {
  Tensor p = Tensor::zeros({3});
  Tensor g = Tensor::zeros({4});
  AdamState st = AdamState::init({}, {&p});
  CHECK_THROWS_AS(adam_step({&p}, {&g}, st), ShapeError);
}

TEST_CASE("dropout is stochastic across seeds, stable within a seed") {
  Tensor x = Tensor::full({1, 1, 8, 8}, 1.0f);
  auto run = [&](std::uint64_t seed) {
    Tape t(false);
    Rng r(seed);
    return t.value(t.dropout(t.leaf(x), 0.5f, r, true));
  };
  Tensor a = run(100);
  Tensor b = run(100);
  Tensor c = run(101);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  bool differs = false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != c.data[i]) differs = true;
  CHECK(differs);
}
