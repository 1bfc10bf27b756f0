#include "oxygan/gradcheck.hpp"

#include <cmath>

namespace oxygan::gradcheck {

namespace {

double eval_loss(const BuildFn& build, const std::vector<TensorF64>& inputs) {
  TapeF64 tape(false);
  std::vector<TapeF64::Id> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.leaf(t, false));
  return tape.value(build(tape, ids)).scalar_value();
}

// uniform magnitude in [0.2, 1] with random sign; keeps relu/abs kinks
// far from the finite-difference stencil
TensorF64 away_from_zero(std::vector<int> dims, Rng& rng) {
  TensorF64 t(std::move(dims));
  for (auto& v : t.data) {
    const double mag = rng.uniform(0.2, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

}  // namespace

double max_rel_error(const BuildFn& build, const std::vector<TensorF64>& inputs, double eps) {
  TapeF64 tape(true);
  std::vector<TapeF64::Id> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.leaf(t, true));
  const TapeF64::Id loss = build(tape, ids);
  tape.backward(loss);

  double worst = 0.0;
  std::vector<TensorF64> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const TensorF64& analytic = tape.grad(ids[i]);
    for (std::size_t j = 0; j < probe[i].data.size(); ++j) {
      const double keep = probe[i].data[j];
      probe[i].data[j] = keep + eps;
      const double fp = eval_loss(build, probe);
      probe[i].data[j] = keep - eps;
      const double fm = eval_loss(build, probe);
      probe[i].data[j] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic.data[j];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
  }
  return worst;
}

std::vector<CheckResult> run_all(std::uint64_t seed, double eps, double tol) {
  std::vector<CheckResult> results;
  Rng rng(seed);

  // weights the output elements so cross-element gradient mixups show up
  auto weighted = [&](TapeF64& tape, TapeF64::Id out, std::uint64_t tag) {
    Rng r(Rng::derive(seed, tag));
    TensorF64 coeffs = TensorF64::uniform(tape.value(out).dims, r, 0.5, 1.5);
    return tape.sum_all(tape.mul(out, tape.leaf(coeffs, false)));
  };

  auto run = [&](const std::string& name, const BuildFn& build,
                 std::vector<TensorF64> inputs) {
    CheckResult r;
    r.op = name;
    r.max_rel_err = max_rel_error(build, inputs, eps);
    r.passed = r.max_rel_err < tol;
    results.push_back(std::move(r));
  };

  run("add",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.add(in[0], in[1]), 1);
      },
      {TensorF64::randn({2, 3}, rng), TensorF64::randn({2, 3}, rng)});
  run("sub",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.sub(in[0], in[1]), 2);
      },
      {TensorF64::randn({2, 3}, rng), TensorF64::randn({2, 3}, rng)});
  run("mul",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.mul(in[0], in[1]), 3);
      },
      {TensorF64::randn({4, 3}, rng), TensorF64::randn({4, 3}, rng)});
  run("scale",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.scale(in[0], 2.5), 4);
      },
      {TensorF64::randn({3, 4}, rng)});
  run("square",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.square(in[0]), 5);
      },
      {TensorF64::randn({3, 4}, rng)});
  run("abs",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.abs_all(in[0]), 6);
      },
      {away_from_zero({4, 4}, rng)});
  run("sum", [&](TapeF64& t, const auto& in) { return t.sum_all(in[0]); },
      {TensorF64::randn({3, 5}, rng)});
  run("mean", [&](TapeF64& t, const auto& in) { return t.mean_all(in[0]); },
      {TensorF64::randn({3, 5}, rng)});
  run("leaky_relu",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.leaky_relu(in[0], 0.2), 7);
      },
      {away_from_zero({2, 2, 3, 3}, rng)});
  run("relu",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.relu(in[0]), 8);
      },
      {away_from_zero({2, 2, 3, 3}, rng)});
  run("tanh",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.tanh_act(in[0]), 9);
      },
      {TensorF64::randn({2, 8}, rng)});
  run("sigmoid",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.sigmoid(in[0]), 10);
      },
      {TensorF64::randn({2, 8}, rng)});
  run("dropout",
      [&](TapeF64& t, const auto& in) {
        Rng r(Rng::derive(seed, 999));  // same mask on every rebuild
        return weighted(t, t.dropout(in[0], 0.3, r, true), 11);
      },
      {TensorF64::randn({2, 2, 4, 4}, rng)});
  run("concat_channels",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.concat_channels(in[0], in[1]), 12);
      },
      {TensorF64::randn({2, 2, 3, 3}, rng), TensorF64::randn({2, 3, 3, 3}, rng)});
  run("conv2d",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.conv2d(in[0], in[1], in[2], 1, 1), 13);
      },
      {TensorF64::randn({2, 2, 4, 4}, rng), TensorF64::randn({3, 2, 3, 3}, rng),
       TensorF64::randn({3}, rng)});
  run("conv2d_stride2",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.conv2d(in[0], in[1], in[2], 2, 1), 14);
      },
      {TensorF64::randn({1, 2, 6, 6}, rng), TensorF64::randn({2, 2, 4, 4}, rng),
       TensorF64::randn({2}, rng)});
  run("conv_transpose2d",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.conv_transpose2d(in[0], in[1], in[2], 2, 1), 15);
      },
      {TensorF64::randn({1, 2, 3, 3}, rng), TensorF64::randn({2, 3, 4, 4}, rng),
       TensorF64::randn({3}, rng)});
  run("conv_transpose2d_s1",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.conv_transpose2d(in[0], in[1], in[2], 1, 0), 16);
      },
      {TensorF64::randn({2, 2, 3, 3}, rng), TensorF64::randn({2, 2, 2, 2}, rng),
       TensorF64::randn({2}, rng)});
  run("batch_norm2d_train",
      [&](TapeF64& t, const auto& in) {
        return weighted(
            t, t.batch_norm2d(in[0], in[1], in[2], nullptr, nullptr, 0.1, 1e-5, true), 17);
      },
      {TensorF64::randn({2, 2, 3, 3}, rng), TensorF64::uniform({2}, rng, 0.5, 1.5),
       TensorF64::randn({2}, rng)});
  run("batch_norm2d_eval",
      [&](TapeF64& t, const auto& in) {
        TensorF64 rm = TensorF64::from_data({2}, {0.1, -0.2});
        TensorF64 rv = TensorF64::from_data({2}, {0.9, 1.3});
        return weighted(t, t.batch_norm2d(in[0], in[1], in[2], &rm, &rv, 0.1, 1e-5, false),
                        18);
      },
      {TensorF64::randn({2, 2, 3, 3}, rng), TensorF64::uniform({2}, rng, 0.5, 1.5),
       TensorF64::randn({2}, rng)});
  run("instance_norm2d",
      [&](TapeF64& t, const auto& in) {
        return weighted(t, t.instance_norm2d(in[0], in[1], in[2], 1e-5), 19);
      },
      {TensorF64::randn({2, 2, 4, 4}, rng), TensorF64::uniform({2}, rng, 0.5, 1.5),
       TensorF64::randn({2}, rng)});
  run("bce_with_logits_target1",
      [&](TapeF64& t, const auto& in) { return t.bce_with_logits(in[0], 1.0); },
      {TensorF64::randn({2, 1, 3, 3}, rng)});
  run("bce_with_logits_target0",
      [&](TapeF64& t, const auto& in) { return t.bce_with_logits(in[0], 0.0); },
      {TensorF64::randn({2, 1, 3, 3}, rng)});
  run("log_one_minus_sigmoid",
      [&](TapeF64& t, const auto& in) { return t.log_one_minus_sigmoid_mean(in[0]); },
      {TensorF64::randn({2, 1, 3, 3}, rng)});

  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace oxygan::gradcheck
