#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "oxygan/kernels.hpp"
#include "oxygan/oxt.hpp"
#include "oxygan/tape.hpp"
#include "oxygan/tensor.hpp"

using namespace oxygan;

namespace {

// Independent nested-loop convolution, the reference the kernels are
// checked against. Kept deliberately naive.
Tensor conv_oracle(const Tensor& in, const Tensor& w, const Tensor* bias, int s, int p) {
  const int N = in.dims[0], C = in.dims[1], H = in.dims[2], W = in.dims[3];
  const int O = w.dims[0], K = w.dims[2];
  const int OH = (H + 2 * p - K) / s + 1;
  const int OW = (W + 2 * p - K) / s + 1;
  Tensor out({N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < OH; ++y)
        for (int x = 0; x < OW; ++x) {
          float acc = bias ? bias->data[static_cast<std::size_t>(o)] : 0.0f;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = y * s - p + ky;
                const int ix = x * s - p + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += in.at4(n, c, iy, ix) * w.at4(o, c, ky, kx);
              }
          out.at4(n, o, y, x) = acc;
        }
  return out;
}

// Adjoint-of-conv reference: scatter each input pixel through the kernel.
Tensor tconv_oracle(const Tensor& in, const Tensor& w, const Tensor* bias, int s, int p) {
  const int N = in.dims[0], I = in.dims[1], H = in.dims[2], W = in.dims[3];
  const int O = w.dims[1], K = w.dims[2];
  const int OH = (H - 1) * s - 2 * p + K;
  const int OW = (W - 1) * s - 2 * p + K;
  Tensor out({N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < I; ++i)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const float v = in.at4(n, i, y, x);
          for (int o = 0; o < O; ++o)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int oy = y * s - p + ky;
                const int ox = x * s - p + kx;
                if (oy < 0 || oy >= OH || ox < 0 || ox >= OW) continue;
                out.at4(n, o, oy, ox) += v * w.at4(i, o, ky, kx);
              }
        }
  if (bias)
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o)
        for (int y = 0; y < OH; ++y)
          for (int x = 0; x < OW; ++x) out.at4(n, o, y, x) += bias->data[static_cast<std::size_t>(o)];
  return out;
}

void check_close(const Tensor& a, const Tensor& b, float tol) {
  REQUIRE(a.dims == b.dims);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::abs(a.data[i] - b.data[i]) <= tol);
}

Tensor eval_op(const std::function<Tape::Id(Tape&)>& f) {
  Tape t(false);
  return t.value(f(t));
}

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0f, 2.0f}), ShapeError);
  Tensor t = Tensor::full({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.data[5] == 1.5f);
}

TEST_CASE("take_channels slices the channel axis") {
  Tensor t({1, 3, 2, 2});
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(i);
  Tensor c1 = take_channels(t, 1, 2);
  CHECK(c1.dims == std::vector<int>{1, 1, 2, 2});
  CHECK(c1.data[0] == 4.0f);
  CHECK_THROWS_AS(take_channels(t, 2, 2), ShapeError);
}

TEST_CASE("OXT1 round-trip is bit-exact") {
  Rng rng(123);
  Tensor t = Tensor::randn({2, 3, 5, 4}, rng);
  t.data[0] = -0.0f;
  t.data[1] = 1e-40f;  // subnormal survives too
  std::stringstream ss;
  oxt_write(ss, t);
  Tensor u = oxt_read(ss);
  CHECK(u.dims == t.dims);
  CHECK(std::memcmp(u.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);
}

TEST_CASE("OXT1 rejects bad input") {
  std::stringstream ss("NOPE");
  CHECK_THROWS_AS(oxt_read(ss), IoError);
  std::stringstream truncated;
  truncated.write("OXT1", 4);
  CHECK_THROWS_AS(oxt_read(truncated), IoError);
}

TEST_CASE("conv2d: nine ones sum to 9") {
  Tensor in = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor out = kern::conv2d_fwd<float>(in, w, nullptr, 1, 0);
  CHECK(out.dims == std::vector<int>{1, 1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: 1x1 identity kernel") {
  Rng rng(7);
  Tensor in = Tensor::randn({2, 1, 5, 6}, rng);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0f);
  Tensor out = kern::conv2d_fwd<float>(in, w, nullptr, 1, 0);
  check_close(out, in, 0.0f);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(42);
  struct Case {
    std::vector<int> in, w;
    int s, p;
    bool bias;
  };
  const Case cases[] = {
      {{1, 2, 4, 4}, {3, 2, 3, 3}, 1, 1, true},
      {{2, 3, 7, 5}, {4, 3, 3, 3}, 2, 1, true},
      {{1, 1, 8, 8}, {2, 1, 4, 4}, 2, 1, false},
      {{2, 2, 6, 6}, {1, 2, 1, 1}, 1, 0, true},
      {{1, 3, 5, 5}, {2, 3, 5, 5}, 1, 2, false},
  };
  for (const auto& c : cases) {
    Tensor in = Tensor::randn(c.in, rng);
    Tensor w = Tensor::randn(c.w, rng);
    Tensor b = Tensor::randn({c.w[0]}, rng);
    const Tensor* bp = c.bias ? &b : nullptr;
    check_close(kern::conv2d_fwd<float>(in, w, bp, c.s, c.p), conv_oracle(in, w, bp, c.s, c.p), 1e-5f);
  }
}

TEST_CASE("conv2d rejects mismatched channels naming both shapes") {
  Tensor in({1, 2, 4, 4});
  Tensor w({3, 3, 3, 3});
  try {
    kern::conv2d_fwd<float>(in, w, nullptr, 1, 1);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2x4x4]") != std::string::npos);
    CHECK(msg.find("[3x3x3x3]") != std::string::npos);
  }
}

TEST_CASE("conv_transpose2d: 2x2 ones with stride 2 tile to 4x4 ones") {
  Tensor in = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor out = kern::tconv2d_fwd<float>(in, w, nullptr, 2, 0);
  CHECK(out.dims == std::vector<int>{1, 1, 4, 4});
  check_close(out, tconv_oracle(in, w, nullptr, 2, 0), 0.0f);
  for (float v : out.data) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("conv_transpose2d: 1x1 unit kernel is identity") {
  Rng rng(9);
  Tensor in = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at4(c, c, 0, 0) = 1.0f;
  Tensor out = kern::tconv2d_fwd<float>(in, w, nullptr, 1, 0);
  check_close(out, in, 0.0f);
}

TEST_CASE("conv_transpose2d matches the adjoint oracle") {
  Rng rng(43);
  struct Case {
    std::vector<int> in, w;
    int s, p;
    bool bias;
  };
  const Case cases[] = {
      {{1, 2, 3, 3}, {2, 3, 4, 4}, 2, 1, true},
      {{2, 3, 4, 5}, {3, 2, 3, 3}, 1, 1, false},
      {{1, 1, 2, 2}, {1, 2, 2, 2}, 2, 0, true},
      {{2, 2, 5, 5}, {2, 2, 1, 1}, 1, 0, false},
  };
  for (const auto& c : cases) {
    Tensor in = Tensor::randn(c.in, rng);
    Tensor w = Tensor::randn(c.w, rng);
    Tensor b = Tensor::randn({c.w[1]}, rng);
    const Tensor* bp = c.bias ? &b : nullptr;
    check_close(kern::tconv2d_fwd<float>(in, w, bp, c.s, c.p), tconv_oracle(in, w, bp, c.s, c.p),
                1e-5f);
  }
}

TEST_CASE("conv shape algebra: conv then transpose restores even spatial dims") {
  Rng rng(44);
  for (int K : {2, 4}) {
    for (int s : {1, 2}) {
      for (int p : {0, 1}) {
        if (K <= p) continue;
        for (int H : {8, 12, 16}) {
          if ((H + 2 * p - K) % s != 0) continue;
          Tensor in = Tensor::randn({1, 2, H, H}, rng);
          Tensor w = Tensor::randn({3, 2, K, K}, rng);
          Tensor mid = kern::conv2d_fwd<float>(in, w, nullptr, s, p);
          Tensor wt = Tensor::randn({3, 2, K, K}, rng);
          Tensor back = kern::tconv2d_fwd<float>(mid, wt, nullptr, s, p);
          CHECK(back.dims[2] == H);
          CHECK(back.dims[3] == H);
        }
      }
    }
  }
}

TEST_CASE("conv_transpose2d forward equals conv2d input gradient") {
  Rng rng(45);
  Tensor x = Tensor::randn({1, 2, 4, 4}, rng);      // plays conv output-grad
  Tensor w = Tensor::randn({2, 3, 4, 4}, rng);      // IOKK for the transpose
  const int s = 2, p = 1;
  Tensor fwd = kern::tconv2d_fwd<float>(x, w, nullptr, s, p);
  // conv2d with weight OIKK = same buffer: O=2 (grad channels), I=3
  Tensor dummy_in({1, 3, fwd.dims[2], fwd.dims[3]});
  Tensor din({1, 3, fwd.dims[2], fwd.dims[3]});
  kern::conv2d_bwd<float>(dummy_in, w, x, s, p, &din, nullptr, nullptr);
  check_close(fwd, din, 1e-5f);
}

TEST_CASE("batch_norm2d: definition examples") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});
  Tensor y = kern::batchnorm_fwd_train<float>(x, gamma, beta, nullptr, nullptr, 0.1f, 1e-5f,
                                              nullptr);
  float mean = 0;
  for (float v : y.data) mean += v;
  mean /= 4.0f;
  CHECK(std::abs(mean) < 1e-6f);

  Tensor gamma0 = Tensor::zeros({1});
  Tensor beta7 = Tensor::full({1}, 7.0f);
  Tensor y2 = kern::batchnorm_fwd_train<float>(x, gamma0, beta7, nullptr, nullptr, 0.1f, 1e-5f,
                                               nullptr);
  for (float v : y2.data) CHECK(v == doctest::Approx(7.0f));
}

TEST_CASE("batch_norm2d matches a two-pass oracle") {
  Rng rng(46);
  Tensor x = Tensor::randn({3, 2, 4, 5}, rng, 1.5f, 2.0f);
  Tensor gamma = Tensor::uniform({2}, rng, 0.5f, 1.5f);
  Tensor beta = Tensor::randn({2}, rng);
  const float eps = 1e-5f;
  Tensor got = kern::batchnorm_fwd_train<float>(x, gamma, beta, nullptr, nullptr, 0.1f, eps,
                                                nullptr);
  const int N = 3, C = 2, HW = 20;
  for (int c = 0; c < C; ++c) {
    double mean = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) mean += x.data[static_cast<std::size_t>((n * C + c) * HW + i)];
    mean /= N * HW;
    double var = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) {
        const double d = x.data[static_cast<std::size_t>((n * C + c) * HW + i)] - mean;
        var += d * d;
      }
    var /= N * HW;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) {
        const std::size_t idx = static_cast<std::size_t>((n * C + c) * HW + i);
        const double expect =
            gamma.data[static_cast<std::size_t>(c)] * (x.data[idx] - mean) / std::sqrt(var + eps) +
            beta.data[static_cast<std::size_t>(c)];
        CHECK(std::abs(got.data[idx] - expect) < 1e-5);
      }
  }
}

TEST_CASE("batch_norm2d: single-element channel set is degenerate") {
  Tensor x({1, 2, 1, 1});
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  CHECK_THROWS_AS(kern::batchnorm_fwd_train<float>(x, gamma, beta, nullptr, nullptr, 0.1f,
                                                   1e-5f, nullptr),
                  InvalidArgument);
}

TEST_CASE("batch_norm2d running stats feed eval mode") {
  Rng rng(47);
  Tensor x = Tensor::randn({4, 2, 3, 3}, rng, 0.5f, 1.5f);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0f);
  // momentum 1.0 copies the batch stats straight into the running buffers
  kern::batchnorm_fwd_train<float>(x, gamma, beta, &rm, &rv, 1.0f, 1e-5f, nullptr);
  Tensor eval_out = kern::batchnorm_fwd_eval<float>(x, gamma, beta, rm, rv, 1e-5f);
  // per-channel mean of eval output ~ 0 (unbiased vs biased var only skews scale)
  const int C = 2, HW = 9, N = 4;
  for (int c = 0; c < C; ++c) {
    double mean = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i)
        mean += eval_out.data[static_cast<std::size_t>((n * C + c) * HW + i)];
    CHECK(std::abs(mean / (N * HW)) < 1e-5);
  }
}

TEST_CASE("activation values") {
  Tensor x = Tensor::from_data({4}, {-1.0f, 0.0f, 2.0f, -0.5f});
  Tensor lr = eval_op([&](Tape& t) { return t.leaky_relu(t.leaf(x), 0.2f); });
  CHECK(lr.data[0] == doctest::Approx(-0.2f));
  CHECK(lr.data[1] == doctest::Approx(0.0f));
  CHECK(lr.data[2] == doctest::Approx(2.0f));
  CHECK(lr.data[3] == doctest::Approx(-0.1f));

  Tensor sg = eval_op([&](Tape& t) { return t.sigmoid(t.leaf(Tensor::scalar(0.0f))); });
  CHECK(sg.data[0] == doctest::Approx(0.5f));

  Rng rng(48);
  Tensor r = Tensor::randn({50}, rng);
  Tensor th = eval_op([&](Tape& t) { return t.tanh_act(t.leaf(r)); });
  for (std::size_t i = 0; i < r.data.size(); ++i)
    CHECK(std::abs(th.data[i] - std::tanh(r.data[i])) < 1e-6f);
}

TEST_CASE("dropout semantics") {
  Rng rng(49);
  Tensor x = Tensor::full({100, 100}, 1.0f);

  Rng r0(50);
  Tensor id0 = eval_op([&](Tape& t) { return t.dropout(t.leaf(x), 0.0f, r0, true); });
  CHECK(std::memcmp(id0.data.data(), x.data.data(), x.data.size() * sizeof(float)) == 0);

  Rng r1(51);
  Tensor dropped = eval_op([&](Tape& t) { return t.dropout(t.leaf(x), 0.5f, r1, true); });
  int zeros = 0;
  for (float v : dropped.data) {
    if (v == 0.0f)
      ++zeros;
    else
      CHECK(v == doctest::Approx(2.0f));  // survivors scaled by 1/(1-p)
  }
  const double frac = static_cast<double>(zeros) / 1e4;
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);

  Rng r2(52);
  Tensor off = eval_op([&](Tape& t) { return t.dropout(t.leaf(x), 0.9f, r2, false); });
  CHECK(std::memcmp(off.data.data(), x.data.data(), x.data.size() * sizeof(float)) == 0);

  Rng r3(53);
  Tape t;
  CHECK_THROWS_AS(t.dropout(t.leaf(x), 1.0f, r3, true), InvalidArgument);
}

TEST_CASE("concat_channels stacks a first") {
  Rng rng(54);
  Tensor a = Tensor::randn({1, 3, 8, 8}, rng);
  Tensor b = Tensor::randn({1, 3, 8, 8}, rng);
  Tensor c = eval_op([&](Tape& t) { return t.concat_channels(t.leaf(a), t.leaf(b)); });
  CHECK(c.dims == std::vector<int>{1, 6, 8, 8});
  Tensor front = take_channels(c, 0, 3);
  CHECK(std::memcmp(front.data.data(), a.data.data(), a.data.size() * sizeof(float)) == 0);

  Tensor z = Tensor::zeros({1, 2, 8, 8});
  Tensor cz = eval_op([&](Tape& t) { return t.concat_channels(t.leaf(a), t.leaf(z)); });
  Tensor back = take_channels(cz, 0, 3);
  CHECK(std::memcmp(back.data.data(), a.data.data(), a.data.size() * sizeof(float)) == 0);

  Tensor bad = Tensor::zeros({1, 2, 4, 4});
  Tape t;
  CHECK_THROWS_AS(t.concat_channels(t.leaf(a), t.leaf(bad)), ShapeError);
}

TEST_CASE("determinism: same seed, same op sequence, identical bits") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor in = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor w = Tensor::randn({3, 2, 4, 4}, rng);
    Tape t(false);
    Rng drop(Rng::derive(seed, 1));
    auto out = t.dropout(t.conv2d(t.leaf(in), t.leaf(w), std::nullopt, 2, 1), 0.3f, drop, true);
    return t.value(out);
  };
  Tensor a = run(77);
  Tensor b = run(77);
  REQUIRE(a.dims == b.dims);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}
