#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "oxygan/network.hpp"
#include "oxygan/objective.hpp"

using namespace oxygan;

namespace {

NetworkConfig small_cfg(int image_size = 64, int base = 8) {
  NetworkConfig cfg;
  cfg.image_size = image_size;
  cfg.base_filters = base;
  return cfg;
}

std::vector<std::uint8_t> param_bytes(std::vector<NamedTensor> named) {
  std::vector<std::uint8_t> out;
  for (const auto& nt : named) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(nt.tensor->data.data());
    out.insert(out.end(), p, p + nt.tensor->data.size() * sizeof(float));
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig cfg;
  cfg.image_size = 100;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.image_size = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.g_levels = 7;  // 64 only supports 6
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.d_layers = 5;  // 64 / 32 leaves nothing
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.dropout_p = 1.0f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(small_cfg().resolved_g_levels() == 6);  // 64 = 2^6, innermost map is 1x1
}

TEST_CASE("generator: same seed, same parameter bytes; counts are stable") {
  const NetworkConfig cfg = small_cfg();
  UNetGenerator a = UNetGenerator::build(cfg, 11);
  UNetGenerator b = UNetGenerator::build(cfg, 11);
  UNetGenerator c = UNetGenerator::build(cfg, 12);
  CHECK(param_bytes(a.named_tensors()) == param_bytes(b.named_tensors()));
  CHECK(param_bytes(a.named_tensors()) != param_bytes(c.named_tensors()));
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.parameter_count() == c.parameter_count());

  // full-scale config: two independent builds agree on the count
  NetworkConfig big;
  big.image_size = 256;
  CHECK(UNetGenerator::build(big, 1).parameter_count() ==
        UNetGenerator::build(big, 2).parameter_count());
}

TEST_CASE("generator parameter names are unique") {
  UNetGenerator g = UNetGenerator::build(small_cfg(), 3);
  auto named = g.named_tensors();
  for (std::size_t i = 0; i < named.size(); ++i)
    for (std::size_t j = i + 1; j < named.size(); ++j) CHECK(named[i].name != named[j].name);
}

TEST_CASE("generator forward: shape preserved, range in [-1,1]") {
  for (int size : {32, 64}) {
    NetworkConfig cfg = small_cfg(size);
    UNetGenerator g = UNetGenerator::build(cfg, 5);
    Rng rng(6);
    Rng noise(7);
    Tensor x = Tensor::uniform({2, 3, size, size}, rng, -1.0f, 1.0f);
    Tensor y = g.infer(x, false, noise);
    CHECK(y.dims == std::vector<int>{2, 3, size, size});
    CHECK(y.min_value() >= -1.0f);
    CHECK(y.max_value() <= 1.0f);
  }
}

TEST_CASE("generator forward: deterministic without noise, stochastic with it") {
  UNetGenerator g = UNetGenerator::build(small_cfg(32), 8);
  Rng rng(9);
  Tensor x = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Rng n1(1), n2(1), n3(2);
  Tensor a = g.infer(x, false, n1);
  Tensor b = g.infer(x, false, n2);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  Tensor c = g.infer(x, true, n3);
  Rng n4(5);
  Tensor d = g.infer(x, true, n4);
  bool differs = false;
  for (std::size_t i = 0; i < c.data.size(); ++i)
    if (c.data[i] != d.data[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("discriminator logit map follows the receptive-field arithmetic") {
  CHECK(discriminator_logit_side(256, 3) == 30);  // 256->128->64->32->31->30
  CHECK(discriminator_logit_side(64, 3) == 6);    // 64->32->16->8->7->6
  CHECK(discriminator_logit_side(128, 3) == 14);

  for (int d_layers : {1, 2, 3}) {
    for (int size : {64, 128, 256}) {
      NetworkConfig cfg = small_cfg(size, 4);
      cfg.d_layers = d_layers;
      PatchDiscriminator d = PatchDiscriminator::build(cfg, 21);
      d.set_mode(Mode::eval);
      Rng rng(22);
      Tensor x = Tensor::uniform({1, 3, size, size}, rng, -1.0f, 1.0f);
      Tensor y = Tensor::uniform({1, 3, size, size}, rng, -1.0f, 1.0f);
      Tape tape(false);
      auto binding = d.bind(tape, false);
      Tensor logits = tape.value(d.forward(tape, binding, tape.leaf(x), tape.leaf(y)));
      const int side = discriminator_logit_side(size, d_layers);
      CHECK(logits.dims == std::vector<int>{1, 1, side, side});
    }
  }
}

TEST_CASE("doubling image size doubles each logit-map side plus the fixed trim") {
  // side(2S) = 2*side(S) + 2 for the k4s1p1 tail
  for (int d_layers : {1, 2, 3})
    CHECK(discriminator_logit_side(128, d_layers) ==
          2 * discriminator_logit_side(64, d_layers) + 2);
}

TEST_CASE("discriminator: permuting the batch permutes outputs identically") {
  NetworkConfig cfg = small_cfg(32);
  PatchDiscriminator d = PatchDiscriminator::build(cfg, 30);
  d.set_mode(Mode::eval);  // per-sample independence
  Rng rng(31);
  Tensor x1 = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor x2 = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor y1 = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor y2 = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);

  auto run_pair = [&](const Tensor& xa, const Tensor& ya, const Tensor& xb, const Tensor& yb) {
    Tensor x({2, 3, 32, 32});
    Tensor y({2, 3, 32, 32});
    std::copy(xa.data.begin() + 0, xa.data.end(), x.data.begin());
    std::copy(xb.data.begin(), xb.data.end(), x.data.begin() + xa.numel());
    std::copy(ya.data.begin(), ya.data.end(), y.data.begin());
    std::copy(yb.data.begin(), yb.data.end(), y.data.begin() + ya.numel());
    Tape tape(false);
    auto binding = d.bind(tape, false);
    return tape.value(d.forward(tape, binding, tape.leaf(x), tape.leaf(y)));
  };
  Tensor fwd = run_pair(x1, y1, x2, y2);
  Tensor rev = run_pair(x2, y2, x1, y1);
  const std::size_t half = fwd.data.size() / 2;
  CHECK(std::memcmp(fwd.data.data(), rev.data.data() + half, half * sizeof(float)) == 0);
  CHECK(std::memcmp(fwd.data.data() + half, rev.data.data(), half * sizeof(float)) == 0);
}

TEST_CASE("discriminator with zeroed weights emits constant bias logits") {
  NetworkConfig cfg = small_cfg(32);
  PatchDiscriminator d = PatchDiscriminator::build(cfg, 33);
  d.set_mode(Mode::eval);
  for (auto& nt : d.named_tensors()) {
    const bool is_running_var = nt.name.find("running_var") != std::string::npos;
    for (float& v : nt.tensor->data) v = is_running_var ? 1.0f : 0.0f;
  }
  // plant a bias on the final conv
  for (auto& nt : d.named_tensors())
    if (nt.name == "d.out.conv.b") nt.tensor->data[0] = 0.625f;
  Rng rng(34);
  Tensor x = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor y = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tape tape(false);
  auto binding = d.bind(tape, false);
  Tensor logits = tape.value(d.forward(tape, binding, tape.leaf(x), tape.leaf(y)));
  for (float v : logits.data) CHECK(v == doctest::Approx(0.625f));
}

TEST_CASE("unconditional_d sees only the target image") {
  NetworkConfig cfg = small_cfg(32);
  cfg.unconditional_d = true;
  PatchDiscriminator d = PatchDiscriminator::build(cfg, 35);
  d.set_mode(Mode::eval);
  Rng rng(36);
  Tensor y = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor xa = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor xb = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  auto run = [&](const Tensor& x) {
    Tape tape(false);
    auto binding = d.bind(tape, false);
    return tape.value(d.forward(tape, binding, tape.leaf(x), tape.leaf(y)));
  };
  Tensor la = run(xa);
  Tensor lb = run(xb);
  CHECK(std::memcmp(la.data.data(), lb.data.data(), la.data.size() * sizeof(float)) == 0);
}

TEST_CASE("every generator parameter gets a gradient from the combined loss") {
  NetworkConfig cfg = small_cfg(32);
  UNetGenerator g = UNetGenerator::build(cfg, 41);
  PatchDiscriminator d = PatchDiscriminator::build(cfg, 42);
  Rng rng(43);
  Tensor x = Tensor::uniform({2, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor y = Tensor::uniform({2, 3, 32, 32}, rng, -1.0f, 1.0f);

  Tape tape;
  auto gb = g.bind(tape, true);
  auto db = d.bind(tape, false);
  auto xid = tape.leaf(x);
  Rng noise(44);
  auto y_hat = g.forward(tape, gb, xid, false, noise);  // noise off: no dropout exemption
  auto logits = d.forward(tape, db, xid, y_hat);
  GLoss losses = g_loss(tape, logits, tape.leaf(y), y_hat, 100.0f, GanMode::non_saturating);
  tape.backward(losses.total);

  auto params = g.trainable_params();
  auto grads = g.collect_grads(tape, gb);
  REQUIRE(params.size() == grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    float max_abs = 0.0f;
    for (float v : grads[i].data) max_abs = std::max(max_abs, std::abs(v));
    INFO("param ", params[i].name);
    CHECK(max_abs > 0.0f);
  }
  // and D stayed frozen
  for (const Tensor& dg : d.collect_grads(tape, db)) {
    float max_abs = 0.0f;
    for (float v : dg.data) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs == 0.0f);
  }
}

TEST_CASE("checkpoint round-trip reproduces forward output bitwise") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "oxygan_ckpt_test";
  fs::create_directories(dir);
  const std::string prefix = (dir / "ckpt").string();

  NetworkConfig cfg = small_cfg(32);
  UNetGenerator g = UNetGenerator::build(cfg, 51);
  PatchDiscriminator d = PatchDiscriminator::build(cfg, 52);
  // push the norm running stats off their init values
  {
    TrainConfig tc;
    tc.network = cfg;
    tc.batch_size = 2;
    tc.max_iterations = 2;
    tc.log_every = 1;
    tc.seed = 53;
    Rng rng(54);
    std::vector<SamplePair> pairs;
    for (int i = 0; i < 2; ++i) {
      SamplePair p;
      p.x = Tensor::uniform({3, 32, 32}, rng, -1.0f, 1.0f);
      p.y = Tensor::uniform({3, 32, 32}, rng, -1.0f, 1.0f);
      p.case_id = "c" + std::to_string(i);
      pairs.push_back(std::move(p));
    }
    AdamState go = AdamState::init(tc.adam, {});
    train_loop(g, d, pairs, tc, nullptr);
  }
  g.set_mode(Mode::eval);

  CheckpointMeta meta;
  meta.net_config = cfg;
  meta.config_hash = "deadbeef";
  meta.iteration = 2;
  save_checkpoint(prefix, g, &d, meta);

  LoadedCheckpoint loaded = load_checkpoint(prefix);
  CHECK(loaded.meta.config_hash == "deadbeef");
  CHECK(loaded.meta.iteration == 2);
  CHECK(loaded.meta.net_config == cfg);
  REQUIRE(loaded.d.has_value());
  loaded.g.set_mode(Mode::eval);

  CHECK(param_bytes(g.named_tensors()) == param_bytes(loaded.g.named_tensors()));
  Rng rng(55), n1(1), n2(1);
  Tensor x = Tensor::uniform({1, 3, 32, 32}, rng, -1.0f, 1.0f);
  Tensor a = g.infer(x, false, n1);
  Tensor b = loaded.g.infer(x, false, n2);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);

  fs::remove_all(dir);
}
