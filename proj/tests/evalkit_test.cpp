#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oxygan/evalkit.hpp"
#include "oxygan/oxt.hpp"
#include "oxygan/png_io.hpp"

using namespace oxygan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("oxygan_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<CaseData> synth_cases(int n, int h, int w, std::uint64_t seed) {
  SynthConfig sc;
  sc.height = h;
  sc.width = w;
  sc.seed = seed;
  std::vector<CaseData> out;
  for (int i = 0; i < n; ++i) {
    SynthPair sp = synth_pair(sc, static_cast<std::uint64_t>(i));
    out.push_back({"case_" + std::to_string(i), std::move(sp.rgb), std::move(sp.sto2)});
  }
  return out;
}

}  // namespace

TEST_CASE("mean_intensity_error: trivial values and the loop oracle") {
  Rng rng(1);
  Tensor a = Tensor::uniform({1, 6, 6}, rng, 0.0f, 1.0f);
  CHECK(mean_intensity_error(a, a) == 0.0f);

  Tensor zero = Tensor::zeros({1, 4, 4});
  Tensor one = Tensor::full({1, 4, 4}, 1.0f);
  CHECK(mean_intensity_error(zero, one) == doctest::Approx(1.0f));

  Tensor b = Tensor::uniform({1, 6, 6}, rng, 0.0f, 1.0f);
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  acc /= static_cast<double>(a.numel());
  CHECK(mean_intensity_error(a, b) == doctest::Approx(acc).epsilon(1e-6));

  // symmetry and boundedness
  CHECK(mean_intensity_error(a, b) == mean_intensity_error(b, a));
  CHECK(mean_intensity_error(a, b) <= 1.0f);

  // 3-channel inputs reduce to channel 0
  Tensor tri = replicate_channels(a);
  CHECK(mean_intensity_error(tri, a) == 0.0f);

  CHECK_THROWS_AS(mean_intensity_error(a, Tensor::zeros({1, 3, 3})), ShapeError);
}

TEST_CASE("perfect oracle scores zero everywhere") {
  auto cases = synth_cases(3, 48, 48, 2);
  EvalOptions opts;
  opts.geom.window = 32;
  opts.geom.stride = 16;
  opts.geom.net_size = 32;
  Predictor oracle = perfect_oracle_predictor();

  EvalAggregate inter = eval_intercase(oracle, cases, opts);
  CHECK(inter.aggregate == 0.0f);
  for (const auto& r : inter.per_case) {
    CHECK(r.mean_error == 0.0f);
    CHECK(r.n_crops == 1);
  }

  EvalResult intra = eval_intracase(oracle, cases[0], opts);
  CHECK(intra.mean_error == 0.0f);
  CHECK(intra.n_crops == crop_grid(48, 48, 32, 16).count());

  EvalAggregate full = eval_full(oracle, cases, opts);
  CHECK(full.aggregate == 0.0f);
}

TEST_CASE("intercase aggregate is the arithmetic mean of per-case errors") {
  auto cases = synth_cases(4, 40, 40, 3);
  EvalOptions opts;
  opts.geom.window = 32;
  opts.geom.stride = 8;
  opts.geom.net_size = 32;
  // constant-0.5 predictor
  Predictor half = [](const std::vector<const SamplePair*>& batch) {
    return Tensor::full({static_cast<int>(batch.size()), 3, 32, 32}, 0.5f);
  };
  EvalAggregate agg = eval_intercase(half, cases, opts);
  double mean = 0;
  for (const auto& r : agg.per_case) mean += r.mean_error;
  mean /= static_cast<double>(agg.per_case.size());
  CHECK(agg.aggregate == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("constant-0.5 predictor against constant-0.5 truth scores zero") {
  CaseData c;
  c.case_id = "flat";
  c.rgb = Tensor::full({3, 32, 32}, 0.25f);
  c.sto2 = Tensor::full({1, 32, 32}, 0.5f);
  EvalOptions opts;
  opts.geom.window = 32;
  opts.geom.stride = 16;
  opts.geom.net_size = 32;
  Predictor half = [](const std::vector<const SamplePair*>& batch) {
    return Tensor::full({static_cast<int>(batch.size()), 3, 32, 32}, 0.5f);
  };
  CHECK(eval_intracase(half, c, opts).mean_error == 0.0f);
}

TEST_CASE("intracase crop count matches the full-scale geometry") {
  auto cases = synth_cases(1, 192, 256, 4);
  EvalOptions opts;
  opts.geom.window = 128;
  opts.geom.stride = 16;
  opts.geom.net_size = 64;  // count depends only on window/stride
  EvalResult r = eval_intracase(perfect_oracle_predictor(), cases[0], opts);
  CHECK(r.n_crops == 45);
}

TEST_CASE("single-crop geometry: intercase aggregate equals eval_full") {
  auto cases = synth_cases(3, 32, 32, 5);
  EvalOptions opts;
  opts.geom.window = 32;  // window == H == W: one crop per case
  opts.geom.stride = 16;
  opts.geom.net_size = 32;
  Predictor half = [](const std::vector<const SamplePair*>& batch) {
    return Tensor::full({static_cast<int>(batch.size()), 3, 32, 32}, 0.5f);
  };
  const float inter = eval_intercase(half, cases, opts).aggregate;
  const float full = eval_full(half, cases, opts).aggregate;
  CHECK(inter == doctest::Approx(full));
}

TEST_CASE("eval_full is bitwise invariant to infer_batch with noise off") {
  NetworkConfig net;
  net.image_size = 32;
  net.base_filters = 8;
  UNetGenerator g = UNetGenerator::build(net, 6);
  g.set_mode(Mode::eval);
  auto cases = synth_cases(2, 48, 48, 7);
  EvalOptions opts;
  opts.geom.window = 32;
  opts.geom.stride = 8;
  opts.geom.net_size = 32;
  opts.noise = false;

  opts.infer_batch = 1;
  EvalAggregate a = eval_full(generator_predictor(g, opts), cases, opts);
  opts.infer_batch = 380;
  EvalAggregate b = eval_full(generator_predictor(g, opts), cases, opts);
  REQUIRE(a.per_case.size() == b.per_case.size());
  for (std::size_t i = 0; i < a.per_case.size(); ++i) {
    CHECK(std::memcmp(&a.per_case[i].mean_error, &b.per_case[i].mean_error, sizeof(float)) ==
          0);
  }
  CHECK(std::memcmp(&a.aggregate, &b.aggregate, sizeof(float)) == 0);
}

TEST_CASE("crop selectors pick deterministic crops") {
  auto cases = synth_cases(1, 48, 64, 8);
  EvalOptions opts;
  opts.geom.window = 32;
  opts.geom.stride = 16;
  opts.geom.net_size = 32;
  Predictor oracle = perfect_oracle_predictor();

  opts.selector = CropSelector::index;
  opts.selector_index = 3;
  CHECK(eval_intercase(oracle, cases, opts).aggregate == 0.0f);
  opts.selector_index = 999;
  CHECK_THROWS_AS(eval_intercase(oracle, cases, opts), InvalidArgument);

  opts.selector = CropSelector::random;
  opts.selector_seed = 9;
  CHECK(eval_intercase(oracle, cases, opts).aggregate == 0.0f);
}

TEST_CASE("sweep emits one row per grid point and reproduces itself") {
  NetworkConfig net;
  net.image_size = 16;
  net.base_filters = 4;
  net.g_levels = 3;
  net.d_layers = 2;
  TrainConfig base;
  base.network = net;
  base.batch_size = 2;
  base.max_iterations = 8;
  base.log_every = 4;
  base.seed = 10;

  SweepInputs in;
  auto cases = synth_cases(3, 24, 24, 11);
  in.test_cases = {cases[2]};
  DataGeometry geom;
  geom.window = 16;
  geom.stride = 8;
  geom.net_size = 16;
  in.eval.geom = geom;
  in.eval.infer_batch = 4;
  for (int i = 0; i < 2; ++i) {
    auto pairs = pairs_from_case(cases[static_cast<std::size_t>(i)].case_id,
                                 cases[static_cast<std::size_t>(i)].rgb,
                                 cases[static_cast<std::size_t>(i)].sto2, geom, true);
    for (auto& p : pairs) in.train_pairs.push_back(std::move(p));
  }

  SweepGrid grid;
  grid.l1_weights = {0.0f, 100.0f};
  SweepReport r1 = sweep(grid, base, in, 1);
  REQUIRE(r1.rows.size() == 2);
  for (const auto& row : r1.rows) {
    CHECK(row.ok);
    CHECK(row.axis == "l1_weight");
    CHECK(std::isfinite(row.inter_error));
    CHECK(row.inter_error >= 0.0f);
    CHECK(row.inter_error <= 1.0f);
  }

  SweepReport r2 = sweep(grid, base, in, 2);  // parallel workers, same grid
  std::ostringstream c1, c2;
  write_sweep_csv(c1, r1, "h");
  write_sweep_csv(c2, r2, "h");
  CHECK(c1.str() == c2.str());
  CHECK(c1.str().find("axis,value,inter_error,intra_error\n") != std::string::npos);

  SweepGrid empty;
  CHECK_THROWS_AS(sweep(empty, base, in, 1), ConfigError);

  // single-point grid
  SweepGrid one;
  one.batch_sizes = {2};
  CHECK(sweep(one, base, in, 1).rows.size() == 1);
}

TEST_CASE("qualitative emitter layout and difference encoding") {
  TempDir tmp("qual");
  const int W = 20, H = 12;
  Rng rng(12);
  Tensor x = Tensor::uniform({3, H, W}, rng, 0.0f, 1.0f);
  Tensor truth = Tensor::uniform({1, H, W}, rng, 0.0f, 1.0f);

  const std::string same = (tmp.path / "same.png").string();
  emit_qualitative(x, truth, truth, same, {{"config_hash", "cafef00d"}});
  PngImage img = png_read(same);
  CHECK(img.width == 4 * W + 3 * kQualitativeGutter);
  CHECK(img.height == H);
  CHECK(img.channels == 3);
  CHECK(img.texts.at("config_hash") == "cafef00d");
  // difference panel (4th) all black
  const int diff_x0 = 3 * (W + kQualitativeGutter);
  for (int y = 0; y < H; ++y)
    for (int x2 = 0; x2 < W; ++x2)
      for (int c = 0; c < 3; ++c) CHECK(img.at(y, diff_x0 + x2, c) == 0);

  // encoding contract: diff pixel = round(255*|pred-truth|)
  Tensor pred = truth;
  pred.at3(0, 3, 5) = std::min(1.0f, truth.at3(0, 3, 5) + 0.25f);
  const std::string diff = (tmp.path / "diff.png").string();
  emit_qualitative(x, truth, pred, diff);
  PngImage img2 = png_read(diff);
  const float d = std::abs(pred.at3(0, 3, 5) - truth.at3(0, 3, 5));
  CHECK(img2.at(3, diff_x0 + 5, 0) ==
        static_cast<std::uint8_t>(std::lround(255.0f * d)));
}

TEST_CASE("png round-trip preserves 8-bit pixels and text chunks") {
  TempDir tmp("png");
  Rng rng(13);
  PngImage img;
  img.width = 17;
  img.height = 9;
  img.channels = 3;
  img.pixels.resize(17 * 9 * 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  const std::string path = (tmp.path / "t.png").string();
  png_write(path, img, {{"k", "v"}});
  PngImage back = png_read(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.channels == img.channels);
  CHECK(back.pixels == img.pixels);
  CHECK(back.texts.at("k") == "v");

  // gray round-trip through the tensor helpers: value/255 quantization
  Tensor t = Tensor::from_data({1, 2, 2}, {0.0f, 0.5f, 1.0f, 0.25f});
  PngImage g = tensor_to_png(t);
  const std::string gpath = (tmp.path / "g.png").string();
  png_write(gpath, g);
  Tensor back_t = png_to_tensor(png_read(gpath));
  CHECK(back_t.dims == t.dims);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    CHECK(std::abs(back_t.data[i] - t.data[i]) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("summary json embeds the config hash") {
  TempDir tmp("summary");
  const std::string path = (tmp.path / "summary.json").string();
  write_summary_json(path, "77aa", {{"intercase", 0.125}}, 42.0);
  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"config_hash\": \"77aa\"") != std::string::npos);
  CHECK(text.find("\"intercase\": 0.125") != std::string::npos);
}
