#include "oxygan/evalkit.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <thread>

#include "json_detail.hpp"
#include "oxygan/oxt.hpp"
#include "oxygan/png_io.hpp"

namespace oxygan {

float mean_intensity_error(const Tensor& pred, const Tensor& truth) {
  const Tensor p = pred.ndim() == 3 && pred.dims[0] > 1 ? take_channels(pred, 0, 1) : pred;
  const Tensor t = truth.ndim() == 3 && truth.dims[0] > 1 ? take_channels(truth, 0, 1) : truth;
  if (p.dims != t.dims) throw_shape_mismatch("mean_intensity_error", pred.dims, truth.dims);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i)
    acc += std::abs(static_cast<double>(p.data[i]) - t.data[i]);
  return static_cast<float>(acc / static_cast<double>(p.numel()));
}

std::vector<CaseData> load_cases(const std::string& manifest_path, bool test_split) {
  const DatasetManifest m = load_manifest(manifest_path, true);
  std::vector<CaseData> out;
  for (const CaseEntry* e : m.split(test_split))
    out.push_back({e->case_id, oxt_load(e->rgb_path), oxt_load(e->sto2_path)});
  return out;
}

Predictor generator_predictor(UNetGenerator& g, const EvalOptions& opts) {
  auto noise_rng = std::make_shared<Rng>(Rng::derive(opts.noise_seed, 0xEA));
  const bool noise = opts.noise;
  UNetGenerator* gen = &g;
  return [gen, noise, noise_rng](const std::vector<const SamplePair*>& batch) {
    Tensor x = stack_inputs(batch);
    Tape tape(false);
    auto binding = gen->bind(tape, false);
    Tensor y_hat = tape.value(gen->forward(tape, binding, tape.leaf(std::move(x)), noise,
                                           *noise_rng));
    return denormalize_unit(y_hat);
  };
}

Predictor perfect_oracle_predictor() {
  return [](const std::vector<const SamplePair*>& batch) {
    Tensor y = stack_targets(batch);
    return denormalize_unit(y);
  };
}

namespace {

Tensor slice_sample(const Tensor& batch, int n) {
  Tensor out({batch.dims[1], batch.dims[2], batch.dims[3]});
  const std::size_t stride = out.data.size();
  std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(n * stride), stride,
              out.data.begin());
  return out;
}

// Runs the predictor over pairs in infer_batch chunks; per-pair errors
// against the denormalized targets.
std::vector<float> batched_errors(const Predictor& predict,
                                  const std::vector<SamplePair>& pairs, int infer_batch) {
  if (infer_batch < 1) throw InvalidArgument("infer_batch must be >= 1");
  std::vector<float> errors;
  errors.reserve(pairs.size());
  std::size_t i = 0;
  while (i < pairs.size()) {
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(infer_batch),
                                                   pairs.size() - i);
    std::vector<const SamplePair*> chunk;
    chunk.reserve(take);
    for (std::size_t k = 0; k < take; ++k) chunk.push_back(&pairs[i + k]);
    Tensor preds = predict(chunk);
    for (std::size_t k = 0; k < take; ++k) {
      const Tensor pred = slice_sample(preds, static_cast<int>(k));
      const Tensor truth = denormalize_unit(pairs[i + k].y);
      errors.push_back(mean_intensity_error(pred, truth));
    }
    i += take;
  }
  return errors;
}

SamplePair select_crop(const CaseData& c, const EvalOptions& opts) {
  switch (opts.selector) {
    case CropSelector::center: {
      auto pairs = pairs_from_case(c.case_id, c.rgb, c.sto2, opts.geom, false);
      return std::move(pairs[0]);
    }
    case CropSelector::index:
    case CropSelector::random: {
      auto pairs = pairs_from_case(c.case_id, c.rgb, c.sto2, opts.geom, true);
      std::size_t idx;
      if (opts.selector == CropSelector::index) {
        idx = static_cast<std::size_t>(opts.selector_index);
        if (idx >= pairs.size())
          throw InvalidArgument("crop selector index " + std::to_string(idx) + " out of " +
                                std::to_string(pairs.size()));
      } else {
        Rng rng(Rng::derive(opts.selector_seed, fnv1a64(c.case_id)));
        idx = static_cast<std::size_t>(rng.uniform_index(pairs.size()));
      }
      return std::move(pairs[idx]);
    }
  }
  throw Error("unreachable crop selector");
}

}  // namespace

EvalAggregate eval_intercase(const Predictor& predict, const std::vector<CaseData>& cases,
                             const EvalOptions& opts) {
  if (cases.empty()) throw Error("eval_intercase: empty test set");
  std::vector<SamplePair> picks;
  picks.reserve(cases.size());
  for (const CaseData& c : cases) picks.push_back(select_crop(c, opts));
  const std::vector<float> errors = batched_errors(predict, picks, opts.infer_batch);
  EvalAggregate out;
  double acc = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    out.per_case.push_back({cases[i].case_id, 1, errors[i], EvalProtocol::intercase});
    acc += errors[i];
  }
  out.aggregate = static_cast<float>(acc / static_cast<double>(cases.size()));
  return out;
}

EvalResult eval_intracase(const Predictor& predict, const CaseData& c,
                          const EvalOptions& opts) {
  auto pairs = pairs_from_case(c.case_id, c.rgb, c.sto2, opts.geom, true);
  const std::vector<float> errors = batched_errors(predict, pairs, opts.infer_batch);
  double acc = 0.0;
  for (float e : errors) acc += e;
  EvalResult r;
  r.case_id = c.case_id;
  r.n_crops = static_cast<int>(pairs.size());
  r.mean_error = static_cast<float>(acc / static_cast<double>(errors.size()));
  r.protocol = EvalProtocol::intracase;
  return r;
}

EvalAggregate eval_full(const Predictor& predict, const std::vector<CaseData>& cases,
                        const EvalOptions& opts) {
  if (cases.empty()) throw Error("eval_full: empty test set");
  EvalAggregate out;
  double acc = 0.0;
  for (const CaseData& c : cases) {
    EvalResult r = eval_intracase(predict, c, opts);
    r.protocol = EvalProtocol::full;
    acc += r.mean_error;
    out.per_case.push_back(std::move(r));
  }
  out.aggregate = static_cast<float>(acc / static_cast<double>(cases.size()));
  return out;
}

namespace {

SweepRow run_sweep_point(const std::string& axis, float value, const TrainConfig& base,
                         const SweepInputs& in, std::uint64_t seed_offset) {
  SweepRow row;
  row.axis = axis;
  row.value = value;
  try {
    TrainConfig cfg = base;
    cfg.seed = Rng::derive(base.seed, seed_offset);
    if (axis == "batch_size")
      cfg.batch_size = static_cast<int>(value);
    else
      cfg.lambda_l1 = value;
    UNetGenerator g = UNetGenerator::build(cfg.network, cfg.seed);
    PatchDiscriminator d = PatchDiscriminator::build(cfg.network, cfg.seed);
    train_loop(g, d, in.train_pairs, cfg, nullptr);
    g.set_mode(Mode::eval);
    Predictor predict = generator_predictor(g, in.eval);
    row.inter_error = eval_intercase(predict, in.test_cases, in.eval).aggregate;
    const int n_intra =
        std::min<int>(std::max(in.intra_cases, 1), static_cast<int>(in.test_cases.size()));
    double acc = 0.0;
    for (int i = 0; i < n_intra; ++i)
      acc += eval_intracase(predict, in.test_cases[static_cast<std::size_t>(i)], in.eval)
                 .mean_error;
    row.intra_error = static_cast<float>(acc / n_intra);
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
    row.inter_error = std::nanf("");
    row.intra_error = std::nanf("");
  }
  return row;
}

}  // namespace

SweepReport sweep(const SweepGrid& grid, const TrainConfig& base, const SweepInputs& in,
                  int worker_cap) {
  if (grid.batch_sizes.empty() && grid.l1_weights.empty())
    throw ConfigError("sweep: empty grid");
  struct Point {
    std::string axis;
    float value;
  };
  std::vector<Point> points;
  for (int b : grid.batch_sizes) points.push_back({"batch_size", static_cast<float>(b)});
  for (float l : grid.l1_weights) points.push_back({"l1_weight", l});

  SweepReport report;
  report.rows.resize(points.size());
  const int workers = std::max(1, std::min<int>(worker_cap, static_cast<int>(points.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < points.size(); ++i)
      report.rows[i] = run_sweep_point(points[i].axis, points[i].value, base, in, 1000 + i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1))
          report.rows[i] = run_sweep_point(points[i].axis, points[i].value, base, in, 1000 + i);
      });
    for (auto& t : pool) t.join();
  }

  // monotone improvement along the sweep axes is reported, never asserted
  auto monotone_note = [&](const std::string& axis) -> bool {
    float prev = std::nanf("");
    bool any = false;
    for (const SweepRow& r : report.rows) {
      if (r.axis != axis || !r.ok) continue;
      if (any && !(r.inter_error <= prev)) return false;
      prev = r.inter_error;
      any = true;
    }
    return any;
  };
  std::string note;
  if (grid.batch_sizes.size() > 1 && monotone_note("batch_size"))
    note += "inter-case error decreases monotonically with batch size";
  if (grid.l1_weights.size() > 1 && monotone_note("l1_weight")) {
    if (!note.empty()) note += "; ";
    note += "inter-case error decreases monotonically with L1 weight";
  }
  if (!note.empty()) report.trend_note = note;
  return report;
}

void write_sweep_csv(std::ostream& os, const SweepReport& report,
                     const std::string& config_hash) {
  if (!config_hash.empty()) os << "# config_hash=" << config_hash << "\n";
  os << "axis,value,inter_error,intra_error\n";
  char buf[160];
  for (const SweepRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", r.axis.c_str(),
                  static_cast<double>(r.value), static_cast<double>(r.inter_error),
                  static_cast<double>(r.intra_error));
    os << buf;
  }
}

void write_sweep_csv_file(const std::string& path, const SweepReport& report,
                          const std::string& config_hash) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_sweep_csv(f, report, config_hash);
  if (!f) throw IoError("sweep csv write failed: " + path);
}

void emit_qualitative(const Tensor& x_rgb, const Tensor& truth_sto2, const Tensor& pred_sto2,
                      const std::string& path,
                      const std::map<std::string, std::string>& texts) {
  if (x_rgb.ndim() != 3 || x_rgb.dims[0] != 3)
    throw ShapeError("emit_qualitative: input must be 3xHxW, got " + dims_to_string(x_rgb.dims));
  const Tensor truth =
      truth_sto2.dims[0] > 1 ? take_channels(truth_sto2, 0, 1) : truth_sto2;
  const Tensor pred = pred_sto2.dims[0] > 1 ? take_channels(pred_sto2, 0, 1) : pred_sto2;
  const int H = x_rgb.dims[1], W = x_rgb.dims[2];
  if (truth.dims[1] != H || truth.dims[2] != W || pred.dims[1] != H || pred.dims[2] != W)
    throw_shape_mismatch("emit_qualitative", x_rgb.dims, pred_sto2.dims);

  PngImage img;
  img.channels = 3;
  img.height = H;
  img.width = 4 * W + 3 * kQualitativeGutter;
  img.pixels.assign(static_cast<std::size_t>(img.width) * H * 3, 255);  // white gutters

  auto put = [&](int panel, int y, int x, float r, float g, float b) {
    const int px = panel * (W + kQualitativeGutter) + x;
    auto q = [](float v) {
      return static_cast<std::uint8_t>(
          std::lround(255.0f * std::min(1.0f, std::max(0.0f, v))));
    };
    img.at(y, px, 0) = q(r);
    img.at(y, px, 1) = q(g);
    img.at(y, px, 2) = q(b);
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      put(0, y, x, x_rgb.at3(0, y, x), x_rgb.at3(1, y, x), x_rgb.at3(2, y, x));
      const float t = truth.at3(0, y, x);
      put(1, y, x, t, t, t);
      const float p = pred.at3(0, y, x);
      put(2, y, x, p, p, p);
      const float d = std::abs(p - t);
      put(3, y, x, d, d, d);
    }
  png_write(path, img, texts);
}

void write_summary_json(const std::string& path, const std::string& config_hash,
                        const std::vector<std::pair<std::string, double>>& errors,
                        double runtime_seconds) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  nlohmann::json errs = nlohmann::json::object();
  for (const auto& [k, v] : errors) errs[k] = v;
  j["errors"] = std::move(errs);
  j["runtime_seconds"] = runtime_seconds;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("summary write failed: " + path);
}

}  // namespace oxygan
