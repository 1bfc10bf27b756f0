// Command-line front end: synth | augment | train | eval | sweep | infer |
// gradcheck. A JSON config file supplies the run tree; explicit flags win
// over file values. OXYGAN_THREADS caps sweep workers.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "oxygan/config.hpp"
#include "oxygan/gradcheck.hpp"
#include "oxygan/oxt.hpp"
#include "oxygan/png_io.hpp"

namespace fs = std::filesystem;
using namespace oxygan;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  bool deterministic = false;
  bool out_set = false;
  bool det_set = false;
};

RunConfig resolve_config(const CommonOpts& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = load_run_config(c.config_path);
  if (c.out_set) cfg.out_dir = c.out_dir;
  if (c.det_set) cfg.deterministic = true;
  return cfg;
}

void ensure_out_dir(const std::string& dir) { fs::create_directories(dir); }

double elapsed_or_zero(const std::chrono::steady_clock::time_point& t0, bool deterministic) {
  if (deterministic) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string case_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", i);
  return buf;
}

int cmd_synth(const RunConfig& cfg, const std::string& out, bool force) {
  cfg.data.synth.validate();
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw ConfigError("output directory " + out + " is not empty (use --force)");
  ensure_out_dir(out);
  const int n = cfg.data.n_cases;
  const int n_train = train_case_count(n, cfg.data.train_ratio);
  DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    SynthPair sp = synth_pair(cfg.data.synth, static_cast<std::uint64_t>(i));
    CaseEntry e;
    e.case_id = case_name(i);
    e.tissue = Tissue::synthetic;
    e.rgb_path = e.case_id + "_rgb.oxt1";
    e.sto2_path = e.case_id + "_sto2.oxt1";
    e.is_test = i >= n_train;
    oxt_save((fs::path(out) / e.rgb_path).string(), sp.rgb);
    oxt_save((fs::path(out) / e.sto2_path).string(), sp.sto2);
    m.cases.push_back(std::move(e));
  }
  save_manifest((fs::path(out) / "manifest.json").string(), m);
  std::cout << "wrote " << n << " cases (" << n_train << " train / " << n - n_train
            << " test) to " << out << "\n";
  return 0;
}

int cmd_augment(const RunConfig& cfg, const std::string& data, const std::string& out,
                bool force) {
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw ConfigError("output directory " + out + " is not empty (use --force)");
  ensure_out_dir(out);
  const DatasetManifest m = load_manifest(data, true);
  nlohmann::json pairs_json = nlohmann::json::array();
  std::size_t total = 0;
  for (const CaseEntry& c : m.cases) {
    const Tensor rgb = oxt_load(c.rgb_path);
    const Tensor sto2 = oxt_load(c.sto2_path);
    auto pairs = pairs_from_case(c.case_id, rgb, sto2, cfg.geom, true);
    for (const SamplePair& p : pairs) {
      const std::string stem = p.case_id + "_crop" + std::to_string(p.crop_index);
      oxt_save((fs::path(out) / (stem + "_x.oxt1")).string(), p.x);
      oxt_save((fs::path(out) / (stem + "_y.oxt1")).string(), p.y);
      pairs_json.push_back({{"case_id", p.case_id},
                            {"crop_index", p.crop_index},
                            {"x_path", stem + "_x.oxt1"},
                            {"y_path", stem + "_y.oxt1"},
                            {"split", c.is_test ? "test" : "train"}});
      ++total;
    }
  }
  nlohmann::json j;
  j["kind"] = "pairs";
  j["geometry"] = {{"window", cfg.geom.window},
                   {"stride", cfg.geom.stride},
                   {"net_size", cfg.geom.net_size}};
  j["pairs"] = std::move(pairs_json);
  std::ofstream f((fs::path(out) / "pairs_manifest.json").string(), std::ios::trunc);
  if (!f) throw IoError("cannot write pairs manifest in " + out);
  f << j.dump(2) << "\n";
  std::cout << "wrote " << total << " augmented pairs to " << out << "\n";
  return 0;
}

// Either expands a cases manifest on the fly or loads pre-augmented pairs.
std::pair<std::vector<SamplePair>, std::vector<SamplePair>> load_training_pairs(
    const std::string& data, const RunConfig& cfg) {
  std::ifstream probe(data);
  if (!probe) throw IoError("cannot open: " + data);
  nlohmann::json j;
  try {
    probe >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + data + ": " + e.what());
  }
  const std::string kind = j.value("kind", "");
  if (kind == "cases") {
    BuiltDataset ds = build_dataset(data, cfg.geom, true);
    return {std::move(ds.train), std::move(ds.test)};
  }
  if (kind == "pairs") {
    const fs::path base = fs::path(data).parent_path();
    std::vector<SamplePair> train, test;
    for (const auto& pj : j.at("pairs")) {
      SamplePair p;
      p.case_id = pj.at("case_id").get<std::string>();
      p.crop_index = pj.at("crop_index").get<int>();
      p.x = oxt_load((base / pj.at("x_path").get<std::string>()).string());
      p.y = oxt_load((base / pj.at("y_path").get<std::string>()).string());
      auto& dst = pj.at("split").get<std::string>() == "test" ? test : train;
      dst.push_back(std::move(p));
    }
    if (train.empty()) throw ConfigError("pairs manifest " + data + " has no train pairs");
    return {std::move(train), std::move(test)};
  }
  throw ConfigError("manifest " + data + ": unknown kind \"" + kind + "\"");
}

int cmd_train(const RunConfig& cfg, const std::string& data) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ensure_out_dir(cfg.out_dir);
  const std::string hash = run_config_hash(cfg);
  save_run_config((fs::path(cfg.out_dir) / "run_config.json").string(), cfg);

  auto [train_pairs, test_pairs] = load_training_pairs(data, cfg);
  std::cout << "training on " << train_pairs.size() << " pairs (" << test_pairs.size()
            << " held out)\n";

  UNetGenerator g = UNetGenerator::build(cfg.train.network, cfg.train.seed);
  PatchDiscriminator d = PatchDiscriminator::build(cfg.train.network, cfg.train.seed);

  const std::string ckpt_prefix = (fs::path(cfg.out_dir) / "ckpt").string();
  CheckpointSink sink = [&](int iter, UNetGenerator& gg, PatchDiscriminator& dd) {
    CheckpointMeta meta;
    meta.net_config = cfg.train.network;
    meta.config_hash = hash;
    meta.iteration = iter;
    save_checkpoint(ckpt_prefix, gg, &dd, meta);
  };
  TrainResult result = train_loop(g, d, train_pairs, cfg.train, sink);
  write_loss_csv_file((fs::path(cfg.out_dir) / "loss_history.csv").string(), result.history,
                      hash);

  std::vector<std::pair<std::string, double>> errors;
  if (!result.history.empty()) {
    errors.emplace_back("final_g_l1", result.history.back().g_l1_loss);
    errors.emplace_back("final_d_loss", result.history.back().d_loss);
  }
  write_summary_json((fs::path(cfg.out_dir) / "summary.json").string(), hash, errors,
                     elapsed_or_zero(t0, cfg.deterministic));
  std::cout << "ran " << result.iterations_run << " iterations; checkpoint at "
            << ckpt_prefix << ".json\n";
  return 0;
}

void write_eval_csv(const std::string& path, const std::vector<EvalResult>& results,
                    const std::string& hash) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "# config_hash=" << hash << "\n";
  f << "case_id,n_crops,mean_error\n";
  char buf[160];
  for (const EvalResult& r : results) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.9g\n", r.case_id.c_str(), r.n_crops,
                  static_cast<double>(r.mean_error));
    f << buf;
  }
  if (!f) throw IoError("eval csv write failed: " + path);
}

int cmd_eval(RunConfig cfg, bool config_given, const std::string& data,
             const std::string& ckpt_prefix, const std::string& protocol, bool allow_mismatch,
             bool perfect_oracle, int qualitative_n) {
  const auto t0 = std::chrono::steady_clock::now();
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_prefix);
  if (config_given) {
    if (!(ckpt.meta.net_config == cfg.train.network) && !allow_mismatch)
      throw ConfigError(
          "checkpoint network config disagrees with the run config (use --allow-mismatch)");
  } else {
    cfg.train.network = ckpt.meta.net_config;
    cfg.geom.net_size = ckpt.meta.net_config.image_size;
  }
  cfg.validate();
  ensure_out_dir(cfg.out_dir);
  const std::string hash = run_config_hash(cfg);

  ckpt.g.set_mode(Mode::eval);
  EvalOptions opts = cfg.eval_options();
  Predictor predict =
      perfect_oracle ? perfect_oracle_predictor() : generator_predictor(ckpt.g, opts);
  std::vector<CaseData> cases = load_cases(data, true);

  std::vector<std::pair<std::string, double>> errors;
  std::vector<EvalResult> rows;
  if (protocol == "intercase" || protocol == "all") {
    EvalAggregate a = eval_intercase(predict, cases, opts);
    errors.emplace_back("intercase", a.aggregate);
    rows.insert(rows.end(), a.per_case.begin(), a.per_case.end());
    write_eval_csv((fs::path(cfg.out_dir) / "eval_intercase.csv").string(), a.per_case, hash);
    std::cout << "intercase mean error: " << a.aggregate << "\n";
  }
  if (protocol == "intracase" || protocol == "all") {
    const int n = std::min<int>(cfg.eval.intra_cases, static_cast<int>(cases.size()));
    std::vector<EvalResult> per;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      per.push_back(eval_intracase(predict, cases[static_cast<std::size_t>(i)], opts));
      acc += per.back().mean_error;
    }
    errors.emplace_back("intracase", acc / std::max(1, n));
    write_eval_csv((fs::path(cfg.out_dir) / "eval_intracase.csv").string(), per, hash);
    std::cout << "intracase mean error: " << acc / std::max(1, n) << "\n";
  }
  if (protocol == "full" || protocol == "all") {
    EvalAggregate a = eval_full(predict, cases, opts);
    errors.emplace_back("full", a.aggregate);
    write_eval_csv((fs::path(cfg.out_dir) / "eval_full.csv").string(), a.per_case, hash);
    std::cout << "full-test mean error: " << a.aggregate << "\n";
  }

  for (int i = 0; i < qualitative_n && i < static_cast<int>(cases.size()); ++i) {
    const CaseData& c = cases[static_cast<std::size_t>(i)];
    auto pairs = pairs_from_case(c.case_id, c.rgb, c.sto2, opts.geom, false);
    std::vector<const SamplePair*> one = {&pairs[0]};
    Tensor pred = predict(one);
    Tensor pred0({pred.dims[1], pred.dims[2], pred.dims[3]});
    std::copy_n(pred.data.begin(), pred0.data.size(), pred0.data.begin());
    emit_qualitative(denormalize_unit(pairs[0].x), denormalize_unit(pairs[0].y), pred0,
                     (fs::path(cfg.out_dir) / ("qualitative_" + c.case_id + ".png")).string(),
                     {{"config_hash", hash}});
  }

  write_summary_json((fs::path(cfg.out_dir) / "summary.json").string(), hash, errors,
                     elapsed_or_zero(t0, cfg.deterministic));
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& data) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ensure_out_dir(cfg.out_dir);
  const std::string hash = run_config_hash(cfg);

  auto [train_pairs, test_pairs] = load_training_pairs(data, cfg);
  (void)test_pairs;
  SweepInputs in;
  in.train_pairs = std::move(train_pairs);
  in.test_cases = load_cases(data, true);
  in.eval = cfg.eval_options();
  in.intra_cases = cfg.eval.intra_cases;

  SweepGrid grid;
  grid.batch_sizes = cfg.sweep.batch_sizes;
  grid.l1_weights = cfg.sweep.l1_weights;

  int workers = cfg.deterministic ? 1 : env_thread_cap();
  if (workers == 0) workers = 1;
  SweepReport report = sweep(grid, cfg.train, in, workers);
  write_sweep_csv_file((fs::path(cfg.out_dir) / "sweep.csv").string(), report, hash);

  std::vector<std::pair<std::string, double>> errors;
  for (const SweepRow& r : report.rows) {
    const std::string key = r.axis + "=" +
                            (r.axis == "batch_size"
                                 ? std::to_string(static_cast<int>(r.value))
                                 : std::to_string(r.value));
    if (r.ok) {
      errors.emplace_back(key + "/inter", r.inter_error);
      errors.emplace_back(key + "/intra", r.intra_error);
    } else {
      std::cerr << "sweep point " << key << " failed: " << r.error << "\n";
    }
  }
  write_summary_json((fs::path(cfg.out_dir) / "summary.json").string(), hash, errors,
                     elapsed_or_zero(t0, cfg.deterministic));
  if (report.trend_note) std::cout << "trend: " << *report.trend_note << "\n";
  std::cout << "sweep rows: " << report.rows.size() << "; csv at "
            << (fs::path(cfg.out_dir) / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& ckpt_prefix, const std::string& input,
              const std::string& output, const std::string& png_out, bool noise,
              std::uint64_t noise_seed) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_prefix);
  ckpt.g.set_mode(Mode::eval);
  const int size = ckpt.meta.net_config.image_size;
  Tensor rgb = oxt_load(input);
  if (rgb.ndim() != 3 || rgb.dims[0] != 3)
    throw ShapeError("infer input must be 3xHxW in [0,1], got " + dims_to_string(rgb.dims));
  if (rgb.dims[1] != size || rgb.dims[2] != size) rgb = resize(rgb, size, size, cfg.geom.interp);
  Tensor x = normalize_unit(rgb);
  Tensor batch({1, 3, size, size});
  std::copy(x.data.begin(), x.data.end(), batch.data.begin());
  Rng rng(Rng::derive(noise_seed, 0xEA));
  Tensor pred = denormalize_unit(ckpt.g.infer(batch, noise, rng));
  Tensor pred0({3, size, size});
  std::copy_n(pred.data.begin(), pred0.data.size(), pred0.data.begin());
  if (!output.empty()) oxt_save(output, pred0);
  if (!png_out.empty())
    png_write(png_out, tensor_to_png(take_channels(pred0, 0, 1)),
              {{"config_hash", ckpt.meta.config_hash}});
  std::cout << "prediction written\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double eps, double tol) {
  auto results = gradcheck::run_all(seed, eps, tol);
  for (const auto& r : results)
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.op << " max_rel_err=" << r.max_rel_err
              << "\n";
  const bool ok = gradcheck::all_passed(results);
  std::cout << (ok ? "gradcheck: all ops within tolerance\n"
                   : "gradcheck: tolerance exceeded\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional-GAN toolkit for RGB -> tissue-oxygen-saturation translation"};
  app.require_subcommand(1);
  app.fallthrough();  // parent options may follow the subcommand

  CommonOpts common;
  app.add_option("--config", common.config_path, "JSON run config; flags override its values");
  auto* out_opt = app.add_option("--out", common.out_dir, "output directory");
  auto* det_flag = app.add_flag("--deterministic", "reference mode: single-threaded, no timestamps");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset + manifest");
  int n_cases = -1, height = -1, width = -1, smooth = -1;
  std::uint64_t synth_seed = 0;
  bool synth_seed_set = false, force = false;
  double ratio = -1.0;
  std::string synth_out;
  synth->add_option("--n-cases", n_cases, "number of cases");
  synth->add_option("--seed", synth_seed, "dataset seed")->each([&](const std::string&) {
    synth_seed_set = true;
  });
  synth->add_option("--ratio", ratio, "train split ratio (default 0.752)");
  synth->add_option("--height", height, "case image height");
  synth->add_option("--width", width, "case image width");
  synth->add_option("--field-smoothness", smooth, "gaussian blobs per saturation map");
  synth->add_option("--out-data", synth_out, "dataset directory (defaults to <out>/data)");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  // augment
  auto* augment = app.add_subcommand("augment", "materialize the augmented pair set");
  std::string data_path;
  std::string augment_out;
  augment->add_option("--data", data_path, "cases manifest")->required();
  augment->add_option("--out-data", augment_out, "pairs directory (defaults to <out>/augmented)");
  augment->add_flag("--force", force, "overwrite a non-empty output directory");

  // train
  auto* train = app.add_subcommand("train", "train the generator/discriminator pair");
  int max_iterations = -1, batch_size = -1, image_size = -1, base_filters = -1, log_every = -1;
  double lambda_l1 = -1.0;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false, noise_off = false;
  train->add_option("--data", data_path, "cases or pairs manifest")->required();
  train->add_option("--max-iterations", max_iterations, "minibatch steps");
  train->add_option("--batch-size", batch_size, "minibatch size");
  train->add_option("--lambda", lambda_l1, "L1 weight");
  train->add_option("--log-every", log_every, "loss record interval");
  train->add_option("--seed", train_seed, "training seed")->each([&](const std::string&) {
    train_seed_set = true;
  });
  train->add_option("--image-size", image_size, "network input size");
  train->add_option("--base-filters", base_filters, "first-level filter count");
  train->add_flag("--no-noise", noise_off, "disable the dropout noise source");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ckpt_prefix, protocol = "all";
  bool allow_mismatch = false, perfect_oracle = false;
  int infer_batch = -1, qualitative_n = 0;
  eval->add_option("--data", data_path, "cases manifest")->required();
  eval->add_option("--checkpoint", ckpt_prefix, "checkpoint prefix (no extension)")->required();
  eval->add_option("--protocol", protocol, "intercase|intracase|full|all")
      ->check(CLI::IsMember({"intercase", "intracase", "full", "all"}));
  eval->add_option("--infer-batch", infer_batch, "inference batch size");
  eval->add_option("--qualitative", qualitative_n, "emit PNG triptychs for N test cases");
  eval->add_flag("--allow-mismatch", allow_mismatch,
                 "accept a checkpoint whose network config differs");
  eval->add_flag("--perfect-oracle", perfect_oracle,
                 "self-check stub that echoes the ground truth");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "train/evaluate across a parameter grid");
  std::vector<int> sweep_batches;
  std::vector<float> sweep_lambdas;
  sweep_cmd->add_option("--data", data_path, "cases manifest")->required();
  sweep_cmd->add_option("--batch-sizes", sweep_batches, "batch-size axis values");
  sweep_cmd->add_option("--l1-weights", sweep_lambdas, "L1-weight axis values");
  sweep_cmd->add_option("--max-iterations", max_iterations, "steps per grid point");

  // infer
  auto* infer = app.add_subcommand("infer", "run the generator on one RGB image");
  std::string infer_input, infer_output, infer_png;
  bool infer_noise = false;
  std::uint64_t infer_seed = 0;
  infer->add_option("--checkpoint", ckpt_prefix, "checkpoint prefix")->required();
  infer->add_option("--input", infer_input, "3xHxW OXT1 in [0,1]")->required();
  infer->add_option("--output", infer_output, "prediction OXT1 path");
  infer->add_option("--png", infer_png, "prediction PNG path");
  infer->add_flag("--noise", infer_noise, "enable test-time dropout noise");
  infer->add_option("--seed", infer_seed, "noise seed");

  // gradcheck
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  std::uint64_t gc_seed = 20240901;
  double gc_eps = 1e-4, gc_tol = 1e-3;
  gradcheck_cmd->add_option("--seed", gc_seed, "probe seed");
  gradcheck_cmd->add_option("--eps", gc_eps, "finite-difference step");
  gradcheck_cmd->add_option("--tol", gc_tol, "max relative error bound");

  CLI11_PARSE(app, argc, argv);
  common.out_set = out_opt->count() > 0;
  common.det_set = det_flag->count() > 0;

  try {
    RunConfig cfg = resolve_config(common);
    // flag overrides ride on top of the config file
    if (n_cases > 0) cfg.data.n_cases = n_cases;
    if (ratio > 0) cfg.data.train_ratio = ratio;
    if (height > 0) cfg.data.synth.height = height;
    if (width > 0) cfg.data.synth.width = width;
    if (smooth > 0) cfg.data.synth.field_smoothness = smooth;
    if (synth_seed_set) cfg.data.synth.seed = synth_seed;
    if (max_iterations >= 0) cfg.train.max_iterations = max_iterations;
    if (batch_size > 0) cfg.train.batch_size = batch_size;
    if (lambda_l1 >= 0) cfg.train.lambda_l1 = static_cast<float>(lambda_l1);
    if (log_every > 0) cfg.train.log_every = log_every;
    if (train_seed_set) cfg.train.seed = train_seed;
    if (image_size > 0) {
      cfg.train.network.image_size = image_size;
      cfg.geom.net_size = image_size;
    }
    if (base_filters > 0) cfg.train.network.base_filters = base_filters;
    if (noise_off) cfg.train.noise_on = false;
    if (infer_batch > 0) cfg.eval.infer_batch = infer_batch;
    if (!sweep_batches.empty()) cfg.sweep.batch_sizes = sweep_batches;
    if (!sweep_lambdas.empty()) cfg.sweep.l1_weights = sweep_lambdas;

    if (synth->parsed()) {
      const std::string dir =
          synth_out.empty() ? (fs::path(cfg.out_dir) / "data").string() : synth_out;
      return cmd_synth(cfg, dir, force);
    }
    if (augment->parsed()) {
      const std::string dir =
          augment_out.empty() ? (fs::path(cfg.out_dir) / "augmented").string() : augment_out;
      return cmd_augment(cfg, data_path, dir, force);
    }
    if (train->parsed()) return cmd_train(cfg, data_path);
    if (eval->parsed())
      return cmd_eval(cfg, !common.config_path.empty(), data_path, ckpt_prefix, protocol,
                      allow_mismatch, perfect_oracle, qualitative_n);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, data_path);
    if (infer->parsed())
      return cmd_infer(cfg, ckpt_prefix, infer_input, infer_output, infer_png, infer_noise,
                       infer_seed);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_eps, gc_tol);
    std::cerr << "error: cli: no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 4;
  } catch (const GeometryError& e) {
    std::cerr << "error: geometry: " << e.what() << "\n";
    return 5;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: argument: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
