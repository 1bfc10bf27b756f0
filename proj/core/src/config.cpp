#include "oxygan/config.hpp"

#include <fstream>

#include "json_detail.hpp"

namespace oxygan {

namespace {

std::string interp_name(Interp i) { return i == Interp::bilinear ? "bilinear" : "nearest"; }

Interp interp_from(const std::string& s, const std::string& origin) {
  if (s == "bilinear") return Interp::bilinear;
  if (s == "nearest") return Interp::nearest;
  throw ConfigError(origin + ": geom.interp must be bilinear|nearest, got \"" + s + "\"");
}

std::string selector_name(CropSelector s) {
  switch (s) {
    case CropSelector::center: return "center";
    case CropSelector::index: return "index";
    case CropSelector::random: return "random";
  }
  throw Error("unreachable selector");
}

CropSelector selector_from(const std::string& s, const std::string& origin) {
  if (s == "center") return CropSelector::center;
  if (s == "index") return CropSelector::index;
  if (s == "random") return CropSelector::random;
  throw ConfigError(origin + ": eval.selector must be center|index|random, got \"" + s + "\"");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["network"] = detail::network_config_to_json(c.train.network);
  j["train"] = {
      {"lambda_l1", c.train.lambda_l1},
      {"batch_size", c.train.batch_size},
      {"max_iterations", c.train.max_iterations},
      {"log_every", c.train.log_every},
      {"checkpoint_every", c.train.checkpoint_every},
      {"seed", c.train.seed},
      {"noise_on", c.train.noise_on},
      {"gan_mode", c.train.gan_mode == GanMode::non_saturating ? "non_saturating" : "minmax"},
      {"lr", c.train.adam.lr},
      {"beta1", c.train.adam.beta1},
      {"beta2", c.train.adam.beta2},
      {"adam_eps", c.train.adam.eps},
  };
  j["data"] = {
      {"n_cases", c.data.n_cases},
      {"train_ratio", c.data.train_ratio},
      {"height", c.data.synth.height},
      {"width", c.data.synth.width},
      {"depth", c.data.synth.depth},
      {"field_smoothness", c.data.synth.field_smoothness},
      {"seed", c.data.synth.seed},
      {"eps_oxy", {c.data.synth.eps_oxy[0], c.data.synth.eps_oxy[1], c.data.synth.eps_oxy[2]}},
      {"eps_deoxy",
       {c.data.synth.eps_deoxy[0], c.data.synth.eps_deoxy[1], c.data.synth.eps_deoxy[2]}},
  };
  j["geom"] = {
      {"window", c.geom.window},
      {"stride", c.geom.stride},
      {"net_size", c.geom.net_size},
      {"interp", interp_name(c.geom.interp)},
  };
  j["eval"] = {
      {"noise", c.eval.noise},
      {"noise_seed", c.eval.noise_seed},
      {"infer_batch", c.eval.infer_batch},
      {"selector", selector_name(c.eval.selector)},
      {"selector_index", c.eval.selector_index},
      {"selector_seed", c.eval.selector_seed},
      {"intra_cases", c.eval.intra_cases},
  };
  j["sweep"] = {
      {"batch_sizes", c.sweep.batch_sizes},
      {"l1_weights", c.sweep.l1_weights},
  };
  j["out_dir"] = c.out_dir;
  j["deterministic"] = c.deterministic;
  return j;
}

template <typename T>
T field(const nlohmann::json& j, const std::string& section, const char* key,
        const T& fallback, const std::string& origin) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": " + section + "." + key + ": " + e.what());
  }
}

RunConfig from_json(const nlohmann::json& j, const std::string& origin) {
  RunConfig c;
  if (j.contains("network")) {
    try {
      c.train.network = detail::network_config_from_json(j.at("network"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(origin + ": network: " + e.what());
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.lambda_l1 = field(t, "train", "lambda_l1", c.train.lambda_l1, origin);
    c.train.batch_size = field(t, "train", "batch_size", c.train.batch_size, origin);
    c.train.max_iterations = field(t, "train", "max_iterations", c.train.max_iterations, origin);
    c.train.log_every = field(t, "train", "log_every", c.train.log_every, origin);
    c.train.checkpoint_every =
        field(t, "train", "checkpoint_every", c.train.checkpoint_every, origin);
    c.train.seed = field(t, "train", "seed", c.train.seed, origin);
    c.train.noise_on = field(t, "train", "noise_on", c.train.noise_on, origin);
    const std::string mode =
        field<std::string>(t, "train", "gan_mode", "non_saturating", origin);
    if (mode == "non_saturating")
      c.train.gan_mode = GanMode::non_saturating;
    else if (mode == "minmax")
      c.train.gan_mode = GanMode::minmax;
    else
      throw ConfigError(origin + ": train.gan_mode must be non_saturating|minmax");
    c.train.adam.lr = field(t, "train", "lr", c.train.adam.lr, origin);
    c.train.adam.beta1 = field(t, "train", "beta1", c.train.adam.beta1, origin);
    c.train.adam.beta2 = field(t, "train", "beta2", c.train.adam.beta2, origin);
    c.train.adam.eps = field(t, "train", "adam_eps", c.train.adam.eps, origin);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.n_cases = field(d, "data", "n_cases", c.data.n_cases, origin);
    c.data.train_ratio = field(d, "data", "train_ratio", c.data.train_ratio, origin);
    c.data.synth.height = field(d, "data", "height", c.data.synth.height, origin);
    c.data.synth.width = field(d, "data", "width", c.data.synth.width, origin);
    c.data.synth.depth = field(d, "data", "depth", c.data.synth.depth, origin);
    c.data.synth.field_smoothness =
        field(d, "data", "field_smoothness", c.data.synth.field_smoothness, origin);
    c.data.synth.seed = field(d, "data", "seed", c.data.synth.seed, origin);
    for (const char* key : {"eps_oxy", "eps_deoxy"}) {
      if (!d.contains(key)) continue;
      try {
        auto arr = d.at(key).get<std::vector<float>>();
        if (arr.size() != 3)
          throw ConfigError(origin + ": data." + key + " must have 3 entries");
        float* dst = key == std::string("eps_oxy") ? c.data.synth.eps_oxy : c.data.synth.eps_deoxy;
        std::copy(arr.begin(), arr.end(), dst);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ": data." + std::string(key) + ": " + e.what());
      }
    }
  }
  if (j.contains("geom")) {
    const auto& g = j.at("geom");
    c.geom.window = field(g, "geom", "window", c.geom.window, origin);
    c.geom.stride = field(g, "geom", "stride", c.geom.stride, origin);
    c.geom.net_size = field(g, "geom", "net_size", c.geom.net_size, origin);
    c.geom.interp =
        interp_from(field<std::string>(g, "geom", "interp", interp_name(c.geom.interp), origin),
                    origin);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.noise = field(e, "eval", "noise", c.eval.noise, origin);
    c.eval.noise_seed = field(e, "eval", "noise_seed", c.eval.noise_seed, origin);
    c.eval.infer_batch = field(e, "eval", "infer_batch", c.eval.infer_batch, origin);
    c.eval.selector = selector_from(
        field<std::string>(e, "eval", "selector", selector_name(c.eval.selector), origin),
        origin);
    c.eval.selector_index = field(e, "eval", "selector_index", c.eval.selector_index, origin);
    c.eval.selector_seed = field(e, "eval", "selector_seed", c.eval.selector_seed, origin);
    c.eval.intra_cases = field(e, "eval", "intra_cases", c.eval.intra_cases, origin);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    c.sweep.batch_sizes =
        field(s, "sweep", "batch_sizes", c.sweep.batch_sizes, origin);
    c.sweep.l1_weights = field(s, "sweep", "l1_weights", c.sweep.l1_weights, origin);
  }
  c.out_dir = field(j, "", "out_dir", c.out_dir, origin);
  c.deterministic = field(j, "", "deterministic", c.deterministic, origin);
  return c;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  data.synth.validate();
  if (data.n_cases < 2) throw ConfigError("data.n_cases must be >= 2");
  if (data.train_ratio <= 0.0 || data.train_ratio >= 1.0)
    throw ConfigError("data.train_ratio must be in (0, 1)");
  if (geom.window < 1 || geom.stride < 1) throw ConfigError("geom window/stride must be positive");
  if (geom.net_size != train.network.image_size)
    throw ConfigError("geom.net_size (" + std::to_string(geom.net_size) +
                      ") must equal network.image_size (" +
                      std::to_string(train.network.image_size) + ")");
  if (eval.infer_batch < 1) throw ConfigError("eval.infer_batch must be >= 1");
  if (eval.intra_cases < 1) throw ConfigError("eval.intra_cases must be >= 1");
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.geom = geom;
  o.noise = eval.noise;
  o.noise_seed = eval.noise_seed;
  o.infer_batch = eval.infer_batch;
  o.selector = eval.selector;
  o.selector_index = eval.selector_index;
  o.selector_seed = eval.selector_seed;
  return o;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path);
}

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return from_json(j, origin);
}

std::string run_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << run_config_json(cfg);
  if (!f) throw IoError("config write failed: " + path);
}

std::string run_config_hash(const RunConfig& cfg) {
  // hash the semantic config only: where outputs land must not change
  // artifact identity, or repeated runs could never be byte-identical
  nlohmann::json j = to_json(cfg);
  j.erase("out_dir");
  return hash_hex(fnv1a64(j.dump()));
}

}  // namespace oxygan
