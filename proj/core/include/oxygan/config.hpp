#pragma once

#include <string>

#include "oxygan/evalkit.hpp"

namespace oxygan {

struct SynthDatasetConfig {
  SynthConfig synth;
  int n_cases = 8;
  double train_ratio = 0.752;
};

struct EvalConfig {
  bool noise = false;
  std::uint64_t noise_seed = 0;
  int infer_batch = 16;
  CropSelector selector = CropSelector::center;
  int selector_index = 0;
  std::uint64_t selector_seed = 0;
  int intra_cases = 1;
};

struct SweepConfig {
  std::vector<int> batch_sizes;
  std::vector<float> l1_weights = {50.0f, 100.0f, 200.0f, 400.0f};
};

// The whole run tree. Serializes losslessly; its hash is stamped into
// every artifact a run produces.
struct RunConfig {
  TrainConfig train;
  SynthDatasetConfig data;
  DataGeometry geom;
  EvalConfig eval;
  SweepConfig sweep;
  std::string out_dir = "out";
  bool deterministic = false;

  void validate() const;
  EvalOptions eval_options() const;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);
std::string run_config_json(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& json_text, const std::string& origin);

// FNV-1a over the canonical serialization.
std::string run_config_hash(const RunConfig& cfg);

}  // namespace oxygan
