#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>

#include "oxygan/datapipe.hpp"
#include "oxygan/network.hpp"

namespace oxygan {

// Reference results reported for the original in-vivo dataset; they are
// not reproducible without that data and are documentation, never test
// targets: best inter/intra-case error at L1 weight 400 and batch 56,
// and the averaged full-test mean error.
inline constexpr float kReferenceBestInterError = 0.0766f;
inline constexpr float kReferenceBestIntraError = 0.0841f;
inline constexpr float kReferenceFullTestError = 0.1454f;

enum class EvalProtocol { intercase, intracase, full };
enum class CropSelector { center, index, random };

struct EvalOptions {
  DataGeometry geom;
  bool noise = false;  // deterministic evaluation unless asked otherwise
  std::uint64_t noise_seed = 0;
  int infer_batch = 16;  // throughput knob, never changes results
  CropSelector selector = CropSelector::center;
  int selector_index = 0;
  std::uint64_t selector_seed = 0;
};

struct EvalResult {
  std::string case_id;
  int n_crops = 0;
  float mean_error = 0.0f;
  EvalProtocol protocol = EvalProtocol::intercase;
};

struct EvalAggregate {
  std::vector<EvalResult> per_case;
  float aggregate = 0.0f;
};

// mean |pred - truth| over pixels; multi-channel inputs are reduced to
// channel 0 first (the target's channels are identical by construction).
// Both sides must already be on the denormalized [0,1] scale.
float mean_intensity_error(const Tensor& pred, const Tensor& truth);

struct CaseData {
  std::string case_id;
  Tensor rgb;   // 3xHxW in [0,1]
  Tensor sto2;  // 1xHxW in [0,1]
};

std::vector<CaseData> load_cases(const std::string& manifest_path, bool test_split);

// Maps a batch of normalized pairs to stacked denormalized [0,1]
// predictions [N,3,S,S]; lets the harness run a generator or an oracle.
using Predictor = std::function<Tensor(const std::vector<const SamplePair*>&)>;

Predictor generator_predictor(UNetGenerator& g, const EvalOptions& opts);
// Echoes each pair's ground truth; eval against it must score 0.
Predictor perfect_oracle_predictor();

EvalAggregate eval_intercase(const Predictor& predict, const std::vector<CaseData>& cases,
                             const EvalOptions& opts);
EvalResult eval_intracase(const Predictor& predict, const CaseData& c, const EvalOptions& opts);
EvalAggregate eval_full(const Predictor& predict, const std::vector<CaseData>& cases,
                        const EvalOptions& opts);

struct SweepGrid {
  std::vector<int> batch_sizes;
  std::vector<float> l1_weights;
};

struct SweepRow {
  std::string axis;  // "batch_size" | "l1_weight"
  float value = 0;
  float inter_error = 0;
  float intra_error = 0;
  bool ok = false;
  std::string error;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::optional<std::string> trend_note;
};

struct SweepInputs {
  std::vector<SamplePair> train_pairs;
  std::vector<CaseData> test_cases;
  EvalOptions eval;
  int intra_cases = 1;  // how many test cases the intra column averages
};

// Trains one fresh model per grid point (seed offset per point),
// evaluates inter- and intra-case, and keeps going past per-point
// failures. worker_cap > 1 runs points on that many threads; output
// order stays the grid order either way.
SweepReport sweep(const SweepGrid& grid, const TrainConfig& base, const SweepInputs& in,
                  int worker_cap = 1);

void write_sweep_csv(std::ostream& os, const SweepReport& report,
                     const std::string& config_hash);
void write_sweep_csv_file(const std::string& path, const SweepReport& report,
                          const std::string& config_hash);

inline constexpr int kQualitativeGutter = 4;

// input | real | predicted | abs-difference panels, 8-bit PNG, laid out
// with kQualitativeGutter white columns between panels. Difference pixels
// encode round(255*|pred-truth|).
void emit_qualitative(const Tensor& x_rgb, const Tensor& truth_sto2, const Tensor& pred_sto2,
                      const std::string& path,
                      const std::map<std::string, std::string>& texts = {});

void write_summary_json(const std::string& path, const std::string& config_hash,
                        const std::vector<std::pair<std::string, double>>& errors,
                        double runtime_seconds);

}  // namespace oxygan
