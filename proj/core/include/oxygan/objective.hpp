#pragma once

#include <functional>
#include <iosfwd>

#include "oxygan/adam.hpp"
#include "oxygan/network.hpp"

namespace oxygan {

// Aligned input/target pair, both 3xHxW and normalized to [-1, 1]; the
// target's three channels are identical copies of the mono map.
struct SamplePair {
  Tensor x;
  Tensor y;
  std::string case_id;
  int crop_index = 0;
};

enum class GanMode {
  non_saturating,  // G minimizes -log D(fake)
  minmax           // G minimizes log(1 - D(fake)), the literal objective
};

struct TrainConfig {
  float lambda_l1 = 100.0f;
  int batch_size = 1;
  int max_iterations = 10000;
  int log_every = 100;
  int checkpoint_every = 0;  // 0 = only at the end
  std::uint64_t seed = 0;
  bool noise_on = true;
  GanMode gan_mode = GanMode::non_saturating;
  AdamConfig adam;
  NetworkConfig network;

  void validate() const;
};

struct LossRecord {
  int iteration = 0;
  float d_loss = 0;
  float g_gan_loss = 0;
  float g_l1_loss = 0;
  float g_total = 0;
};

// Single compiled instance shared by the trainer and its tests so the
// record invariant g_total == g_gan + lambda * g_l1 holds bit-for-bit
// regardless of the caller's compile flags.
float compose_g_total(float g_gan, float g_l1, float lambda_l1);

// mean |y - y_hat| over all elements
Tape::Id l1_loss(Tape& tape, Tape::Id y, Tape::Id y_hat);

// 0.5 * [BCE(real logits vs 1) + BCE(fake logits vs 0)], mean-reduced
// over batch and patch map; the halving keeps D and G scales comparable.
Tape::Id d_loss(Tape& tape, Tape::Id real_logits, Tape::Id fake_logits);

struct GLoss {
  Tape::Id total;
  Tape::Id gan;
  Tape::Id l1;
};

GLoss g_loss(Tape& tape, Tape::Id fake_logits, Tape::Id y, Tape::Id y_hat, float lambda_l1,
             GanMode mode);

// Batch tensors assembled from pairs (all pairs must share dims).
Tensor stack_inputs(const std::vector<const SamplePair*>& batch);
Tensor stack_targets(const std::vector<const SamplePair*>& batch);

// One D Adam update on a detached fake pass, then one G Adam update
// through a fresh fake pass with D frozen.
LossRecord train_step(UNetGenerator& g, PatchDiscriminator& d,
                      const std::vector<const SamplePair*>& batch, const TrainConfig& cfg,
                      AdamState& g_opt, AdamState& d_opt, Rng& rng, int iteration);

struct TrainResult {
  std::vector<LossRecord> history;
  std::int64_t iterations_run = 0;
};

using CheckpointSink =
    std::function<void(int iteration, UNetGenerator& g, PatchDiscriminator& d)>;

// Runs cfg.max_iterations minibatch steps over reshuffled epochs of
// `train_pairs`. Partial trailing batches are dropped unless the dataset
// is smaller than one batch. Emits a record every log_every iterations
// and invokes `sink` at checkpoint_every boundaries and at the end.
TrainResult train_loop(UNetGenerator& g, PatchDiscriminator& d,
                       const std::vector<SamplePair>& train_pairs, const TrainConfig& cfg,
                       const CheckpointSink& sink);

// CSV schema: iteration,d_loss,g_gan,g_l1,g_total. A config-hash comment
// line precedes the header when a hash is supplied.
void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& history,
                    const std::string& config_hash);
void write_loss_csv_file(const std::string& path, const std::vector<LossRecord>& history,
                         const std::string& config_hash);

}  // namespace oxygan
