#pragma once

#include <optional>
#include <string>

#include "oxygan/tape.hpp"

namespace oxygan {

enum class NormKind { batch, instance };
enum class Mode { train, eval };

struct NetworkConfig {
  int image_size = 256;  // power of two, >= 16
  int in_channels = 3;
  int out_channels = 3;
  int base_filters = 64;
  int g_levels = 0;  // 0 resolves to log2(image_size)
  int d_layers = 3;
  NormKind norm_kind = NormKind::batch;
  float dropout_p = 0.5f;
  // The conditioning of D on the input image is switchable: the
  // objective's expansion is written over D(y) alone, so an
  // unconditional discriminator is kept available for comparison.
  bool unconditional_d = false;

  void validate() const;
  int resolved_g_levels() const;
  bool operator==(const NetworkConfig&) const = default;
};

// Closed-form PatchGAN logit-map side: d_layers stride-2 halvings, then
// two stride-1 k4p1 convs each shaving one pixel.
int discriminator_logit_side(int image_size, int d_layers);

struct ConvParam {
  std::string name;
  Tensor w;
  Tensor b;  // empty when the layer has no bias
  int stride = 1;
  int pad = 1;
  bool has_bias() const { return !b.data.empty(); }
};

struct NormParam {
  std::string name;
  NormKind kind = NormKind::batch;
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // used by batch norm only
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

// U-Net: g_levels stride-2 conv downs (filters base,2*base,...,capped at
// 8*base), mirrored stride-2 transposed-conv ups with skip concatenation,
// dropout in the three innermost decoder blocks, final tanh. No norm on
// the outermost blocks or the innermost encoder conv.
class UNetGenerator {
 public:
  struct Level {
    ConvParam down;
    std::optional<NormParam> down_norm;
    ConvParam up;
    std::optional<NormParam> up_norm;
    bool dropout = false;
  };

  struct Binding {
    struct Level {
      Tape::Id down_w = -1, down_b = -1, down_gamma = -1, down_beta = -1;
      Tape::Id up_w = -1, up_b = -1, up_gamma = -1, up_beta = -1;
    };
    std::vector<Level> levels;
  };

  static UNetGenerator build(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  // Stable declaration order; names are unique.
  std::vector<NamedTensor> named_tensors();
  std::vector<NamedTensor> trainable_params();
  std::int64_t parameter_count() const;

  Binding bind(Tape& tape, bool requires_grad) const;
  // Gradients in trainable_params() order after tape.backward().
  std::vector<Tensor> collect_grads(const Tape& tape, const Binding& binding) const;

  // z enters as dropout whenever noise_on, in train and eval mode alike.
  Tape::Id forward(Tape& tape, const Binding& binding, Tape::Id x, bool noise_on, Rng& rng);

  // Grad-free convenience path for inference/evaluation.
  Tensor infer(const Tensor& x, bool noise_on, Rng& rng);

 private:
  NetworkConfig cfg_;
  std::vector<Level> levels_;
  Mode mode_ = Mode::train;
};

// PatchGAN over concat(x, y): d_layers stride-2 conv blocks (no norm on
// the first), one stride-1 block, then a stride-1 conv to one logit
// channel. The sigmoid lives in the loss, not the network.
class PatchDiscriminator {
 public:
  struct Block {
    ConvParam conv;
    std::optional<NormParam> norm;
    bool leaky = true;
  };

  struct Binding {
    struct Block {
      Tape::Id w = -1, b = -1, gamma = -1, beta = -1;
    };
    std::vector<Block> blocks;
  };

  static PatchDiscriminator build(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  std::vector<NamedTensor> named_tensors();
  std::vector<NamedTensor> trainable_params();
  std::int64_t parameter_count() const;

  Binding bind(Tape& tape, bool requires_grad) const;
  std::vector<Tensor> collect_grads(const Tape& tape, const Binding& binding) const;

  Tape::Id forward(Tape& tape, const Binding& binding, Tape::Id x, Tape::Id y);

 private:
  NetworkConfig cfg_;
  std::vector<Block> blocks_;
  Mode mode_ = Mode::train;
};

// Checkpoints: <prefix>.json manifest mapping tensor names to byte
// offsets in <prefix>.blob, a concatenation of OXT1 records. Loading is
// bit-exact; both parameters and norm running buffers are covered.
struct CheckpointMeta {
  NetworkConfig net_config;
  std::string config_hash;
  std::int64_t iteration = 0;
};

void save_checkpoint(const std::string& prefix, UNetGenerator& g, PatchDiscriminator* d,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  UNetGenerator g;
  std::optional<PatchDiscriminator> d;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& prefix);

}  // namespace oxygan
