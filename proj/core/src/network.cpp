#include "oxygan/network.hpp"

#include <cmath>
#include <fstream>

#include "json_detail.hpp"
#include "oxygan/oxt.hpp"

namespace oxygan {

namespace {

constexpr float kNormEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
constexpr float kInitStd = 0.02f;
constexpr float kLeakySlope = 0.2f;

int log2_int(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

ConvParam make_conv(const std::string& name, std::vector<int> wdims, bool bias, int bias_ch,
                    int stride, int pad, Rng& rng) {
  ConvParam p;
  p.name = name;
  p.w = Tensor::randn(std::move(wdims), rng, 0.0f, kInitStd);
  if (bias) p.b = Tensor::zeros({bias_ch});
  p.stride = stride;
  p.pad = pad;
  return p;
}

NormParam make_norm(const std::string& name, NormKind kind, int channels, Rng& rng) {
  NormParam n;
  n.name = name;
  n.kind = kind;
  n.gamma = Tensor::randn({channels}, rng, 1.0f, kInitStd);
  n.beta = Tensor::zeros({channels});
  n.running_mean = Tensor::zeros({channels});
  n.running_var = Tensor::full({channels}, 1.0f);
  return n;
}

Tape::Id apply_norm(Tape& tape, NormParam& norm, Tape::Id gamma, Tape::Id beta, Tape::Id h,
                    bool training) {
  if (norm.kind == NormKind::batch)
    return tape.batch_norm2d(h, gamma, beta, &norm.running_mean, &norm.running_var,
                             kBnMomentum, kNormEps, training);
  return tape.instance_norm2d(h, gamma, beta, kNormEps);
}

void push_conv_tensors(std::vector<NamedTensor>& out, ConvParam& c) {
  out.push_back({c.name + ".w", &c.w, true});
  if (c.has_bias()) out.push_back({c.name + ".b", &c.b, true});
}

void push_norm_tensors(std::vector<NamedTensor>& out, NormParam& n) {
  out.push_back({n.name + ".gamma", &n.gamma, true});
  out.push_back({n.name + ".beta", &n.beta, true});
  if (n.kind == NormKind::batch) {
    out.push_back({n.name + ".running_mean", &n.running_mean, false});
    out.push_back({n.name + ".running_var", &n.running_var, false});
  }
}

}  // namespace

void NetworkConfig::validate() const {
  if (!is_pow2(image_size) || image_size < 16)
    throw ConfigError("network.image_size must be a power of two >= 16, got " +
                      std::to_string(image_size));
  if (in_channels < 1 || out_channels < 1)
    throw ConfigError("network channel counts must be positive");
  if (base_filters < 1) throw ConfigError("network.base_filters must be positive");
  const int max_levels = log2_int(image_size);
  if (g_levels < 0 || g_levels > max_levels)
    throw ConfigError("network.g_levels must be in [1, log2(image_size)] = [1, " +
                      std::to_string(max_levels) + "], got " + std::to_string(g_levels));
  if (d_layers < 1) throw ConfigError("network.d_layers must be >= 1");
  if (image_size < 3 * (1 << d_layers))
    throw ConfigError("network.d_layers = " + std::to_string(d_layers) +
                      " leaves no patch output at image_size " + std::to_string(image_size));
  if (dropout_p < 0.0f || dropout_p >= 1.0f)
    throw ConfigError("network.dropout_p must be in [0, 1)");
}

int NetworkConfig::resolved_g_levels() const {
  return g_levels == 0 ? log2_int(image_size) : g_levels;
}

int discriminator_logit_side(int image_size, int d_layers) {
  return image_size / (1 << d_layers) - 2;
}

UNetGenerator UNetGenerator::build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  UNetGenerator g;
  g.cfg_ = cfg;
  Rng rng(Rng::derive(seed, 0xE1));
  const int L = cfg.resolved_g_levels();
  const int cap = cfg.base_filters * 8;
  auto filters = [&](int level) {  // 1-based
    const long f = static_cast<long>(cfg.base_filters) << (level - 1);
    return static_cast<int>(std::min<long>(f, cap));
  };
  g.levels_.resize(static_cast<std::size_t>(L));
  for (int i = 1; i <= L; ++i) {
    Level& lv = g.levels_[static_cast<std::size_t>(i - 1)];
    const std::string base = "g.lvl" + std::to_string(i - 1);
    const int in_ch = i == 1 ? cfg.in_channels : filters(i - 1);
    const int out_ch = filters(i);
    const bool down_norm = i > 1 && i < L;
    lv.down = make_conv(base + ".down", {out_ch, in_ch, 4, 4}, !down_norm, out_ch, 2, 1, rng);
    if (down_norm) lv.down_norm = make_norm(base + ".down_norm", cfg.norm_kind, out_ch, rng);

    const int up_in = i == L ? filters(L) : 2 * filters(i);
    const int up_out = i == 1 ? cfg.out_channels : filters(i - 1);
    const bool up_norm = i > 1;
    lv.up = make_conv(base + ".up", {up_in, up_out, 4, 4}, !up_norm, up_out, 2, 1, rng);
    if (up_norm) lv.up_norm = make_norm(base + ".up_norm", cfg.norm_kind, up_out, rng);
    lv.dropout = cfg.dropout_p > 0.0f && i >= 2 && i >= L - 2;
  }
  return g;
}

std::vector<NamedTensor> UNetGenerator::named_tensors() {
  std::vector<NamedTensor> out;
  for (Level& lv : levels_) {
    push_conv_tensors(out, lv.down);
    if (lv.down_norm) push_norm_tensors(out, *lv.down_norm);
    push_conv_tensors(out, lv.up);
    if (lv.up_norm) push_norm_tensors(out, *lv.up_norm);
  }
  return out;
}

std::vector<NamedTensor> UNetGenerator::trainable_params() {
  std::vector<NamedTensor> out = named_tensors();
  std::erase_if(out, [](const NamedTensor& t) { return !t.trainable; });
  return out;
}

std::int64_t UNetGenerator::parameter_count() const {
  std::int64_t n = 0;
  for (const Level& lv : levels_) {
    n += lv.down.w.numel() + static_cast<std::int64_t>(lv.down.b.data.size());
    n += lv.up.w.numel() + static_cast<std::int64_t>(lv.up.b.data.size());
    if (lv.down_norm) n += lv.down_norm->gamma.numel() + lv.down_norm->beta.numel();
    if (lv.up_norm) n += lv.up_norm->gamma.numel() + lv.up_norm->beta.numel();
  }
  return n;
}

UNetGenerator::Binding UNetGenerator::bind(Tape& tape, bool requires_grad) const {
  Binding b;
  b.levels.resize(levels_.size());
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const Level& lv = levels_[i];
    Binding::Level& bl = b.levels[i];
    bl.down_w = tape.leaf(lv.down.w, requires_grad);
    if (lv.down.has_bias()) bl.down_b = tape.leaf(lv.down.b, requires_grad);
    if (lv.down_norm) {
      bl.down_gamma = tape.leaf(lv.down_norm->gamma, requires_grad);
      bl.down_beta = tape.leaf(lv.down_norm->beta, requires_grad);
    }
    bl.up_w = tape.leaf(lv.up.w, requires_grad);
    if (lv.up.has_bias()) bl.up_b = tape.leaf(lv.up.b, requires_grad);
    if (lv.up_norm) {
      bl.up_gamma = tape.leaf(lv.up_norm->gamma, requires_grad);
      bl.up_beta = tape.leaf(lv.up_norm->beta, requires_grad);
    }
  }
  return b;
}

std::vector<Tensor> UNetGenerator::collect_grads(const Tape& tape, const Binding& b) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const Level& lv = levels_[i];
    const Binding::Level& bl = b.levels[i];
    out.push_back(tape.grad(bl.down_w));
    if (lv.down.has_bias()) out.push_back(tape.grad(bl.down_b));
    if (lv.down_norm) {
      out.push_back(tape.grad(bl.down_gamma));
      out.push_back(tape.grad(bl.down_beta));
    }
    out.push_back(tape.grad(bl.up_w));
    if (lv.up.has_bias()) out.push_back(tape.grad(bl.up_b));
    if (lv.up_norm) {
      out.push_back(tape.grad(bl.up_gamma));
      out.push_back(tape.grad(bl.up_beta));
    }
  }
  return out;
}

Tape::Id UNetGenerator::forward(Tape& tape, const Binding& binding, Tape::Id x, bool noise_on,
                                Rng& rng) {
  const auto& xd = tape.value(x).dims;
  if (xd.size() != 4 || xd[1] != cfg_.in_channels || xd[2] != cfg_.image_size ||
      xd[3] != cfg_.image_size)
    throw ShapeError("generator_forward: input " + dims_to_string(xd) + " does not match " +
                     dims_to_string({-1, cfg_.in_channels, cfg_.image_size, cfg_.image_size}));
  const bool training = mode_ == Mode::train;
  const int L = static_cast<int>(levels_.size());
  std::vector<Tape::Id> skips(static_cast<std::size_t>(L) + 1);
  skips[0] = x;
  Tape::Id cur = x;
  for (int i = 1; i <= L; ++i) {
    Level& lv = levels_[static_cast<std::size_t>(i - 1)];
    const Binding::Level& bl = binding.levels[static_cast<std::size_t>(i - 1)];
    Tape::Id h = i == 1 ? cur : tape.leaky_relu(cur, kLeakySlope);
    std::optional<Tape::Id> bias =
        lv.down.has_bias() ? std::optional<Tape::Id>(bl.down_b) : std::nullopt;
    h = tape.conv2d(h, bl.down_w, bias, lv.down.stride, lv.down.pad);
    if (lv.down_norm) h = apply_norm(tape, *lv.down_norm, bl.down_gamma, bl.down_beta, h, training);
    skips[static_cast<std::size_t>(i)] = h;
    cur = h;
  }
  for (int i = L; i >= 1; --i) {
    Level& lv = levels_[static_cast<std::size_t>(i - 1)];
    const Binding::Level& bl = binding.levels[static_cast<std::size_t>(i - 1)];
    Tape::Id u = tape.relu(cur);
    std::optional<Tape::Id> bias =
        lv.up.has_bias() ? std::optional<Tape::Id>(bl.up_b) : std::nullopt;
    u = tape.conv_transpose2d(u, bl.up_w, bias, lv.up.stride, lv.up.pad);
    if (lv.up_norm) u = apply_norm(tape, *lv.up_norm, bl.up_gamma, bl.up_beta, u, training);
    if (lv.dropout) u = tape.dropout(u, cfg_.dropout_p, rng, noise_on);
    if (i > 1) u = tape.concat_channels(skips[static_cast<std::size_t>(i - 1)], u);
    cur = u;
  }
  return tape.tanh_act(cur);
}

Tensor UNetGenerator::infer(const Tensor& x, bool noise_on, Rng& rng) {
  Tape tape(false);
  Binding b = bind(tape, false);
  return tape.value(forward(tape, b, tape.leaf(x), noise_on, rng));
}

PatchDiscriminator PatchDiscriminator::build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PatchDiscriminator d;
  d.cfg_ = cfg;
  Rng rng(Rng::derive(seed, 0xD2));
  const int cap = cfg.base_filters * 8;
  auto filters = [&](int j) {
    const long f = static_cast<long>(cfg.base_filters) << j;
    return static_cast<int>(std::min<long>(f, cap));
  };
  int in_ch = cfg.unconditional_d ? cfg.out_channels : cfg.in_channels + cfg.out_channels;
  for (int j = 0; j < cfg.d_layers; ++j) {
    Block blk;
    const std::string name = "d.blk" + std::to_string(j);
    const bool norm = j > 0;
    blk.conv = make_conv(name + ".conv", {filters(j), in_ch, 4, 4}, !norm, filters(j), 2, 1, rng);
    if (norm) blk.norm = make_norm(name + ".norm", cfg.norm_kind, filters(j), rng);
    blk.leaky = true;
    d.blocks_.push_back(std::move(blk));
    in_ch = filters(j);
  }
  {
    Block blk;
    const std::string name = "d.blk" + std::to_string(cfg.d_layers);
    blk.conv =
        make_conv(name + ".conv", {filters(cfg.d_layers), in_ch, 4, 4}, false, 0, 1, 1, rng);
    blk.norm = make_norm(name + ".norm", cfg.norm_kind, filters(cfg.d_layers), rng);
    blk.leaky = true;
    d.blocks_.push_back(std::move(blk));
    in_ch = filters(cfg.d_layers);
  }
  {
    Block blk;
    blk.conv = make_conv("d.out.conv", {1, in_ch, 4, 4}, true, 1, 1, 1, rng);
    blk.leaky = false;
    d.blocks_.push_back(std::move(blk));
  }
  return d;
}

std::vector<NamedTensor> PatchDiscriminator::named_tensors() {
  std::vector<NamedTensor> out;
  for (Block& blk : blocks_) {
    push_conv_tensors(out, blk.conv);
    if (blk.norm) push_norm_tensors(out, *blk.norm);
  }
  return out;
}

std::vector<NamedTensor> PatchDiscriminator::trainable_params() {
  std::vector<NamedTensor> out = named_tensors();
  std::erase_if(out, [](const NamedTensor& t) { return !t.trainable; });
  return out;
}

std::int64_t PatchDiscriminator::parameter_count() const {
  std::int64_t n = 0;
  for (const Block& blk : blocks_) {
    n += blk.conv.w.numel() + static_cast<std::int64_t>(blk.conv.b.data.size());
    if (blk.norm) n += blk.norm->gamma.numel() + blk.norm->beta.numel();
  }
  return n;
}

PatchDiscriminator::Binding PatchDiscriminator::bind(Tape& tape, bool requires_grad) const {
  Binding b;
  b.blocks.resize(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    Binding::Block& bb = b.blocks[i];
    bb.w = tape.leaf(blk.conv.w, requires_grad);
    if (blk.conv.has_bias()) bb.b = tape.leaf(blk.conv.b, requires_grad);
    if (blk.norm) {
      bb.gamma = tape.leaf(blk.norm->gamma, requires_grad);
      bb.beta = tape.leaf(blk.norm->beta, requires_grad);
    }
  }
  return b;
}

std::vector<Tensor> PatchDiscriminator::collect_grads(const Tape& tape,
                                                      const Binding& b) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    const Binding::Block& bb = b.blocks[i];
    out.push_back(tape.grad(bb.w));
    if (blk.conv.has_bias()) out.push_back(tape.grad(bb.b));
    if (blk.norm) {
      out.push_back(tape.grad(bb.gamma));
      out.push_back(tape.grad(bb.beta));
    }
  }
  return out;
}

Tape::Id PatchDiscriminator::forward(Tape& tape, const Binding& binding, Tape::Id x,
                                     Tape::Id y) {
  const auto& xd = tape.value(x).dims;
  const auto& yd = tape.value(y).dims;
  if (xd.size() != 4 || yd.size() != 4 || xd[0] != yd[0] || xd[2] != yd[2] || xd[3] != yd[3])
    throw_shape_mismatch("discriminator_forward", xd, yd);
  if (yd[2] != cfg_.image_size || yd[3] != cfg_.image_size)
    throw ShapeError("discriminator_forward: spatial " + dims_to_string(yd) +
                     " does not match image_size " + std::to_string(cfg_.image_size));
  const bool training = mode_ == Mode::train;
  Tape::Id cur = cfg_.unconditional_d ? y : tape.concat_channels(x, y);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const Binding::Block& bb = binding.blocks[i];
    std::optional<Tape::Id> bias =
        blk.conv.has_bias() ? std::optional<Tape::Id>(bb.b) : std::nullopt;
    cur = tape.conv2d(cur, bb.w, bias, blk.conv.stride, blk.conv.pad);
    if (blk.norm) cur = apply_norm(tape, *blk.norm, bb.gamma, bb.beta, cur, training);
    if (blk.leaky) cur = tape.leaky_relu(cur, kLeakySlope);
  }
  return cur;
}

namespace {

void append_named(std::ofstream& blob, nlohmann::json& offsets,
                  const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  for (const NamedTensor& nt : tensors) {
    offsets[prefix + nt.name] = static_cast<std::int64_t>(blob.tellp());
    oxt_write(blob, *nt.tensor);
  }
}

void restore_named(std::ifstream& blob, const nlohmann::json& offsets,
                   const std::vector<NamedTensor>& tensors, const std::string& prefix,
                   const std::string& path) {
  for (const NamedTensor& nt : tensors) {
    const std::string key = prefix + nt.name;
    if (!offsets.contains(key)) throw IoError("checkpoint " + path + ": missing tensor " + key);
    blob.seekg(offsets.at(key).get<std::int64_t>());
    Tensor t = oxt_read(blob);
    if (t.dims != nt.tensor->dims)
      throw IoError("checkpoint " + path + ": tensor " + key + " has shape " +
                    dims_to_string(t.dims) + ", expected " + dims_to_string(nt.tensor->dims));
    *nt.tensor = std::move(t);
  }
}

}  // namespace

void save_checkpoint(const std::string& prefix, UNetGenerator& g, PatchDiscriminator* d,
                     const CheckpointMeta& meta) {
  const std::string json_path = prefix + ".json";
  const std::string blob_path = prefix + ".blob";
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot open for writing: " + blob_path);
  nlohmann::json offsets = nlohmann::json::object();
  append_named(blob, offsets, g.named_tensors(), "G.");
  if (d) append_named(blob, offsets, d->named_tensors(), "D.");
  blob.flush();
  if (!blob) throw IoError("checkpoint blob write failed: " + blob_path);

  nlohmann::json j;
  j["format"] = "oxygan-checkpoint-v1";
  j["config_hash"] = meta.config_hash;
  j["iteration"] = meta.iteration;
  j["network"] = detail::network_config_to_json(meta.net_config);
  j["has_discriminator"] = d != nullptr;
  j["tensors"] = std::move(offsets);
  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw IoError("cannot open for writing: " + json_path);
  jf << j.dump(2) << "\n";
  if (!jf) throw IoError("checkpoint manifest write failed: " + json_path);
}

LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  const std::string json_path = prefix + ".json";
  const std::string blob_path = prefix + ".blob";
  std::ifstream jf(json_path);
  if (!jf) throw IoError("cannot open: " + json_path);
  nlohmann::json j;
  try {
    jf >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest " + json_path + ": " + e.what());
  }
  if (j.value("format", "") != "oxygan-checkpoint-v1")
    throw IoError("checkpoint " + json_path + ": unknown format");
  CheckpointMeta meta;
  meta.net_config = detail::network_config_from_json(j.at("network"));
  meta.config_hash = j.value("config_hash", "");
  meta.iteration = j.value("iteration", std::int64_t(0));

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open: " + blob_path);

  LoadedCheckpoint out{UNetGenerator::build(meta.net_config, 0), std::nullopt, meta};
  restore_named(blob, j.at("tensors"), out.g.named_tensors(), "G.", json_path);
  if (j.value("has_discriminator", false)) {
    out.d = PatchDiscriminator::build(meta.net_config, 0);
    restore_named(blob, j.at("tensors"), out.d->named_tensors(), "D.", json_path);
  }
  return out;
}

}  // namespace oxygan
