#include "oxygan/objective.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

namespace oxygan {

void TrainConfig::validate() const {
  if (lambda_l1 < 0) throw ConfigError("train.lambda_l1 must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_iterations < 0) throw ConfigError("train.max_iterations must be >= 0");
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  network.validate();
}

float compose_g_total(float g_gan, float g_l1, float lambda_l1) {
  const float weighted = lambda_l1 * g_l1;
  return g_gan + weighted;
}

Tape::Id l1_loss(Tape& tape, Tape::Id y, Tape::Id y_hat) {
  if (!tape.value(y).same_shape(tape.value(y_hat)))
    throw_shape_mismatch("l1_loss", tape.value(y).dims, tape.value(y_hat).dims);
  return tape.mean_all(tape.abs_all(tape.sub(y, y_hat)));
}

Tape::Id d_loss(Tape& tape, Tape::Id real_logits, Tape::Id fake_logits) {
  if (!tape.value(real_logits).same_shape(tape.value(fake_logits)))
    throw_shape_mismatch("d_loss", tape.value(real_logits).dims,
                         tape.value(fake_logits).dims);
  auto real_term = tape.bce_with_logits(real_logits, 1.0f);
  auto fake_term = tape.bce_with_logits(fake_logits, 0.0f);
  return tape.scale(tape.add(real_term, fake_term), 0.5f);
}

GLoss g_loss(Tape& tape, Tape::Id fake_logits, Tape::Id y, Tape::Id y_hat, float lambda_l1,
             GanMode mode) {
  GLoss out;
  out.gan = mode == GanMode::non_saturating ? tape.bce_with_logits(fake_logits, 1.0f)
                                            : tape.log_one_minus_sigmoid_mean(fake_logits);
  out.l1 = l1_loss(tape, y, y_hat);
  out.total = tape.add(out.gan, tape.scale(out.l1, lambda_l1));
  return out;
}

namespace {

Tensor stack_field(const std::vector<const SamplePair*>& batch, bool inputs) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const Tensor& first = inputs ? batch[0]->x : batch[0]->y;
  if (first.ndim() != 3)
    throw ShapeError("SamplePair tensors must be CHW, got " + dims_to_string(first.dims));
  Tensor out({static_cast<int>(batch.size()), first.dims[0], first.dims[1], first.dims[2]});
  const std::size_t stride = first.data.size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor& t = inputs ? batch[i]->x : batch[i]->y;
    if (t.dims != first.dims) throw_shape_mismatch("batch assembly", first.dims, t.dims);
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

std::vector<Tensor*> param_ptrs(std::vector<NamedTensor> named) {
  std::vector<Tensor*> out;
  out.reserve(named.size());
  for (auto& nt : named) out.push_back(nt.tensor);
  return out;
}

std::vector<const Tensor*> grad_ptrs(const std::vector<Tensor>& grads) {
  std::vector<const Tensor*> out;
  out.reserve(grads.size());
  for (auto& g : grads) out.push_back(&g);
  return out;
}

}  // namespace

Tensor stack_inputs(const std::vector<const SamplePair*>& batch) {
  return stack_field(batch, true);
}

Tensor stack_targets(const std::vector<const SamplePair*>& batch) {
  return stack_field(batch, false);
}

LossRecord train_step(UNetGenerator& g, PatchDiscriminator& d,
                      const std::vector<const SamplePair*>& batch, const TrainConfig& cfg,
                      AdamState& g_opt, AdamState& d_opt, Rng& rng, int iteration) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const Tensor x = stack_inputs(batch);
  const Tensor y = stack_targets(batch);

  LossRecord rec;
  rec.iteration = iteration;

  // D phase: fake pass detached, G untouched
  {
    Tensor fake;
    {
      Tape fwd(false);
      auto gb = g.bind(fwd, false);
      fake = fwd.value(g.forward(fwd, gb, fwd.leaf(x), cfg.noise_on, rng));
    }
    Tape tape;
    auto db = d.bind(tape, true);
    auto xid = tape.leaf(x);
    auto real_logits = d.forward(tape, db, xid, tape.leaf(y));
    auto fake_logits = d.forward(tape, db, xid, tape.leaf(std::move(fake)));
    auto loss = d_loss(tape, real_logits, fake_logits);
    rec.d_loss = tape.value(loss).scalar_value();
    tape.backward(loss);
    auto grads = d.collect_grads(tape, db);
    adam_step(param_ptrs(d.trainable_params()), grad_ptrs(grads), d_opt);
  }

  // G phase: fresh fake pass, D participates frozen
  {
    Tape tape;
    auto gb = g.bind(tape, true);
    auto db = d.bind(tape, false);
    auto xid = tape.leaf(x);
    auto y_hat = g.forward(tape, gb, xid, cfg.noise_on, rng);
    auto fake_logits = d.forward(tape, db, xid, y_hat);
    GLoss losses = g_loss(tape, fake_logits, tape.leaf(y), y_hat, cfg.lambda_l1, cfg.gan_mode);
    rec.g_gan_loss = tape.value(losses.gan).scalar_value();
    rec.g_l1_loss = tape.value(losses.l1).scalar_value();
    rec.g_total = compose_g_total(rec.g_gan_loss, rec.g_l1_loss, cfg.lambda_l1);
    tape.backward(losses.total);
    auto grads = g.collect_grads(tape, gb);
    adam_step(param_ptrs(g.trainable_params()), grad_ptrs(grads), g_opt);
  }

  return rec;
}

TrainResult train_loop(UNetGenerator& g, PatchDiscriminator& d,
                       const std::vector<SamplePair>& train_pairs, const TrainConfig& cfg,
                       const CheckpointSink& sink) {
  cfg.validate();
  if (train_pairs.empty()) throw Error("train_loop: dataset is empty");

  AdamState g_opt = AdamState::init(cfg.adam, [&] {
    std::vector<const Tensor*> ps;
    for (auto& nt : g.trainable_params()) ps.push_back(nt.tensor);
    return ps;
  }());
  AdamState d_opt = AdamState::init(cfg.adam, [&] {
    std::vector<const Tensor*> ps;
    for (auto& nt : d.trainable_params()) ps.push_back(nt.tensor);
    return ps;
  }());

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5F));
  Rng noise_rng(Rng::derive(cfg.seed, 0xD0));

  const int n = static_cast<int>(train_pairs.size());
  const int batch = std::min(cfg.batch_size, n);
  const int batches_per_epoch = n / batch;  // partial trailing batch dropped

  TrainResult result;
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  int it = 0;
  while (it < cfg.max_iterations) {
    shuffle_rng.shuffle(order);
    for (int b = 0; b < batches_per_epoch && it < cfg.max_iterations; ++b, ++it) {
      std::vector<const SamplePair*> minibatch;
      minibatch.reserve(static_cast<std::size_t>(batch));
      for (int k = 0; k < batch; ++k)
        minibatch.push_back(&train_pairs[order[static_cast<std::size_t>(b * batch + k)]]);
      LossRecord rec = train_step(g, d, minibatch, cfg, g_opt, d_opt, noise_rng, it + 1);
      if ((it + 1) % cfg.log_every == 0) result.history.push_back(rec);
      if (sink && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
          it + 1 < cfg.max_iterations) {
        try {
          sink(it + 1, g, d);
        } catch (const std::exception& e) {
          throw IoError("checkpoint sink failed at iteration " + std::to_string(it + 1) +
                        ": " + e.what());
        }
      }
    }
  }
  result.iterations_run = it;
  if (sink) {
    try {
      sink(it, g, d);
    } catch (const std::exception& e) {
      throw IoError("checkpoint sink failed at iteration " + std::to_string(it) + ": " +
                    e.what());
    }
  }
  return result;
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& history,
                    const std::string& config_hash) {
  if (!config_hash.empty()) os << "# config_hash=" << config_hash << "\n";
  os << "iteration,d_loss,g_gan,g_l1,g_total\n";
  char buf[160];
  for (const LossRecord& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.iteration,
                  static_cast<double>(r.d_loss), static_cast<double>(r.g_gan_loss),
                  static_cast<double>(r.g_l1_loss), static_cast<double>(r.g_total));
    os << buf;
  }
}

void write_loss_csv_file(const std::string& path, const std::vector<LossRecord>& history,
                         const std::string& config_hash) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_loss_csv(f, history, config_hash);
  if (!f) throw IoError("loss csv write failed: " + path);
}

}  // namespace oxygan
