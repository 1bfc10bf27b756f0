#include "oxygan/tape.hpp"

#include <cmath>
#include <memory>

namespace oxygan {

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
void debug_check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw Error(std::string(op) + ": non-finite value in forward output");
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace

template <typename T>
std::size_t TapeT<T>::check(Id id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw Error("tape: invalid node id " + std::to_string(id));
  return static_cast<std::size_t>(id);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::push(TensorT<T> value, bool needs,
                                     std::function<void(TapeT&)> bp) {
  Node n;
  n.value = std::move(value);
  n.needs = grad_enabled_ && needs;
  if (n.needs) n.backprop = std::move(bp);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
TensorT<T>& TapeT<T>::gradbuf(Id id) {
  Node& n = nodes_[check(id)];
  if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(n.value.dims);
  return n.grad;
}

template <typename T>
const TensorT<T>& TapeT<T>::grad(Id id) const {
  const Node& n = nodes_[check(id)];
  if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(n.value.dims);
  return n.grad;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::leaf(TensorT<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::add(Id a, Id b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (!va.same_shape(vb)) throw_shape_mismatch("add", va.dims, vb.dims);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
  debug_check_finite(out, "add");
  const bool w = needs(a) || needs(b);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, b, id](TapeT& t) {
      const auto& g = t.grad(id);
      if (t.needs(a)) {
        auto& da = t.gradbuf(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      if (t.needs(b)) {
        auto& db = t.gradbuf(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i];
      }
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sub(Id a, Id b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (!va.same_shape(vb)) throw_shape_mismatch("sub", va.dims, vb.dims);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] - vb.data[i];
  debug_check_finite(out, "sub");
  const bool w = needs(a) || needs(b);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, b, id](TapeT& t) {
      const auto& g = t.grad(id);
      if (t.needs(a)) {
        auto& da = t.gradbuf(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      if (t.needs(b)) {
        auto& db = t.gradbuf(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] -= g.data[i];
      }
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mul(Id a, Id b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (!va.same_shape(vb)) throw_shape_mismatch("mul", va.dims, vb.dims);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
  debug_check_finite(out, "mul");
  const bool w = needs(a) || needs(b);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, b, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& va2 = t.value(a);
      const auto& vb2 = t.value(b);
      if (t.needs(a)) {
        auto& da = t.gradbuf(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * vb2.data[i];
      }
      if (t.needs(b)) {
        auto& db = t.gradbuf(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i] * va2.data[i];
      }
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::scale(Id a, T c) {
  const auto& va = value(a);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * va.data[i];
  debug_check_finite(out, "scale");
  const bool w = needs(a);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, c, id](TapeT& t) {
      const auto& g = t.grad(id);
      auto& da = t.gradbuf(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sum_all(Id a) {
  const auto& va = value(a);
  double s = 0.0;  // reductions accumulate in double even in f32 mode
  for (const T& v : va.data) s += static_cast<double>(v);
  const bool w = needs(a);
  Id id = push(TensorT<T>::scalar(static_cast<T>(s)), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, id](TapeT& t) {
      const T g = t.grad(id).data[0];
      auto& da = t.gradbuf(a);
      for (auto& v : da.data) v += g;
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mean_all(Id a) {
  const auto& va = value(a);
  const T inv = T(1) / static_cast<T>(va.numel());
  double s = 0.0;
  for (const T& v : va.data) s += static_cast<double>(v);
  const bool w = needs(a);
  Id id = push(TensorT<T>::scalar(static_cast<T>(s / static_cast<double>(va.numel()))), w,
               nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, id, inv](TapeT& t) {
      const T g = t.grad(id).data[0] * inv;
      auto& da = t.gradbuf(a);
      for (auto& v : da.data) v += g;
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::abs_all(Id a) {
  const auto& va = value(a);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::abs(va.data[i]);
  const bool w = needs(a);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& x = t.value(a);
      auto& da = t.gradbuf(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        // subgradient at 0 defined as 0
        const T s = x.data[i] > T(0) ? T(1) : (x.data[i] < T(0) ? T(-1) : T(0));
        da.data[i] += g.data[i] * s;
      }
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::square(Id a) {
  const auto& va = value(a);
  TensorT<T> out(va.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * va.data[i];
  debug_check_finite(out, "square");
  const bool w = needs(a);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& x = t.value(a);
      auto& da = t.gradbuf(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        da.data[i] += T(2) * x.data[i] * g.data[i];
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv2d(Id input, Id weight, std::optional<Id> bias,
                                       int stride, int padding) {
  const auto& x = value(input);
  const auto& wv = value(weight);
  const TensorT<T>* b = bias ? &value(*bias) : nullptr;
  TensorT<T> out = kern::conv2d_fwd(x, wv, b, stride, padding);
  debug_check_finite(out, "conv2d");
  const bool w = needs(input) || needs(weight) || (bias && needs(*bias));
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, weight, bias, stride, padding, id](TapeT& t) {
      const auto& g = t.grad(id);
      TensorT<T>* din = t.needs(input) ? &t.gradbuf(input) : nullptr;
      TensorT<T>* dw = t.needs(weight) ? &t.gradbuf(weight) : nullptr;
      TensorT<T>* db = (bias && t.needs(*bias)) ? &t.gradbuf(*bias) : nullptr;
      kern::conv2d_bwd(t.value(input), t.value(weight), g, stride, padding, din, dw, db);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv_transpose2d(Id input, Id weight, std::optional<Id> bias,
                                                 int stride, int padding) {
  const auto& x = value(input);
  const auto& wv = value(weight);
  const TensorT<T>* b = bias ? &value(*bias) : nullptr;
  TensorT<T> out = kern::tconv2d_fwd(x, wv, b, stride, padding);
  debug_check_finite(out, "conv_transpose2d");
  const bool w = needs(input) || needs(weight) || (bias && needs(*bias));
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, weight, bias, stride, padding, id](TapeT& t) {
      const auto& g = t.grad(id);
      TensorT<T>* din = t.needs(input) ? &t.gradbuf(input) : nullptr;
      TensorT<T>* dw = t.needs(weight) ? &t.gradbuf(weight) : nullptr;
      TensorT<T>* db = (bias && t.needs(*bias)) ? &t.gradbuf(*bias) : nullptr;
      kern::tconv2d_bwd(t.value(input), t.value(weight), g, stride, padding, din, dw, db);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::batch_norm2d(Id input, Id gamma, Id beta,
                                             TensorT<T>* running_mean,
                                             TensorT<T>* running_var, T momentum, T eps,
                                             bool training) {
  const auto& x = value(input);
  const auto& g = value(gamma);
  const auto& b = value(beta);
  const bool w = needs(input) || needs(gamma) || needs(beta);
  if (training) {
    auto saved = std::make_shared<kern::NormStats<T>>();
    TensorT<T> out =
        kern::batchnorm_fwd_train(x, g, b, running_mean, running_var, momentum, eps, saved.get());
    debug_check_finite(out, "batch_norm2d");
    Id id = push(std::move(out), w, nullptr);
    if (grad_enabled_ && w)
      nodes_.back().backprop = [input, gamma, beta, saved, id](TapeT& t) {
        const auto& gy = t.grad(id);
        TensorT<T>* dx = t.needs(input) ? &t.gradbuf(input) : nullptr;
        TensorT<T>* dg = t.needs(gamma) ? &t.gradbuf(gamma) : nullptr;
        TensorT<T>* db = t.needs(beta) ? &t.gradbuf(beta) : nullptr;
        kern::batchnorm_bwd_train(t.value(input), t.value(gamma), *saved, gy, dx, dg, db);
      };
    return id;
  }
  if (!running_mean || !running_var)
    throw InvalidArgument("batch_norm2d: eval mode requires running statistics");
  // snapshot so later updates cannot alias the closure
  auto rm = std::make_shared<TensorT<T>>(*running_mean);
  auto rv = std::make_shared<TensorT<T>>(*running_var);
  TensorT<T> out = kern::batchnorm_fwd_eval(x, g, b, *rm, *rv, eps);
  debug_check_finite(out, "batch_norm2d");
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, gamma, beta, rm, rv, eps, id](TapeT& t) {
      const auto& gy = t.grad(id);
      TensorT<T>* dx = t.needs(input) ? &t.gradbuf(input) : nullptr;
      TensorT<T>* dg = t.needs(gamma) ? &t.gradbuf(gamma) : nullptr;
      TensorT<T>* db = t.needs(beta) ? &t.gradbuf(beta) : nullptr;
      kern::batchnorm_bwd_eval(t.value(input), t.value(gamma), *rm, *rv, eps, gy, dx, dg, db);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::instance_norm2d(Id input, Id gamma, Id beta, T eps) {
  const auto& x = value(input);
  const auto& g = value(gamma);
  const auto& b = value(beta);
  const bool w = needs(input) || needs(gamma) || needs(beta);
  auto saved = std::make_shared<kern::NormStats<T>>();
  TensorT<T> out = kern::instancenorm_fwd(x, g, b, eps, saved.get());
  debug_check_finite(out, "instance_norm2d");
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, gamma, beta, saved, id](TapeT& t) {
      const auto& gy = t.grad(id);
      TensorT<T>* dx = t.needs(input) ? &t.gradbuf(input) : nullptr;
      TensorT<T>* dg = t.needs(gamma) ? &t.gradbuf(gamma) : nullptr;
      TensorT<T>* db = t.needs(beta) ? &t.gradbuf(beta) : nullptr;
      kern::instancenorm_bwd(t.value(input), t.value(gamma), *saved, gy, dx, dg, db);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::leaky_relu(Id input, T slope) {
  const auto& x = value(input);
  TensorT<T> out(x.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = x.data[i] > T(0) ? x.data[i] : slope * x.data[i];
  const bool w = needs(input);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, slope, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& x2 = t.value(input);
      auto& dx = t.gradbuf(input);
      // derivative at exactly 0 is the slope
      for (std::size_t i = 0; i < g.data.size(); ++i)
        dx.data[i] += g.data[i] * (x2.data[i] > T(0) ? T(1) : slope);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::relu(Id input) {
  return leaky_relu(input, T(0));
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::tanh_act(Id input) {
  const auto& x = value(input);
  TensorT<T> out(x.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::tanh(x.data[i]);
  const bool w = needs(input);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& y = t.value(id);
      auto& dx = t.gradbuf(input);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        dx.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sigmoid(Id input) {
  const auto& x = value(input);
  TensorT<T> out(x.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = stable_sigmoid(x.data[i]);
  const bool w = needs(input);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, id](TapeT& t) {
      const auto& g = t.grad(id);
      const auto& y = t.value(id);
      auto& dx = t.gradbuf(input);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        dx.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::dropout(Id input, T p, Rng& rng, bool active) {
  if (p < T(0) || p >= T(1))
    throw InvalidArgument("dropout: p must be in [0, 1), got " + std::to_string(p));
  const auto& x = value(input);
  const bool w = needs(input);
  if (!active || p == T(0)) {
    TensorT<T> out = x;
    Id id = push(std::move(out), w, nullptr);
    if (grad_enabled_ && w)
      nodes_.back().backprop = [input, id](TapeT& t) {
        const auto& g = t.grad(id);
        auto& dx = t.gradbuf(input);
        for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
      };
    return id;
  }
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.data.size());
  const double pd = static_cast<double>(p);
  for (auto& m : *mask) m = rng.uniform() < pd ? 0 : 1;
  const T keep_scale = T(1) / (T(1) - p);
  TensorT<T> out(x.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (*mask)[i] ? x.data[i] * keep_scale : T(0);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [input, mask, keep_scale, id](TapeT& t) {
      const auto& g = t.grad(id);
      auto& dx = t.gradbuf(input);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if ((*mask)[i]) dx.data[i] += g.data[i] * keep_scale;
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::concat_channels(Id a, Id b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.ndim() != 4 || vb.ndim() != 4)
    throw ShapeError("concat_channels: expected NCHW, got " + dims_to_string(va.dims) + " and " +
                     dims_to_string(vb.dims));
  if (va.dims[0] != vb.dims[0] || va.dims[2] != vb.dims[2] || va.dims[3] != vb.dims[3])
    throw_shape_mismatch("concat_channels", va.dims, vb.dims);
  const int N = va.dims[0], Ca = va.dims[1], Cb = vb.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(va.dims[2]) * va.dims[3];
  TensorT<T> out({N, Ca + Cb, va.dims[2], va.dims[3]});
  for (int n = 0; n < N; ++n) {
    std::copy_n(va.data.data() + static_cast<std::size_t>(n) * Ca * plane, Ca * plane,
                out.data.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane);
    std::copy_n(vb.data.data() + static_cast<std::size_t>(n) * Cb * plane, Cb * plane,
                out.data.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane);
  }
  const bool w = needs(a) || needs(b);
  Id id = push(std::move(out), w, nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [a, b, N, Ca, Cb, plane, id](TapeT& t) {
      const auto& g = t.grad(id);
      if (t.needs(a)) {
        auto& da = t.gradbuf(a);
        for (int n = 0; n < N; ++n) {
          const T* src = g.data.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane;
          T* dst = da.data.data() + static_cast<std::size_t>(n) * Ca * plane;
          for (std::int64_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
        }
      }
      if (t.needs(b)) {
        auto& db = t.gradbuf(b);
        for (int n = 0; n < N; ++n) {
          const T* src =
              g.data.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane;
          T* dst = db.data.data() + static_cast<std::size_t>(n) * Cb * plane;
          for (std::int64_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
        }
      }
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::bce_with_logits(Id logits, T target) {
  const auto& x = value(logits);
  const T inv = T(1) / static_cast<T>(x.numel());
  double s = 0.0;
  for (const T& v : x.data)
    s += static_cast<double>(target * softplus(-v) + (T(1) - target) * softplus(v));
  const bool w = needs(logits);
  Id id = push(TensorT<T>::scalar(static_cast<T>(s / static_cast<double>(x.numel()))), w,
               nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [logits, target, inv, id](TapeT& t) {
      const T g = t.grad(id).data[0] * inv;
      const auto& x2 = t.value(logits);
      auto& dx = t.gradbuf(logits);
      for (std::size_t i = 0; i < dx.data.size(); ++i)
        dx.data[i] += g * (stable_sigmoid(x2.data[i]) - target);
    };
  return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::log_one_minus_sigmoid_mean(Id logits) {
  const auto& x = value(logits);
  const T inv = T(1) / static_cast<T>(x.numel());
  double s = 0.0;
  for (const T& v : x.data) s -= static_cast<double>(softplus(v));
  const bool w = needs(logits);
  Id id = push(TensorT<T>::scalar(static_cast<T>(s / static_cast<double>(x.numel()))), w,
               nullptr);
  if (grad_enabled_ && w)
    nodes_.back().backprop = [logits, inv, id](TapeT& t) {
      const T g = t.grad(id).data[0] * inv;
      const auto& x2 = t.value(logits);
      auto& dx = t.gradbuf(logits);
      for (std::size_t i = 0; i < dx.data.size(); ++i)
        dx.data[i] -= g * stable_sigmoid(x2.data[i]);
    };
  return id;
}

template <typename T>
void TapeT<T>::backward(Id loss) {
  if (!grad_enabled_) throw Error("backward: tape was created with gradients disabled");
  if (backward_done_) throw Error("backward: already run on this tape");
  const auto& lv = value(loss);
  if (!lv.is_scalar())
    throw Error("backward: loss must be scalar, got " + dims_to_string(lv.dims));
  backward_done_ = true;
  gradbuf(loss).data[0] = T(1);
  for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backprop || !n.needs) continue;
    if (n.grad.data.empty()) continue;  // not reachable from the loss
    n.backprop(*this);
  }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace oxygan
