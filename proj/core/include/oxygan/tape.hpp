#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "oxygan/kernels.hpp"
#include "oxygan/rng.hpp"
#include "oxygan/tensor.hpp"

namespace oxygan {

// Reverse-mode gradient tape. Nodes are appended in forward order and hold
// the op's value; backward() walks them in strict reverse append order
// exactly once. Tensors enter a tape as leaves (a node handle is the
// spec's tape_id); each tape owns its value and gradient buffers, so two
// tapes never alias.
//
// Instantiated for float (training/inference) and double (the shadow mode
// used by finite-difference gradient checks).
template <typename T>
class TapeT {
 public:
  using Id = std::int32_t;

  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  Id leaf(TensorT<T> value, bool requires_grad = false);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, T c);
  Id sum_all(Id a);
  Id mean_all(Id a);
  Id abs_all(Id a);
  Id square(Id a);

  Id conv2d(Id input, Id weight, std::optional<Id> bias, int stride, int padding);
  Id conv_transpose2d(Id input, Id weight, std::optional<Id> bias, int stride, int padding);

  // Training mode normalizes with batch statistics and, when running
  // buffers are supplied, folds them in with `momentum`. Eval mode
  // normalizes with the running buffers (required then).
  Id batch_norm2d(Id input, Id gamma, Id beta, TensorT<T>* running_mean,
                  TensorT<T>* running_var, T momentum, T eps, bool training);
  Id instance_norm2d(Id input, Id gamma, Id beta, T eps);

  Id leaky_relu(Id input, T slope);
  Id relu(Id input);
  Id tanh_act(Id input);
  Id sigmoid(Id input);

  // active: zero each element w.p. p, scale survivors by 1/(1-p).
  // inactive: identity. Mask order consumes one uniform per element.
  Id dropout(Id input, T p, Rng& rng, bool active);

  Id concat_channels(Id a, Id b);

  // mean over all elements of t*softplus(-x) + (1-t)*softplus(x)
  Id bce_with_logits(Id logits, T target);
  // mean of log(1 - sigmoid(x)) = -softplus(x); the literal min-max
  // generator objective
  Id log_one_minus_sigmoid_mean(Id logits);

  void backward(Id loss);

  const TensorT<T>& value(Id id) const { return nodes_[check(id)].value; }
  // Zeros until backward touches the node.
  const TensorT<T>& grad(Id id) const;
  bool requires_grad(Id id) const { return nodes_[check(id)].needs; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<T> value;
    mutable TensorT<T> grad;  // lazily sized
    std::function<void(TapeT&)> backprop;
    bool needs = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;

  std::size_t check(Id id) const;
  Id push(TensorT<T> value, bool needs, std::function<void(TapeT&)> bp);
  bool needs(Id id) const { return nodes_[check(id)].needs; }
  TensorT<T>& gradbuf(Id id);
  Id unary_elementwise(Id a, const std::function<T(T)>& f,
                       const std::function<T(T, T)>& dfdx_from_x_y);
};

using Tape = TapeT<float>;
using TapeF64 = TapeT<double>;

extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace oxygan
