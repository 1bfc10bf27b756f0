#pragma once

#include <vector>

#include "oxygan/tensor.hpp"

namespace oxygan::kern {

// conv2d: input NCHW, weight OIKK, out N O OH OW with
// OH = (H + 2p - K)/s + 1. conv_transpose2d weight is IOKK (input
// channels first) and is exactly the adjoint: its forward equals
// conv2d's input-gradient computation.

struct ConvGeom {
  int N, Cin, H, W;
  int Cout, K;
  int stride, pad;
  int OH, OW;
};

ConvGeom conv2d_geom(const std::vector<int>& in_dims, const std::vector<int>& w_dims,
                     int stride, int pad);
ConvGeom tconv2d_geom(const std::vector<int>& in_dims, const std::vector<int>& w_dims,
                      int stride, int pad);

template <typename T>
TensorT<T> conv2d_fwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>* bias,
                      int stride, int pad);

// Gradients accumulate (+=) into whichever of din/dw/dbias is non-null;
// buffers must already have the right shape.
template <typename T>
void conv2d_bwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& dout,
                int stride, int pad, TensorT<T>* din, TensorT<T>* dw, TensorT<T>* dbias);

template <typename T>
TensorT<T> tconv2d_fwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>* bias,
                       int stride, int pad);

template <typename T>
void tconv2d_bwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& dout,
                 int stride, int pad, TensorT<T>* din, TensorT<T>* dw, TensorT<T>* dbias);

// Per-channel batch statistics saved by the training forward for backward.
template <typename T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> invstd;
};

template <typename T>
TensorT<T> batchnorm_fwd_train(const TensorT<T>& x, const TensorT<T>& gamma,
                               const TensorT<T>& beta, TensorT<T>* running_mean,
                               TensorT<T>* running_var, T momentum, T eps,
                               NormStats<T>* saved);

template <typename T>
TensorT<T> batchnorm_fwd_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, const TensorT<T>& running_mean,
                              const TensorT<T>& running_var, T eps);

template <typename T>
void batchnorm_bwd_train(const TensorT<T>& x, const TensorT<T>& gamma,
                         const NormStats<T>& saved, const TensorT<T>& dout,
                         TensorT<T>* dx, TensorT<T>* dgamma, TensorT<T>* dbeta);

template <typename T>
void batchnorm_bwd_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                        const TensorT<T>& running_mean, const TensorT<T>& running_var,
                        T eps, const TensorT<T>& dout, TensorT<T>* dx,
                        TensorT<T>* dgamma, TensorT<T>* dbeta);

// Instance norm: stats per (n, c) over H*W; no running buffers.
template <typename T>
TensorT<T> instancenorm_fwd(const TensorT<T>& x, const TensorT<T>& gamma,
                            const TensorT<T>& beta, T eps, NormStats<T>* saved);

template <typename T>
void instancenorm_bwd(const TensorT<T>& x, const TensorT<T>& gamma,
                      const NormStats<T>& saved, const TensorT<T>& dout, TensorT<T>* dx,
                      TensorT<T>* dgamma, TensorT<T>* dbeta);

}  // namespace oxygan::kern
