#include "oxygan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace oxygan::kern {

namespace {

// C (MxN) = or += A (MxK) * B (KxN)
template <typename T>
void gemm_nn(int M, int N, int K, const T* __restrict A, const T* __restrict B,
             T* __restrict C, bool acc) {
  if (!acc) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * K;
    T* c = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C (MxN) += A (MxP) * B^T, B stored (NxP)
template <typename T>
void gemm_abt(int M, int N, int P, const T* __restrict A, const T* __restrict B,
              T* __restrict C) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * P;
    T* c = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * P;
      T s = T(0);
      for (int p = 0; p < P; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C (MxN) = A^T * B, A stored (PxM), B stored (PxN)
template <typename T>
void gemm_atb(int M, int N, int P, const T* __restrict A, const T* __restrict B,
              T* __restrict C) {
  std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
  for (int p = 0; p < P; ++p) {
    const T* a = A + static_cast<std::size_t>(p) * M;
    const T* b = B + static_cast<std::size_t>(p) * N;
    for (int i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// col is (C*K*K) x (OH*OW); grid positions sample im at y*s-p+ky, x*s-p+kx
template <typename T>
void im2col(const T* im, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
            T* col) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* dst = col + (static_cast<std::size_t>((c * K + ky) * K + kx)) * OH * OW;
        for (int y = 0; y < OH; ++y) {
          const int iy = y * stride - pad + ky;
          T* row = dst + static_cast<std::size_t>(y) * OW;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + OW, T(0));
            continue;
          }
          const T* src = im + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int x = 0; x < OW; ++x) {
            const int ix = x * stride - pad + kx;
            row[x] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

// adjoint of im2col: scatter-add back into the image
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int K, int stride, int pad, int OH,
                int OW, T* im) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* src = col + (static_cast<std::size_t>((c * K + ky) * K + kx)) * OH * OW;
        for (int y = 0; y < OH; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = im + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* row = src + static_cast<std::size_t>(y) * OW;
          for (int x = 0; x < OW; ++x) {
            const int ix = x * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[x];
          }
        }
      }
}

void check_4d(const char* op, const std::vector<int>& d) {
  if (d.size() != 4)
    throw ShapeError(std::string(op) + ": expected 4-d NCHW, got " + dims_to_string(d));
}

}  // namespace

ConvGeom conv2d_geom(const std::vector<int>& in_dims, const std::vector<int>& w_dims,
                     int stride, int pad) {
  check_4d("conv2d input", in_dims);
  check_4d("conv2d weight", w_dims);
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  if (pad < 0) throw InvalidArgument("conv2d: padding must be >= 0");
  if (w_dims[2] != w_dims[3])
    throw ShapeError("conv2d: non-square kernel " + dims_to_string(w_dims));
  if (in_dims[1] != w_dims[1])
    throw ShapeError("conv2d: input channels " + dims_to_string(in_dims) +
                     " do not match weight " + dims_to_string(w_dims));
  ConvGeom g;
  g.N = in_dims[0];
  g.Cin = in_dims[1];
  g.H = in_dims[2];
  g.W = in_dims[3];
  g.Cout = w_dims[0];
  g.K = w_dims[2];
  g.stride = stride;
  g.pad = pad;
  g.OH = (g.H + 2 * pad - g.K) / stride + 1;
  g.OW = (g.W + 2 * pad - g.K) / stride + 1;
  if (g.H + 2 * pad < g.K || g.W + 2 * pad < g.K)
    throw ShapeError("conv2d: kernel " + dims_to_string(w_dims) + " larger than padded input " +
                     dims_to_string(in_dims));
  return g;
}

ConvGeom tconv2d_geom(const std::vector<int>& in_dims, const std::vector<int>& w_dims,
                      int stride, int pad) {
  check_4d("conv_transpose2d input", in_dims);
  check_4d("conv_transpose2d weight", w_dims);
  if (stride < 1) throw InvalidArgument("conv_transpose2d: stride must be >= 1");
  if (pad < 0) throw InvalidArgument("conv_transpose2d: padding must be >= 0");
  if (w_dims[2] != w_dims[3])
    throw ShapeError("conv_transpose2d: non-square kernel " + dims_to_string(w_dims));
  if (in_dims[1] != w_dims[0])
    throw ShapeError("conv_transpose2d: input channels " + dims_to_string(in_dims) +
                     " do not match weight (IOKK) " + dims_to_string(w_dims));
  ConvGeom g;
  g.N = in_dims[0];
  g.Cin = in_dims[1];   // transpose input channels = weight I
  g.H = in_dims[2];
  g.W = in_dims[3];
  g.Cout = w_dims[1];   // weight O
  g.K = w_dims[2];
  g.stride = stride;
  g.pad = pad;
  g.OH = (g.H - 1) * stride - 2 * pad + g.K;
  g.OW = (g.W - 1) * stride - 2 * pad + g.K;
  if (g.OH <= 0 || g.OW <= 0)
    throw ShapeError("conv_transpose2d: empty output for input " + dims_to_string(in_dims));
  return g;
}

template <typename T>
TensorT<T> conv2d_fwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>* bias,
                      int stride, int pad) {
  const ConvGeom g = conv2d_geom(in.dims, w.dims, stride, pad);
  if (bias && bias->numel() != g.Cout)
    throw ShapeError("conv2d: bias " + dims_to_string(bias->dims) + " does not match " +
                     std::to_string(g.Cout) + " output channels");
  TensorT<T> out({g.N, g.Cout, g.OH, g.OW});
  const int R = g.Cin * g.K * g.K;
  const int P = g.OH * g.OW;
  std::vector<T> col(static_cast<std::size_t>(R) * P);
  for (int n = 0; n < g.N; ++n) {
    const T* im = in.data.data() + static_cast<std::size_t>(n) * g.Cin * g.H * g.W;
    T* dst = out.data.data() + static_cast<std::size_t>(n) * g.Cout * P;
    im2col(im, g.Cin, g.H, g.W, g.K, stride, pad, g.OH, g.OW, col.data());
    gemm_nn(g.Cout, P, R, w.data.data(), col.data(), dst, false);
    if (bias)
      for (int o = 0; o < g.Cout; ++o) {
        const T b = bias->data[static_cast<std::size_t>(o)];
        T* row = dst + static_cast<std::size_t>(o) * P;
        for (int j = 0; j < P; ++j) row[j] += b;
      }
  }
  return out;
}

template <typename T>
void conv2d_bwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& dout,
                int stride, int pad, TensorT<T>* din, TensorT<T>* dw, TensorT<T>* dbias) {
  const ConvGeom g = conv2d_geom(in.dims, w.dims, stride, pad);
  const int R = g.Cin * g.K * g.K;
  const int P = g.OH * g.OW;
  std::vector<T> col(static_cast<std::size_t>(R) * P);
  std::vector<T> dcol(din ? col.size() : 0);
  for (int n = 0; n < g.N; ++n) {
    const T* im = in.data.data() + static_cast<std::size_t>(n) * g.Cin * g.H * g.W;
    const T* dy = dout.data.data() + static_cast<std::size_t>(n) * g.Cout * P;
    if (dw) {
      im2col(im, g.Cin, g.H, g.W, g.K, stride, pad, g.OH, g.OW, col.data());
      gemm_abt(g.Cout, R, P, dy, col.data(), dw->data.data());
    }
    if (din) {
      gemm_atb(R, P, g.Cout, w.data.data(), dy, dcol.data());
      col2im_add(dcol.data(), g.Cin, g.H, g.W, g.K, stride, pad, g.OH, g.OW,
                 din->data.data() + static_cast<std::size_t>(n) * g.Cin * g.H * g.W);
    }
    if (dbias)
      for (int o = 0; o < g.Cout; ++o) {
        const T* row = dy + static_cast<std::size_t>(o) * P;
        T s = T(0);
        for (int j = 0; j < P; ++j) s += row[j];
        dbias->data[static_cast<std::size_t>(o)] += s;
      }
  }
}

template <typename T>
TensorT<T> tconv2d_fwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>* bias,
                       int stride, int pad) {
  const ConvGeom g = tconv2d_geom(in.dims, w.dims, stride, pad);
  if (bias && bias->numel() != g.Cout)
    throw ShapeError("conv_transpose2d: bias " + dims_to_string(bias->dims) +
                     " does not match " + std::to_string(g.Cout) + " output channels");
  TensorT<T> out({g.N, g.Cout, g.OH, g.OW});
  const int R = g.Cout * g.K * g.K;
  const int Pin = g.H * g.W;
  std::vector<T> col(static_cast<std::size_t>(R) * Pin);
  for (int n = 0; n < g.N; ++n) {
    const T* src = in.data.data() + static_cast<std::size_t>(n) * g.Cin * Pin;
    T* im = out.data.data() + static_cast<std::size_t>(n) * g.Cout * g.OH * g.OW;
    // col = W^T (R x Cin) * in_n (Cin x Pin), then scatter
    gemm_atb(R, Pin, g.Cin, w.data.data(), src, col.data());
    col2im_add(col.data(), g.Cout, g.OH, g.OW, g.K, stride, pad, g.H, g.W, im);
    if (bias)
      for (int o = 0; o < g.Cout; ++o) {
        const T b = bias->data[static_cast<std::size_t>(o)];
        T* row = im + static_cast<std::size_t>(o) * g.OH * g.OW;
        for (int j = 0; j < g.OH * g.OW; ++j) row[j] += b;
      }
  }
  return out;
}

template <typename T>
void tconv2d_bwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& dout,
                 int stride, int pad, TensorT<T>* din, TensorT<T>* dw, TensorT<T>* dbias) {
  const ConvGeom g = tconv2d_geom(in.dims, w.dims, stride, pad);
  const int R = g.Cout * g.K * g.K;
  const int Pin = g.H * g.W;
  const int Pout = g.OH * g.OW;
  std::vector<T> col(static_cast<std::size_t>(R) * Pin);
  for (int n = 0; n < g.N; ++n) {
    const T* dy = dout.data.data() + static_cast<std::size_t>(n) * g.Cout * Pout;
    im2col(dy, g.Cout, g.OH, g.OW, g.K, stride, pad, g.H, g.W, col.data());
    if (din)
      gemm_nn(g.Cin, Pin, R, w.data.data(), col.data(),
              din->data.data() + static_cast<std::size_t>(n) * g.Cin * Pin, true);
    if (dw)
      gemm_abt(g.Cin, R, Pin, in.data.data() + static_cast<std::size_t>(n) * g.Cin * Pin,
               col.data(), dw->data.data());
    if (dbias)
      for (int o = 0; o < g.Cout; ++o) {
        const T* row = dy + static_cast<std::size_t>(o) * Pout;
        T s = T(0);
        for (int j = 0; j < Pout; ++j) s += row[j];
        dbias->data[static_cast<std::size_t>(o)] += s;
      }
  }
}

namespace {

template <typename T>
void check_norm_shapes(const char* op, const TensorT<T>& x, const TensorT<T>& gamma,
                       const TensorT<T>& beta) {
  check_4d(op, x.dims);
  const int C = x.dims[1];
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError(std::string(op) + ": affine params " + dims_to_string(gamma.dims) + "/" +
                     dims_to_string(beta.dims) + " do not match " + std::to_string(C) +
                     " channels");
}

}  // namespace

template <typename T>
TensorT<T> batchnorm_fwd_train(const TensorT<T>& x, const TensorT<T>& gamma,
                               const TensorT<T>& beta, TensorT<T>* running_mean,
                               TensorT<T>* running_var, T momentum, T eps,
                               NormStats<T>* saved) {
  check_norm_shapes("batch_norm2d", x, gamma, beta);
  const int N = x.dims[0], C = x.dims[1], H = x.dims[2], W = x.dims[3];
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
  if (m <= 1)
    throw InvalidArgument("batch_norm2d: normalization set for each channel has " +
                          std::to_string(m) + " element(s); variance is degenerate");
  TensorT<T> out(x.dims);
  if (saved) {
    saved->mean.assign(static_cast<std::size_t>(C), T(0));
    saved->invstd.assign(static_cast<std::size_t>(C), T(0));
  }
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double sum = 0, sumsq = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum += p[i];
        sumsq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double mean = sum / static_cast<double>(m);
    const double var = sumsq / static_cast<double>(m) - mean * mean;
    const T invstd = static_cast<T>(1.0 / std::sqrt(std::max(var, 0.0) + static_cast<double>(eps)));
    const T g = gamma.data[static_cast<std::size_t>(c)];
    const T b = beta.data[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* q = out.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = g * ((p[i] - static_cast<T>(mean)) * invstd) + b;
    }
    if (saved) {
      saved->mean[static_cast<std::size_t>(c)] = static_cast<T>(mean);
      saved->invstd[static_cast<std::size_t>(c)] = invstd;
    }
    if (running_mean && running_var) {
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      auto& rm = running_mean->data[static_cast<std::size_t>(c)];
      auto& rv = running_var->data[static_cast<std::size_t>(c)];
      rm = static_cast<T>((1 - momentum) * rm + momentum * static_cast<T>(mean));
      rv = static_cast<T>((1 - momentum) * rv + momentum * static_cast<T>(unbiased));
    }
  }
  return out;
}

template <typename T>
TensorT<T> batchnorm_fwd_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, const TensorT<T>& running_mean,
                              const TensorT<T>& running_var, T eps) {
  check_norm_shapes("batch_norm2d", x, gamma, beta);
  const int N = x.dims[0], C = x.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(x.dims[2]) * x.dims[3];
  TensorT<T> out(x.dims);
  for (int c = 0; c < C; ++c) {
    const T invstd = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var.data[static_cast<std::size_t>(c)]) +
                        static_cast<double>(eps)));
    const T mean = running_mean.data[static_cast<std::size_t>(c)];
    const T g = gamma.data[static_cast<std::size_t>(c)];
    const T b = beta.data[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* q = out.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) q[i] = g * ((p[i] - mean) * invstd) + b;
    }
  }
  return out;
}

template <typename T>
void batchnorm_bwd_train(const TensorT<T>& x, const TensorT<T>& gamma,
                         const NormStats<T>& saved, const TensorT<T>& dout,
                         TensorT<T>* dx, TensorT<T>* dgamma, TensorT<T>* dbeta) {
  const int N = x.dims[0], C = x.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(x.dims[2]) * x.dims[3];
  const std::int64_t m = static_cast<std::int64_t>(N) * plane;
  for (int c = 0; c < C; ++c) {
    const T mean = saved.mean[static_cast<std::size_t>(c)];
    const T invstd = saved.invstd[static_cast<std::size_t>(c)];
    const T g = gamma.data[static_cast<std::size_t>(c)];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* px = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* pdy = dout.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xhat = (px[i] - mean) * invstd;
        sum_dy += pdy[i];
        sum_dy_xhat += static_cast<double>(pdy[i]) * xhat;
      }
    }
    if (dgamma) dgamma->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
    if (dx) {
      const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
      for (int n = 0; n < N; ++n) {
        const T* px = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        const T* pdy = dout.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        T* pdx = dx->data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T xhat = (px[i] - mean) * invstd;
          pdx[i] += g * invstd * (pdy[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
  }
}

template <typename T>
void batchnorm_bwd_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                        const TensorT<T>& running_mean, const TensorT<T>& running_var,
                        T eps, const TensorT<T>& dout, TensorT<T>* dx,
                        TensorT<T>* dgamma, TensorT<T>* dbeta) {
  const int N = x.dims[0], C = x.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(x.dims[2]) * x.dims[3];
  for (int c = 0; c < C; ++c) {
    const T mean = running_mean.data[static_cast<std::size_t>(c)];
    const T invstd = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var.data[static_cast<std::size_t>(c)]) +
                        static_cast<double>(eps)));
    const T g = gamma.data[static_cast<std::size_t>(c)];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* px = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* pdy = dout.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* pdx = dx ? dx->data.data() + (static_cast<std::size_t>(n) * C + c) * plane : nullptr;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += static_cast<double>(pdy[i]) * ((px[i] - mean) * invstd);
        if (pdx) pdx[i] += pdy[i] * g * invstd;
      }
    }
    if (dgamma) dgamma->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
  }
}

template <typename T>
TensorT<T> instancenorm_fwd(const TensorT<T>& x, const TensorT<T>& gamma,
                            const TensorT<T>& beta, T eps, NormStats<T>* saved) {
  check_norm_shapes("instance_norm2d", x, gamma, beta);
  const int N = x.dims[0], C = x.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(x.dims[2]) * x.dims[3];
  if (plane <= 1)
    throw InvalidArgument("instance_norm2d: spatial size " + std::to_string(plane) +
                          " is degenerate");
  TensorT<T> out(x.dims);
  if (saved) {
    saved->mean.assign(static_cast<std::size_t>(N) * C, T(0));
    saved->invstd.assign(static_cast<std::size_t>(N) * C, T(0));
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* q = out.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      double sum = 0, sumsq = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum += p[i];
        sumsq += static_cast<double>(p[i]) * p[i];
      }
      const double mean = sum / static_cast<double>(plane);
      const double var = sumsq / static_cast<double>(plane) - mean * mean;
      const T invstd =
          static_cast<T>(1.0 / std::sqrt(std::max(var, 0.0) + static_cast<double>(eps)));
      const T g = gamma.data[static_cast<std::size_t>(c)];
      const T b = beta.data[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = g * ((p[i] - static_cast<T>(mean)) * invstd) + b;
      if (saved) {
        saved->mean[static_cast<std::size_t>(n) * C + c] = static_cast<T>(mean);
        saved->invstd[static_cast<std::size_t>(n) * C + c] = invstd;
      }
    }
  return out;
}

template <typename T>
void instancenorm_bwd(const TensorT<T>& x, const TensorT<T>& gamma,
                      const NormStats<T>& saved, const TensorT<T>& dout, TensorT<T>* dx,
                      TensorT<T>* dgamma, TensorT<T>* dbeta) {
  const int N = x.dims[0], C = x.dims[1];
  const std::int64_t plane = static_cast<std::int64_t>(x.dims[2]) * x.dims[3];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T mean = saved.mean[static_cast<std::size_t>(n) * C + c];
      const T invstd = saved.invstd[static_cast<std::size_t>(n) * C + c];
      const T g = gamma.data[static_cast<std::size_t>(c)];
      const T* px = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* pdy = dout.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xhat = (px[i] - mean) * invstd;
        sum_dy += pdy[i];
        sum_dy_xhat += static_cast<double>(pdy[i]) * xhat;
      }
      if (dgamma) dgamma->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
      if (dbeta) dbeta->data[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
      if (dx) {
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(plane));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(plane));
        T* pdx = dx->data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T xhat = (px[i] - mean) * invstd;
          pdx[i] += g * invstd * (pdy[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
}

#define OXYGAN_INSTANTIATE_KERNELS(T)                                                        \
  template TensorT<T> conv2d_fwd<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*, \
                                    int, int);                                               \
  template void conv2d_bwd<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,  \
                              int, TensorT<T>*, TensorT<T>*, TensorT<T>*);                   \
  template TensorT<T> tconv2d_fwd<T>(const TensorT<T>&, const TensorT<T>&,                   \
                                     const TensorT<T>*, int, int);                           \
  template void tconv2d_bwd<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, \
                               int, TensorT<T>*, TensorT<T>*, TensorT<T>*);                  \
  template TensorT<T> batchnorm_fwd_train<T>(const TensorT<T>&, const TensorT<T>&,           \
                                             const TensorT<T>&, TensorT<T>*, TensorT<T>*, T, \
                                             T, NormStats<T>*);                              \
  template TensorT<T> batchnorm_fwd_eval<T>(const TensorT<T>&, const TensorT<T>&,            \
                                            const TensorT<T>&, const TensorT<T>&,            \
                                            const TensorT<T>&, T);                           \
  template void batchnorm_bwd_train<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                       const NormStats<T>&, const TensorT<T>&, TensorT<T>*,  \
                                       TensorT<T>*, TensorT<T>*);                            \
  template void batchnorm_bwd_eval<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                      const TensorT<T>&, const TensorT<T>&, T,               \
                                      const TensorT<T>&, TensorT<T>*, TensorT<T>*,           \
                                      TensorT<T>*);                                          \
  template TensorT<T> instancenorm_fwd<T>(const TensorT<T>&, const TensorT<T>&,              \
                                          const TensorT<T>&, T, NormStats<T>*);              \
  template void instancenorm_bwd<T>(const TensorT<T>&, const TensorT<T>&,                    \
                                    const NormStats<T>&, const TensorT<T>&, TensorT<T>*,     \
                                    TensorT<T>*, TensorT<T>*);

OXYGAN_INSTANTIATE_KERNELS(float)
OXYGAN_INSTANTIATE_KERNELS(double)

#undef OXYGAN_INSTANTIATE_KERNELS

}  // namespace oxygan::kern
