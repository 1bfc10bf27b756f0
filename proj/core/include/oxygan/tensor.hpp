#pragma once

#include <cstdint>
#include <vector>

#include "oxygan/common.hpp"
#include "oxygan/rng.hpp"

namespace oxygan {

// Dense row-major n-d array, NCHW for images. The universal value type:
// parameters, activations, images and loss scalars are all TensorT.
template <typename T>
struct TensorT {
  std::vector<int> dims;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> d) : dims(std::move(d)) {
    data.assign(static_cast<std::size_t>(checked_numel(dims)), T(0));
  }

  static std::int64_t checked_numel(const std::vector<int>& dims);

  static TensorT zeros(std::vector<int> d) { return TensorT(std::move(d)); }

  static TensorT full(std::vector<int> d, T v) {
    TensorT t(std::move(d));
    for (auto& x : t.data) x = v;
    return t;
  }

  static TensorT scalar(T v) { return full({1}, v); }

  static TensorT from_data(std::vector<int> d, std::vector<T> values) {
    if (checked_numel(d) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("from_data: " + dims_to_string(d) + " does not hold " +
                       std::to_string(values.size()) + " values");
    TensorT t;
    t.dims = std::move(d);
    t.data = std::move(values);
    return t;
  }

  static TensorT randn(std::vector<int> d, Rng& rng, T mean = T(0), T stddev = T(1)) {
    TensorT t(std::move(d));
    for (auto& x : t.data) x = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  static TensorT uniform(std::vector<int> d, Rng& rng, T lo, T hi) {
    TensorT t(std::move(d));
    for (auto& x : t.data) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }
  bool same_shape(const TensorT& o) const { return dims == o.dims; }
  bool is_scalar() const { return numel() == 1; }
  T scalar_value() const {
    if (!is_scalar()) throw ShapeError("scalar_value on " + dims_to_string(dims));
    return data[0];
  }

  // NCHW accessors; no bounds checks in release.
  T& at4(int n, int c, int h, int w) {
    return data[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(n) * dims[1] + c) * dims[2] + h) * dims[3] + w)];
  }
  const T& at4(int n, int c, int h, int w) const {
    return const_cast<TensorT*>(this)->at4(n, c, h, w);
  }
  T& at3(int c, int h, int w) {
    return data[static_cast<std::size_t>(
        (static_cast<std::int64_t>(c) * dims[1] + h) * dims[2] + w)];
  }
  const T& at3(int c, int h, int w) const {
    return const_cast<TensorT*>(this)->at3(c, h, w);
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool all_finite() const;
  T min_value() const;
  T max_value() const;
};

using Tensor = TensorT<float>;
using TensorF64 = TensorT<double>;

// Channel slice [from, to) of a CHW or NCHW tensor (channel axis = ndim-3).
template <typename T>
TensorT<T> take_channels(const TensorT<T>& t, int from, int to);

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template TensorT<float> take_channels(const TensorT<float>&, int, int);
extern template TensorT<double> take_channels(const TensorT<double>&, int, int);

}  // namespace oxygan
